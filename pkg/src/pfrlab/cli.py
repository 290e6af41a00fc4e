"""Command-line entry points: ``python -m pfrlab <subcommand>``."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from .audit import baseline_rates, privacy_audit_statistical, privacy_audit_structural, rate_report
from .mds import build_generator, verify_mds
from .protocol import run_session
from .query import SchemeParams, query_set
from .virtual import enumerate_combinations

INT_KEYS = {"n", "k", "m", "q", "nu", "seed", "samples"}


def parse_kv(text: str) -> dict:
    """``key=value`` pairs separated by whitespace, commas or newlines; ``#`` starts a comment."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0]
        for tok in line.replace(",", " ").split():
            if "=" not in tok:
                raise ValueError(f"expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            k = k.strip().lower()
            out[k] = int(v) if k in INT_KEYS else v.strip()
    return out


def read_grid(path: str) -> list[dict]:
    """One parameter set per non-empty line, e.g. ``n=3 k=2 m=2 q=2``."""
    rows = []
    with open(path) as fh:
        for raw in fh:
            if raw.split("#", 1)[0].strip():
                rows.append(parse_kv(raw))
    return rows


def _params(d: dict) -> SchemeParams:
    missing = [k for k in "nkmq" if k not in d]
    if missing:
        raise ValueError(f"missing parameter(s): {', '.join(missing)}")
    return SchemeParams(d["n"], d["k"], d["m"], d["q"])


def _dump(obj):
    def conv(o):
        if isinstance(o, Fraction):
            return str(o)
        if isinstance(o, (set, tuple)):
            return sorted(o) if isinstance(o, set) else list(o)
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o))

    return json.dumps(obj, default=conv, sort_keys=True, indent=2)


def _merge(args, keys) -> dict:
    d = parse_kv(open(args.config).read()) if getattr(args, "config", None) else {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    return d


# --- compact symbolic labels ----------------------------------------------


def _span(a, b):
    return f"{a}" if a == b else f"{a}:{b}"


def compress_atoms(atoms, names) -> list[str]:
    """Fold runs like b5-c13, b6-c14 into ``b_{5:6} - c_{13:14}``."""
    runs = []
    atoms = sorted(atoms, key=lambda a: (a.type, [t.sign for t in a.terms], [t.slot for t in a.terms]))
    for a in atoms:
        shape = tuple((t.theta, t.sign) for t in a.terms)
        slots = [t.slot for t in a.terms]
        last = runs[-1] if runs else None
        if last and last[0] == shape and all(s == e + 1 for s, e in zip(slots, last[2])):
            last[2] = slots
        else:
            runs.append([shape, slots, slots])
    out = []
    for shape, lo, hi in runs:
        parts = []
        for i, ((theta, sign), s, e) in enumerate(zip(shape, lo, hi)):
            op = "-" if sign < 0 else ("+" if i else "")
            parts.append(f"{op}{names[theta - 1]}_{{{_span(s, e)}}}")
        out.append(" ".join(parts).replace(" -", " - ").replace(" +", " + ").lstrip())
    return out


def table1_rows(params: SchemeParams, nu: int):
    """(round, block, db, [compact entries]) for every cell, identity assignment."""
    qs = query_set(params, nu)
    names = [chr(ord("a") + i) for i in range(params.V)] if params.V <= 26 else None
    rows = []
    for R in range(1, params.K + 1):
        for B in range(1, params.V + 1):
            for n in range(1, params.N + 1):
                rows.append((R, B, n, compress_atoms(qs.cell(n, R, B), names)))
    return rows


# --- subcommands -----------------------------------------------------------


def cmd_gen_code(args):
    G = build_generator(args.n, args.k, args.q, seed=args.seed)
    ok = verify_mds(G)
    if args.json:
        print(_dump({"N": args.n, "K": args.k, "q": args.q, "G": G.tolist(), "mds": ok}))
    else:
        print(f"({args.n},{args.k}) MDS generator over F_{args.q}  (verified: {ok})")
        for row in G.tolist():
            print("  " + " ".join(f"{v:>3}" for v in row))
    return 0 if ok else 1


def cmd_run(args):
    d = _merge(args, ["n", "k", "m", "q", "nu", "seed", "transport"])
    p = _params(d)
    tr = run_session(p, d.get("nu", p.V), d.get("seed", 0), d.get("transport", "inproc"))
    if args.transcript:
        with open(args.transcript, "w") as fh:
            fh.write(tr.to_json())
    summary = {"params": p.as_dict(), "nu": tr.nu, "seed": tr.seed, "correct": tr.correct,
               "L": tr.rate["L"], "D": tr.rate["D"], "rate": tr.rate["rate"],
               "closed_form": tr.rate["closed_form"],
               "answers_per_db": {db: len(a) for db, a in tr.answers.items()}}
    if args.json:
        print(_dump(summary))
    else:
        print(f"N={p.N} K={p.K} M={p.M} q={p.q} V={p.V}  nu={tr.nu} seed={tr.seed}")
        for db, a in tr.answers.items():
            print(f"  DB{db}: {len(a)} answers")
        print(f"  L={p.L}  D={summary['D']}  rate={summary['rate']}  closed form={summary['closed_form']}")
        print(f"  decoded W~_nu matches plaintext: {tr.correct}")
    return 0 if tr.correct else 1


def cmd_audit_privacy(args):
    d = _merge(args, ["n", "k", "m", "q", "samples", "seed"])
    p = _params(d)
    st = privacy_audit_structural(p, skip_msym=args.skip_msym)
    res = {"structural": st.to_json()}
    if d.get("samples"):
        pair = tuple(int(x) for x in args.nu_pair.split(",")) if args.nu_pair else (1, p.V)
        tv = privacy_audit_statistical(p, pair, d["samples"], d.get("seed", 0), leak=args.leak)
        res["statistical"] = {"nu_pair": pair, "samples": d["samples"], "leak": args.leak,
                              "tv": {str(db): v for db, v in tv.items()}}
    if args.json:
        print(_dump(res))
    else:
        print(f"N={p.N} K={p.K} M={p.M} q={p.q} V={p.V}" + ("  (m_sym disabled)" if args.skip_msym else ""))
        for db in range(1, p.N + 1):
            fps = {st.fingerprints[nu][db][:12] for nu in st.fingerprints}
            print(f"  DB{db}: {len(fps)} distinct fingerprint(s) over {p.V} combinations")
        print(f"  structural verdict: {'private' if st.verdict else 'NOT private'}")
        if "statistical" in res:
            s = res["statistical"]
            for db, v in s["tv"].items():
                print(f"  DB{db}: TV(nu={s['nu_pair'][0]}, nu={s['nu_pair'][1]}) = {v:.4f}")
    return 0 if (st.verdict != args.skip_msym) else 1


def cmd_rate_table(args):
    rows = []
    for d in read_grid(args.grid):
        p = _params(d)
        r = rate_report(p)
        b = baseline_rates(p)
        rows.append({"params": p.as_dict(), "V": p.V, "L": r.L, "D": r.D, "rate": r.rate,
                     "closed_form": r.closed_form, "baseline": b["baseline"], "ok": r.ok,
                     "first_violation": r.first_violation})
    if args.json:
        print(_dump(rows))
    else:
        print(f"{'N':>2} {'K':>2} {'M':>2} {'q':>2} {'V':>3} {'L':>7} {'D':>8} {'rate':>8} {'closed':>8} {'baseline':>10}  identities")
        for r in rows:
            p = r["params"]
            print(f"{p['N']:>2} {p['K']:>2} {p['M']:>2} {p['q']:>2} {r['V']:>3} {r['L']:>7} {r['D']:>8} "
                  f"{str(r['rate']):>8} {str(r['closed_form']):>8} {str(r['baseline']):>10}  "
                  f"{'ok' if r['ok'] else 'FAIL: ' + r['first_violation']}")
    return 0 if all(r["ok"] for r in rows) else 1


def cmd_example_table1(args):
    p = SchemeParams(3, 2, 2, 2)
    nu = 3
    rows = table1_rows(p, nu)
    if args.json:
        print(_dump([{"round": R, "block": B, "db": n, "entries": e} for R, B, n, e in rows]))
        return 0
    combos = enumerate_combinations(p.q, p.M)
    print("N=3 K=2 M=2 q=2, requested c = a + b, identity permutation, all signs +1")
    print("combinations: " + ", ".join(f"{chr(96 + c.index)}={c}" for c in combos))
    for R, B, n, entries in rows:
        print(f"  ({R},{B}) DB{n}: " + ", ".join(f"g{n}^T({e})" for e in entries))
    qs = query_set(p, nu)
    print(f"retained per DB: {[len(qs.retained(n)) for n in range(1, p.N + 1)]}, total {qs.download_count()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pfrlab", description="Private function retrieval over MDS-coded storage.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-code", help="build and verify an MDS generator")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--q", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_code)

    r = sub.add_parser("run", help="run one retrieval session")
    for k in ("n", "k", "m", "q", "nu", "seed"):
        r.add_argument(f"--{k}", type=int)
    r.add_argument("--transport", choices=["inproc", "socket"])
    r.add_argument("--config", help="key=value file supplying any of the options")
    r.add_argument("--transcript", help="write the session transcript JSON here")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit-privacy", help="structural and sampled privacy audit")
    for k in ("n", "k", "m", "q", "samples", "seed"):
        a.add_argument(f"--{k}", type=int)
    a.add_argument("--nu-pair", help="two combination indices, e.g. 1,3")
    a.add_argument("--skip-msym", action="store_true", help="negative control: drop symmetry sums")
    a.add_argument("--leak", action="store_true", help="negative control: send rows unsorted")
    a.add_argument("--config")
    a.set_defaults(func=cmd_audit_privacy)

    t = sub.add_parser("rate-table", help="exact rate accounting for a grid of parameters")
    t.add_argument("--grid", required=True, help="file with one key=value parameter set per line")
    t.set_defaults(func=cmd_rate_table)

    e = sub.add_parser("example-table1", help="print the N=3, K=2, M=2 worked example")
    e.set_defaults(func=cmd_example_table1)

    for p in (g, r, a, t, e):
        p.add_argument("--json", action="store_true", help="JSON instead of a table")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
