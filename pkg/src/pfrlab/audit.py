"""Rate accounting, privacy audits, baselines and the two-combination outer bound."""

from __future__ import annotations

import collections
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from .canonical import fingerprint, multiset_form, observed_form
from .plan import compiled_plan
from .query import DESIRED, QuerySet, SchemeParams, query_set
from .virtual import IndexAssignment, make_index_assignment


class RateIdentityError(AssertionError):
    """A counting identity did not hold; carries the first failing line."""


def scheme_rate(N: int, K: int, M: int) -> Fraction:
    """(1 - R_c) / (1 - R_c^M) with R_c = K/N."""
    rc = Fraction(K, N)
    return (1 - rc) / (1 - rc**M)


def _block_census(qs: QuerySet) -> dict:
    p = qs.params
    out = {B: {"retained": 0, "eliminated": 0, "desired": 0,
               "eliminated_types": set(), "types": set()} for B in range(1, p.V + 1)}
    elim = set(qs.relations)
    for a in qs.atoms:
        rec = out[a.block]
        rec["types"].add(a.type)
        if a.kind == DESIRED:
            rec["desired"] += 1
        if a.uid in elim:
            rec["eliminated"] += 1
            rec["eliminated_types"].add(a.type)
        elif qs.retained_mask[a.uid]:
            rec["retained"] += 1
    for rec in out.values():
        rec["eliminated_types"] = len(rec["eliminated_types"])
        rec["types"] = len(rec["types"])
    return out


@dataclass
class RateReport:
    params: SchemeParams
    L: int
    D: int
    rate: Fraction
    closed_form: Fraction
    census: dict
    chain: list = field(default_factory=list)  # (label, expected, got)
    first_violation: str | None = None

    @property
    def ok(self) -> bool:
        return self.first_violation is None

    def to_json(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "L": self.L,
            "D": self.D,
            "rate": str(self.rate),
            "closed_form": str(self.closed_form),
            "census": {str(B): rec for B, rec in self.census.items()},
            "chain": [[lab, str(e), str(g)] for lab, e, g in self.chain],
            "ok": self.ok,
            "first_violation": self.first_violation,
        }

    def table(self) -> str:
        lines = [f"{'line':<52} {'expected':>14} {'got':>14}  ok"]
        for lab, e, g in self.chain:
            lines.append(f"{lab:<52} {str(e):>14} {str(g):>14}  {'yes' if e == g else 'NO'}")
        return "\n".join(lines)


def rate_report(params: SchemeParams, qs: QuerySet | None = None, *, check: bool = False) -> RateReport:
    """Count downloads of a generated query set and check every rate identity exactly."""
    p = params
    if qs is None:
        qs = query_set(p, 1)
    N, K, M, V, Nb = p.N, p.K, p.M, p.V, p.Nb
    census = _block_census(qs)
    D = qs.download_count()
    L = p.L
    rate = Fraction(L, D)
    closed = scheme_rate(N, K, M)
    rc = Fraction(K, N)

    chain = []

    def line(label, expected, got):
        chain.append((label, expected, got))

    # Download count, block by block and summed.
    for v in range(1, V + 1):
        kept = (comb(V, v) - comb(V - M, v)) * K ** (V - v) * Nb ** (v - 1)
        line(f"retained atoms, block {v}", K * N * kept, census[v]["retained"])
        line(f"eliminated types, block {v}", comb(V - M, v), census[v]["eliminated_types"])
    S = sum((comb(V, v) - comb(V - M, v)) * K ** (V - v) * Nb ** (v - 1) for v in range(1, V + 1))
    line("D = K N sum_v (C(V,v)-C(V-M,v)) K^(V-v) Nb^(v-1)", K * N * S, D)
    line("D = K N (N^V - K^M N^(V-M)) / (N-K)",
         Fraction(K * N * (N**V - K**M * N ** (V - M)), Nb), Fraction(D))

    # Rate chain, each line as an exact rational.
    r_a = Fraction(K * N**V, K * N * S)
    line("(a) L / D", r_a, rate)
    den2 = sum(comb(V, v) * K ** (V - v) * Nb**v - comb(V - M, v) * K ** (V - v) * Nb**v
               for v in range(1, V + 1))
    r2 = Fraction(N**V) * (1 - rc) / den2
    line("expand by (N-K)/N", r2, rate)
    den3 = (N**V - K**V) - sum(comb(V - M, v) * K ** (V - v) * Nb**v for v in range(1, V - M + 1))
    r3 = Fraction(N**V) * (1 - rc) / den3
    line("(b) truncate second sum, binomial theorem", r3, rate)
    den4 = (N**V - K**V) - K**M * sum(comb(V - M, v) * K ** (V - M - v) * Nb**v
                                       for v in range(1, V - M + 1))
    line("factor K^M", Fraction(N**V) * (1 - rc) / den4, rate)
    den5 = (N**V - K**V) - K**M * (N ** (V - M) - K ** (V - M))
    line("binomial theorem on second sum", Fraction(N**V) * (1 - rc) / den5, rate)
    den6 = N**V - K**M * N ** (V - M)
    line("cancel K^V", Fraction(N**V) * (1 - rc) / den6, rate)
    line("(1 - R_c)/(1 - R_c^M)", closed, rate)

    # Decodability count: desired atoms over all rounds give exactly L symbols.
    for v in range(1, V + 1):
        want = K * N * (comb(V, v) - comb(V - 1, v)) * K ** (V - v) * Nb ** (v - 1)
        line(f"desired atoms, block {v}", want, census[v]["desired"])
    total_des = sum(rec["desired"] for rec in census.values())
    line("desired symbols = K N^V", L, total_des)
    line("census sums to D", D, sum(rec["retained"] for rec in census.values()))

    first = next((lab for lab, e, g in chain if e != g), None)
    rep = RateReport(p, L, D, rate, closed, census, chain, first)
    if check and first is not None:
        raise RateIdentityError(first)
    return rep


# --- privacy ---------------------------------------------------------------


@dataclass
class PrivacyReport:
    params: SchemeParams
    fingerprints: dict  # nu -> db -> hex digest
    verdict: bool
    tv: dict = field(default_factory=dict)  # (db, nu1, nu2) -> float
    skip_msym: bool = False

    def differing_dbs(self) -> list:
        out = []
        for db in range(1, self.params.N + 1):
            if len({fp[db] for fp in self.fingerprints.values()}) > 1:
                out.append(db)
        return out

    def to_json(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "skip_msym": self.skip_msym,
            "verdict": self.verdict,
            "fingerprints": {str(nu): {str(db): h for db, h in d.items()}
                             for nu, d in self.fingerprints.items()},
            "tv": {f"{db}:{a}:{b}": v for (db, a, b), v in self.tv.items()},
        }


def privacy_audit_structural(params: SchemeParams, *, skip_msym: bool = False,
                             assignment: IndexAssignment | None = None,
                             samples: int = 0, seed: int = 0) -> PrivacyReport:
    """Compare each database's canonical query form across every nu.

    With ``samples`` > 0 the report also carries sampled TV distances for
    every pair of combinations.
    """
    p = params
    A = assignment if assignment is not None else IndexAssignment.identity(p.Lt)
    fps = {}
    for nu in range(1, p.V + 1):
        plan = compiled_plan(query_set(p, nu, skip_msym=skip_msym))
        fps[nu] = {db: fingerprint(multiset_form(plan.lower(db, A)[0])) for db in range(1, p.N + 1)}
    verdict = all(len({fps[nu][db] for nu in fps}) == 1 for db in range(1, p.N + 1))
    rep = PrivacyReport(p, fps, verdict, skip_msym=skip_msym)
    if samples:
        for a, b in itertools.combinations(range(1, p.V + 1), 2):
            for db, v in privacy_audit_statistical(p, (a, b), samples, seed).items():
                rep.tv[(db, a, b)] = v
    return rep


def total_variation(a: collections.Counter, b: collections.Counter) -> float:
    na, nb = sum(a.values()), sum(b.values())
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a[k] / na - b[k] / nb) for k in keys)


def privacy_audit_statistical(params: SchemeParams, nu_pair, samples: int = 1000, seed: int = 0,
                              *, leak: bool = False) -> dict:
    """TV distance per database between the observed-form distributions of two nu.

    Each nu draws its own independent stream of assignments.  ``leak=True``
    sends rows in generation order, which exposes nu (negative control).
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    p = params
    order = "generation" if leak else "canonical"
    streams = np.random.SeedSequence(seed).spawn(len(nu_pair))
    hists = []
    for nu, ss in zip(nu_pair, streams):
        plan = compiled_plan(query_set(p, nu))
        seeds = np.random.default_rng(ss).integers(0, 2**63, size=samples)
        h = {db: collections.Counter() for db in range(1, p.N + 1)}
        for s in seeds.tolist():
            A = make_index_assignment(s, p.Lt)
            for db in h:
                h[db][fingerprint(observed_form(plan.lower(db, A, order)[0]))] += 1
        hists.append(h)
    return {db: total_variation(hists[0][db], hists[1][db]) for db in range(1, p.N + 1)}


# --- baselines and bounds ---------------------------------------------------


def baseline_rates(params: SchemeParams) -> dict:
    """Scheme rate against retrieving the virtual message with coded PIR over V messages."""
    p = params
    scheme = scheme_rate(p.N, p.K, p.M)
    rc = Fraction(p.K, p.N)
    baseline = (1 - rc) / (1 - rc**p.V)
    if scheme < baseline or (scheme == baseline) != (p.M == p.V):
        raise RateIdentityError(f"scheme {scheme} vs baseline {baseline} at M={p.M}, V={p.V}")
    return {"scheme": scheme, "baseline": baseline, "ratio": scheme / baseline,
            "limit": 1 - rc}


def outer_bound_v2(H1, H12, N: int, K: int) -> Fraction:
    """Upper bound N H1 / (K H12 + H1 (N - K)) for two combinations; entropies in q-ary units."""
    H1, H12 = Fraction(H1), Fraction(H12)
    if not 1 <= K < N:
        raise ValueError(f"need 1 <= K < N, got N={N}, K={K}")
    if not (0 < H1 <= H12 <= 2 * H1):
        raise ValueError(f"entropies must satisfy 0 < H1 <= H12 <= 2 H1, got H1={H1}, H12={H12}")
    return N * H1 / (K * H12 + H1 * (N - K))
