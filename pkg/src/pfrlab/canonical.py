"""Canonical forms of query matrices under slot relabelling and per-slot sign flips.

A database sees rows of coefficients over (message, column) positions.  The
shared assignment (pi, sigma) acts by permuting columns (the same way for
every message) and flipping the sign of a whole column.  Two matrices carry
the same information about nu exactly when they lie in one orbit of that
action together with a row reordering; the forms below are orbit invariants
that separate orbits.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .query import QueryMatrix


def _neg(v, q):
    return tuple((-x) % q for x in v)


def _norm(v, q):
    """Representative of {v, -v}."""
    return min(v, _neg(v, q))


def _cells(qm: QueryMatrix):
    """Map row -> {column: M-vector} for a lowered matrix."""
    M, Lt = qm.M, qm.Lt
    rows = []
    for r in range(qm.nrows):
        idx, val = qm.row(r)
        cols = {}
        for i, v in zip(idx.tolist(), val.tolist()):
            m, tau = divmod(i, Lt)
            cols.setdefault(tau, [0] * M)[m] = v
        rows.append({t: tuple(c) for t, c in cols.items()})
    return rows


def _ordered(rows, q):
    """Form of rows in the given order: sorted sign-normalized column signatures."""
    cols = {}
    for i, r in enumerate(rows):
        for t, v in r.items():
            cols.setdefault(t, []).append((i, v))
    sigs = []
    for entries in cols.values():
        first = entries[0][1]
        if first != _norm(first, q):
            entries = [(i, _neg(v, q)) for i, v in entries]
        sigs.append(tuple(entries))
    return (len(rows), tuple(sorted(sigs)))


def _refine(rows, colors, q):
    """One round of sign-invariant colour refinement over shared columns."""
    by_col = {}
    for i, r in enumerate(rows):
        for t in r:
            by_col.setdefault(t, []).append(i)
    new = []
    for i, r in enumerate(rows):
        sig = []
        for t, v in r.items():
            own = v == _norm(v, q)
            nb = []
            for j in by_col[t]:
                if j != i:
                    w = rows[j][t]
                    nb.append((colors[j], _norm(w, q), (w == _norm(w, q)) == own))
            sig.append((_norm(v, q), tuple(sorted(nb))))
        new.append((colors[i], tuple(sorted(sig))))
    # Compress to small integers, preserving order so colours stay canonical.
    rank = {c: k for k, c in enumerate(sorted(set(new)))}
    return [rank[c] for c in new]


def _stable(rows, colors, q):
    while True:
        nxt = _refine(rows, colors, q)
        if len(set(nxt)) == len(set(colors)):
            return nxt
        colors = nxt


def _search(rows, colors, q):
    """Individualization-refinement: minimum ordered form over discrete leaves."""
    colors = _stable(rows, colors, q)
    if len(set(colors)) == len(rows):
        order = sorted(range(len(rows)), key=colors.__getitem__)
        return _ordered([rows[i] for i in order], q)
    counts = {}
    for c in colors:
        counts[c] = counts.get(c, 0) + 1
    target = min(c for c, k in counts.items() if k > 1)
    best = None
    for i in (i for i, c in enumerate(colors) if c == target):
        # Individualize row i: give it a colour just below its cell.
        indiv = [2 * c + (0 if j == i else 1) for j, c in enumerate(colors)]
        form = _search(rows, indiv, q)
        if best is None or form < best:
            best = form
    return best


@lru_cache(maxsize=1 << 16)
def _component_form(key, q):
    rows = [dict(r) for r in key[1]]
    init = [tuple(sorted(_norm(v, q) for v in r.values())) for r in rows]
    rank = {c: k for k, c in enumerate(sorted(set(init)))}
    return _search(rows, [rank[c] for c in init], q)


def _relabel(rows):
    """Rename columns by first use so equal components share a cache key."""
    names = {}
    out = []
    for r in rows:
        out.append(tuple((names.setdefault(t, len(names)), v) for t, v in sorted(r.items())))
    return (len(names), tuple(out))


def components(qm: QueryMatrix):
    """Row index lists of the connected components (rows linked by shared columns)."""
    n = qm.nrows
    if n == 0:
        return []
    row_of = np.repeat(np.arange(n), np.diff(qm.indptr))
    tau = qm.indices % qm.Lt
    g = coo_matrix((np.ones(row_of.size), (row_of, n + tau)), shape=(n + qm.Lt, n + qm.Lt))
    _, lab = connected_components(g, directed=False)
    lab = lab[:n]
    order = np.argsort(lab, kind="stable")
    splits = np.nonzero(np.diff(lab[order]))[0] + 1
    return [c.tolist() for c in np.split(order, splits)]


def multiset_form(qm: QueryMatrix):
    """Invariant of the row set: sorted canonical forms of its components."""
    rows = _cells(qm)
    forms = []
    for comp in components(qm):
        sub = [rows[i] for i in sorted(comp, key=lambda i: sorted(rows[i].items()))]
        forms.append(_component_form(_relabel(sub), qm.q))
    return (qm.q, qm.M, qm.Lt, tuple(sorted(forms)))


def ordered_form(qm: QueryMatrix):
    """Invariant of the matrix with its row order held fixed."""
    return (qm.q, qm.M, qm.Lt, _ordered(_cells(qm), qm.q))


def observed_form(qm: QueryMatrix):
    """What a database can extract: the row set if rows arrive sorted, else the ordered matrix."""
    if qm.is_canonically_sorted():
        return ("set",) + multiset_form(qm)
    return ("seq",) + ordered_form(qm)


def fingerprint(form) -> str:
    return hashlib.sha256(repr(form).encode()).hexdigest()
