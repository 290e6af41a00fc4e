"""Array form of a :class:`~pfrlab.query.QuerySet` for fast lowering and decoding."""

from __future__ import annotations

import numpy as np

from .query import DESIRED, QueryMatrix, QuerySet
from .virtual import IndexAssignment, combination_matrix


class CompiledPlan:
    """Flat numpy view of every atom (retained and eliminated) of one query set.

    Atoms are indexed by uid.  Atoms sharing a decode key form a *group*:
    the K copies of one coded query spread over K databases.
    """

    def __init__(self, qs: QuerySet):
        p = qs.params
        self.qs = qs
        self.params = p
        self.nu = qs.nu
        n = len(qs.atoms)
        width = max(len(a.terms) for a in qs.atoms)
        self.db = np.empty(n, np.int64)
        self.round = np.empty(n, np.int64)
        self.block = np.empty(n, np.int64)
        self.desired = np.zeros(n, bool)
        self.theta = np.zeros((n, width), np.int64)
        self.slot = np.zeros((n, width), np.int64)
        self.sign = np.zeros((n, width), np.int64)
        self.nu_sign = np.zeros(n, np.int64)
        self.si_sign = np.zeros(n, np.int64)
        self.si_uid = np.full(n, -1, np.int64)
        self.xslot = np.zeros(n, np.int64)
        self.retained = qs.retained_mask.copy()

        keys = {}
        self.gid = np.empty(n, np.int64)
        for a in qs.atoms:
            u = a.uid
            self.db[u], self.round[u], self.block[u] = a.db, a.round, a.block
            for j, t in enumerate(a.terms):
                self.theta[u, j], self.slot[u, j], self.sign[u, j] = t.theta, t.slot, t.sign
            if a.kind == DESIRED:
                self.desired[u] = True
                self.xslot[u] = a.xslot
                self.nu_sign[u] = a.term(qs.nu).sign
                if a.si is not None:
                    si = qs.atoms[a.si]
                    self.si_uid[u] = a.si
                    t0 = si.terms[0]
                    self.si_sign[u] = a.term(t0.theta).sign * t0.sign
            self.gid[u] = keys.setdefault(a.key, len(keys))
        self.ngroups = len(keys)

        order = np.lexsort((self.round, self.gid))
        counts = np.bincount(self.gid, minlength=self.ngroups)
        self.group_size = counts
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.group_members = [order[s : s + c] for s, c in zip(starts, counts)]
        first = order[starts]
        self.group_block = self.block[first]
        self.group_desired = self.desired[first]
        self.group_xslot = self.xslot[first]
        self.group_nu_sign = self.nu_sign[first]

        elim = [(e, s, c) for e, rel in qs.relations.items() for s, c in rel]
        arr = np.array(elim, dtype=np.int64).reshape(-1, 3)
        self.elim_target, self.elim_source, self.elim_coeff = arr[:, 0], arr[:, 1], arr[:, 2]
        self.eliminated = np.array(sorted(qs.relations), dtype=np.int64)

        self.vecs = combination_matrix(p.q, p.M)

    def retained_uids(self, db: int) -> np.ndarray:
        return np.nonzero(self.retained & (self.db == db))[0]

    def expand(self, uids: np.ndarray, assignment: IndexAssignment):
        """(row, flat position, coefficient) triples for atoms ``uids`` (rows in given order)."""
        p = self.params
        th, sl, sg = self.theta[uids], self.slot[uids], self.sign[uids]
        r, j = np.nonzero(th)
        th, sl, sg = th[r, j], sl[r, j], sg[r, j]
        tau = assignment.perm[sl - 1]
        f = sg * assignment.signs[sl - 1]
        rows, pos, coef = [], [], []
        for m in range(p.M):
            c = self.vecs[th - 1, m]
            nz = c != 0
            rows.append(r[nz])
            pos.append(m * p.Lt + tau[nz])
            coef.append(c[nz] * f[nz] % p.q)
        return np.concatenate(rows), np.concatenate(pos), np.concatenate(coef)

    def lower(self, db: int, assignment: IndexAssignment, order: str = "canonical"):
        """Fast path equivalent of :func:`~pfrlab.query.lower_to_matrix`."""
        p = self.params
        uids = self.retained_uids(db)
        nrows = uids.size
        rows, pos, coef = self.expand(uids, assignment)
        o = np.lexsort((pos, rows))
        rows, pos, coef = rows[o], pos[o], coef[o]
        counts = np.bincount(rows, minlength=nrows)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        if order == "canonical":
            perm = _canonical_row_order(indptr, pos, coef, p.M * p.Lt)
            lens = counts[perm]
            starts = indptr[:-1][perm]
            idx = np.repeat(starts - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens) + np.arange(lens.sum())
            indptr = np.concatenate([[0], np.cumsum(lens)])
            pos, coef, uids = pos[idx], coef[idx], uids[perm]
        elif order != "generation":
            raise ValueError(f"unknown row order {order!r}")
        return QueryMatrix(p.q, p.M, p.Lt, indptr, pos, coef), uids


def _canonical_row_order(indptr, pos, coef, width) -> np.ndarray:
    """Row permutation sorting rows in ascending dense lexicographic order."""
    nrows = indptr.size - 1
    counts = np.diff(indptr)
    w = int(counts.max()) if nrows else 0
    # Missing trailing entries must sort before any real entry.
    kp = np.full((nrows, w), -(width + 1), np.int64)
    kv = np.zeros((nrows, w), np.int64)
    row_of = np.repeat(np.arange(nrows), counts)
    col_of = np.arange(pos.size) - indptr[row_of]
    kp[row_of, col_of] = -pos
    kv[row_of, col_of] = coef
    keys = []
    for j in reversed(range(w)):
        keys.append(kv[:, j])
        keys.append(kp[:, j])
    return np.lexsort(keys) if keys else np.arange(nrows)


def compiled_plan(qs: QuerySet) -> CompiledPlan:
    """The plan of ``qs``, built once and kept alongside it."""
    plan = getattr(qs, "_plan", None)
    if plan is None:
        plan = qs._plan = CompiledPlan(qs)
    return plan
