"""Peeling decoder: block-by-block recovery of the requested virtual message."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mds import GeneratorMatrix, projection_inverse
from .plan import CompiledPlan, compiled_plan
from .query import QuerySet
from .virtual import IndexAssignment


class DecodeError(RuntimeError):
    pass


class MissingProjectionError(DecodeError):
    pass


class InconsistentProjectionError(DecodeError):
    pass


class UnresolvedDependencyError(DecodeError):
    pass


@dataclass
class DecodeState:
    """Per-uid answers (downloaded or regenerated) and per-group K-vector values."""

    answers: np.ndarray  # uid -> g_db^T(atom), -1 until known
    values: np.ndarray  # group -> K-vector, -1 until resolved
    resolved: np.ndarray  # group -> bool
    output: np.ndarray  # L~ x K, -1 until resolved
    regenerated: dict = field(default_factory=dict)

    def resolve(self, groups: np.ndarray, vals: np.ndarray):
        if np.any(self.resolved[groups]):
            raise DecodeError("attempt to overwrite a resolved value")
        self.values[groups] = vals
        self.resolved[groups] = True


def collect_answers(plan: CompiledPlan, answers) -> np.ndarray:
    """Scatter per-database answer strings onto atom uids.

    ``answers`` maps db -> (row uids, values) as produced by lowering.
    """
    out = np.full(len(plan.db), -1, np.int64)
    for db, (uids, vals) in answers.items():
        uids = np.asarray(uids)
        vals = np.asarray(vals, dtype=np.int64)
        if uids.shape != vals.shape:
            raise DecodeError(f"DB {db}: {vals.size} answers for {uids.size} queries")
        if np.any(plan.db[uids] != db):
            raise DecodeError(f"DB {db} answered queries addressed elsewhere")
        out[uids] = vals
    return out


def regenerate_redundant(plan: CompiledPlan, state: DecodeState, block: int | None = None) -> np.ndarray:
    """Fill in answers of eliminated atoms from retained answers of the same bundle.

    Each eliminated B-sum is a fixed linear combination of the retained
    B-sums sharing its bundle (for block 1 this is U_nu(t) = sum_m c_m U_m(t));
    the same combination of the database's answers gives its answer.
    """
    q = plan.params.q
    sel = np.ones(plan.elim_target.size, bool)
    if block is not None:
        sel = plan.block[plan.elim_target] == block
    tgt, src, c = plan.elim_target[sel], plan.elim_source[sel], plan.elim_coeff[sel]
    if tgt.size == 0:
        return tgt
    if np.any(state.answers[src] < 0):
        raise UnresolvedDependencyError("regeneration needs an answer that is not available")
    acc = np.zeros(len(plan.db), np.int64)
    np.add.at(acc, tgt, c * state.answers[src] % q)
    targets = np.unique(tgt)
    state.answers[targets] = acc[targets] % q
    for u in targets.tolist():
        state.regenerated[u] = int(state.answers[u])
    return targets


def _solve_groups(plan: CompiledPlan, G: GeneratorMatrix, groups, adjusted):
    """K-vector values for the given groups from their K adjusted projections."""
    K, q = G.K, G.q
    out = np.zeros((len(groups), K), np.int64)
    by_dbs = {}
    for i, g in enumerate(groups):
        members = plan.group_members[g]
        if members.size < K:
            raise MissingProjectionError(f"group {g}: {members.size} projections, need {K}")
        dbs = tuple(plan.db[members].tolist())
        if len(set(dbs)) < K:
            raise MissingProjectionError(f"group {g}: fewer than K distinct databases {dbs}")
        by_dbs.setdefault(dbs, []).append(i)
    for dbs, idx in by_dbs.items():
        idx = np.array(idx)
        members = np.stack([plan.group_members[groups[i]] for i in idx])
        Y = adjusted[members]
        if np.any(Y < 0):
            raise MissingProjectionError("a projection is missing from the answers")
        first = list(dict.fromkeys(dbs))[:K]
        pick = [dbs.index(d) for d in first]
        X = projection_inverse(G, first)
        W = Y[:, pick] @ X.T % q
        if len(dbs) > K:
            # Extra projections must agree with the solution.
            check = W @ G.G[:, [d - 1 for d in dbs]] % q
            if np.any(check != Y):
                raise InconsistentProjectionError(f"projections at {dbs} disagree")
        out[idx] = W
    return out


def peel_decode(qs: QuerySet, answers, assignment: IndexAssignment, G: GeneratorMatrix,
                *, return_state: bool = False):
    """Recover W~_nu (an L~ x K array of segments) from all N answer strings.

    Block by block: regenerate eliminated atoms, strip resolved side
    information from desired atoms, then solve each group of K projections.
    """
    plan = compiled_plan(qs)
    p = plan.params
    q = p.q
    state = DecodeState(
        answers=collect_answers(plan, answers),
        values=np.full((plan.ngroups, p.K), -1, np.int64),
        resolved=np.zeros(plan.ngroups, bool),
        output=np.full((p.Lt, p.K), -1, np.int64),
    )
    missing = plan.retained & (state.answers < 0)
    if np.any(missing):
        raise MissingProjectionError(f"{int(missing.sum())} queried atoms have no answer")
    Gt = G.G.T  # row n-1 is g_n^T
    for B in range(1, p.V + 1):
        regenerate_redundant(plan, state, B)
        in_block = plan.block == B
        adjusted = state.answers.copy()
        des = np.nonzero(in_block & (plan.si_uid >= 0))[0]
        if des.size:
            si_groups = plan.gid[plan.si_uid[des]]
            if not np.all(state.resolved[si_groups]):
                raise UnresolvedDependencyError(f"block {B} needs side information not yet resolved")
            proj = np.einsum("ik,ik->i", Gt[plan.db[des] - 1], state.values[si_groups]) % q
            adjusted[des] = (adjusted[des] - plan.si_sign[des] * proj) % q
        groups = np.nonzero(plan.group_block == B)[0]
        state.resolve(groups, _solve_groups(plan, G, groups, adjusted))
        dg = groups[plan.group_desired[groups]]
        x = plan.group_xslot[dg]
        f = plan.group_nu_sign[dg] * assignment.signs[x - 1]
        cols = assignment.perm[x - 1]
        if np.any(state.output[cols] >= 0):
            raise DecodeError("a segment was resolved twice")
        state.output[cols] = state.values[dg] * f[:, None] % q
    if np.any(state.output < 0):
        raise DecodeError(f"{int((state.output < 0).any(axis=1).sum())} segments never resolved")
    return (state.output, state) if return_state else state.output
