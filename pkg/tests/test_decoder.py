import types

import numpy as np
import pytest

import oracles
from pfrlab.decoder import (
    DecodeState,
    InconsistentProjectionError,
    MissingProjectionError,
    UnresolvedDependencyError,
    _solve_groups,
    peel_decode,
    regenerate_redundant,
)
from pfrlab.mds import MessageStore, build_generator, encode_shards
from pfrlab.plan import compiled_plan
from pfrlab.protocol import evaluate_answers
from pfrlab.query import DESIRED, SchemeParams, query_set
from pfrlab.virtual import IndexAssignment, combination_matrix, make_index_assignment


def _session(p, nu, A, seed=0, G=None):
    G = G or build_generator(p.N, p.K, p.q)
    store = MessageStore.random(p.M, p.Lt, p.K, p.q, seed)
    qs = query_set(p, nu)
    plan = compiled_plan(qs)
    answers = {}
    for shard in encode_shards(store, G):
        qm, uids = plan.lower(shard.db_index, A)
        answers[shard.db_index] = (uids, evaluate_answers(shard, qm).values)
    return qs, plan, store, G, answers


@pytest.fixture
def example_run():
    p = SchemeParams(3, 2, 2, 2)
    A = IndexAssignment.identity(p.Lt)
    qs, plan, store, G, answers = _session(p, 3, A, seed=11)
    out, state = peel_decode(qs, answers, A, G, return_state=True)
    return p, qs, plan, store, G, answers, out, state


def test_block1_segment_from_two_databases(example_run):
    p, qs, plan, store, G, answers, out, state = example_run
    a1 = next(a for a in qs.atoms if a.type == (1,) and a.terms[0].slot == 1 and a.round == 1)
    g = plan.gid[a1.uid]
    assert sorted(plan.db[plan.group_members[g]].tolist()) == [1, 2]
    assert np.array_equal(state.values[g], store.segment(1, 1))


def test_block2_side_information_stripped(example_run):
    p, qs, plan, store, G, answers, out, state = example_run
    atom = next(a for a in qs.atoms if a.kind == DESIRED and a.xslot == 13 and a.db == 1)
    assert sorted((t.theta, t.slot) for t in atom.terms) == [(2, 5), (3, 13)]
    g = plan.gid[atom.uid]
    assert sorted(plan.db[plan.group_members[g]].tolist()) == [1, 2]
    c13 = (store.segment(1, 13) + store.segment(2, 13)) % 2
    assert np.array_equal(state.values[g], c13)


def test_full_output(example_run):
    p, qs, plan, store, G, answers, out, state = example_run
    assert out.size == p.L == 54
    assert np.array_equal(out, (store.data[0] + store.data[1]) % 2)
    assert np.all(state.resolved)


def test_regenerated_xor(example_run):
    p, qs, plan, store, G, answers, out, state = example_run
    assert len(state.regenerated) == 24
    for u, v in state.regenerated.items():
        a = qs.atoms[u]
        t = a.terms[0].slot
        assert a.type == (3,)
        assert v == G.column(a.db) @ ((store.segment(1, t) + store.segment(2, t)) % 2) % 2


@pytest.mark.parametrize("nu", [1, 2, 3, 4])
def test_regenerated_q3_matches_oracle(nu):
    p = SchemeParams(3, 2, 2, 3)
    A = make_index_assignment(nu, p.Lt)
    qs, plan, store, G, answers, = _session(p, nu, A, seed=nu)
    out, state = peel_decode(qs, answers, A, G, return_state=True)
    vecs = combination_matrix(3, 2).tolist()
    assert len(state.regenerated) == len(qs.relations)
    for u, v in state.regenerated.items():
        a = qs.atoms[u]
        assert v == oracles.atom_answer(a, a.db, store.data, G.G, vecs, A, 3)
    assert np.array_equal(out, oracles.plaintext_combination(store.data, vecs[nu - 1], 3))


def test_missing_answers():
    p = SchemeParams(3, 2, 2, 2)
    A = make_index_assignment(3, p.Lt)
    qs, plan, store, G, answers = _session(p, 2, A)
    partial = dict(answers)
    del partial[2]
    with pytest.raises(MissingProjectionError):
        peel_decode(qs, partial, A, G)
    uids, vals = answers[1]
    short = dict(answers)
    short[1] = (uids[:-1], vals[:-1])
    with pytest.raises(MissingProjectionError):
        peel_decode(qs, short, A, G)


def test_unresolved_dependency():
    p = SchemeParams(3, 2, 2, 2)
    plan = compiled_plan(query_set(p, 3))
    st = DecodeState(np.full(plan.db.size, -1, np.int64), np.zeros((1, 2), np.int64),
                     np.zeros(1, bool), np.zeros((p.Lt, 2), np.int64))
    with pytest.raises(UnresolvedDependencyError):
        regenerate_redundant(plan, st)


def test_inconsistent_extra_projection():
    G = build_generator(3, 2, 2)
    fake = types.SimpleNamespace(group_members=[np.array([0, 1, 2])], db=np.array([1, 2, 3]))
    w = np.array([1, 1])
    y = w @ G.G % 2
    assert np.array_equal(_solve_groups(fake, G, [0], y)[0], w)
    y[2] ^= 1
    with pytest.raises(InconsistentProjectionError):
        _solve_groups(fake, G, [0], y)


def test_resolved_values_are_never_overwritten():
    st = DecodeState(np.zeros(1, np.int64), np.zeros((2, 1), np.int64), np.array([True, False]),
                     np.zeros((1, 1), np.int64))
    with pytest.raises(Exception):
        st.resolve(np.array([0]), np.array([[1]]))


def test_peeling_order_is_acyclic():
    p = SchemeParams(4, 3, 2, 2)
    qs = query_set(p, 3)
    for a in qs.atoms:
        if a.si is not None:
            assert qs.atoms[a.si].block < a.block
    for u, rel in qs.relations.items():
        for v, _ in rel:
            assert qs.atoms[v].block == qs.atoms[u].block and v not in qs.relations
