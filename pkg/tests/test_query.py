import collections
import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import SMALL, pid
from pfrlab.mds import GeneratorMatrix, MessageStore, encode_shards
from pfrlab.plan import compiled_plan
from pfrlab.protocol import evaluate_answers
from pfrlab.query import (
    DESIRED,
    INTERFERENCE,
    ParameterError,
    QueryMatrix,
    SchemeParams,
    _expand_terms,
    lower_to_matrix,
    query_set,
    reconstruction_coefficients,
    retained_per_db_round,
    term_sign,
)
from pfrlab.virtual import IndexAssignment, combination_matrix, make_index_assignment

EXTRA = [SchemeParams(3, 2, 2, 3), SchemeParams(4, 1, 2, 3), SchemeParams(5, 3, 2, 2), SchemeParams(5, 2, 2, 2)]
CASES = SMALL + EXTRA


def test_params_derived():
    p = SchemeParams(3, 2, 2, 2)
    assert (p.V, p.Lt, p.L, p.Nb) == (3, 27, 54, 1)
    assert [p.R(B) for B in (1, 2, 3)] == [4, 2, 1]
    assert p.neighbor(3, 1) == 1
    assert p.si_group(1, 1) == 1 and p.si_group(1, 2) == 2


@pytest.mark.parametrize("bad", [(3, 3, 2, 2), (3, 0, 2, 2), (3, 2, 0, 2), (3, 2, 2, 4)])
def test_params_rejected(bad):
    with pytest.raises(ParameterError):
        SchemeParams(*bad)


def test_block1_example():
    qs = query_set(SchemeParams(3, 2, 2, 2), 3)
    cell = qs.cell(1, 1, 1, retained_only=False)
    by_theta = collections.defaultdict(list)
    for a in cell:
        by_theta[a.terms[0].theta].append(a.terms[0].slot)
    assert {k: sorted(v) for k, v in by_theta.items()} == {1: [1, 2, 3, 4], 2: [1, 2, 3, 4], 3: [1, 2, 3, 4]}
    groups = collections.defaultdict(set)
    for a in cell:
        if a.kind == INTERFERENCE:
            groups[a.group].add(a.terms[0].slot)
    assert dict(groups) == {1: {1, 2}, 2: {3, 4}}
    # The requested combination never reaches the databases in block 1.
    assert all(a.terms[0].theta != 3 for a in qs.cell(1, 1, 1))
    assert len(qs.cell(1, 1, 1)) == 8


def test_single_message():
    p = SchemeParams(4, 2, 1, 3)
    qs = query_set(p, 1)
    for n in range(1, 5):
        atoms = qs.cell(n, 1, 1, retained_only=False)
        assert len(atoms) == 1 and atoms[0].kind == DESIRED


@pytest.mark.parametrize("p", CASES, ids=pid)
def test_block1_total(p):
    qs = query_set(p, p.V)
    n_atoms = sum(len(qs.cell(n, 1, 1, retained_only=False)) for n in range(1, p.N + 1))
    assert n_atoms == p.N * p.V * p.K ** (p.V - 1)


@pytest.mark.parametrize("p", CASES, ids=pid)
def test_type_census_and_symmetry(p):
    baseline = None
    for nu in range(1, p.V + 1):
        qs = query_set(p, nu)
        view = {}
        for n, R, B in itertools.product(range(1, p.N + 1), range(1, p.K + 1), range(1, p.V + 1)):
            everything = collections.Counter(a.type for a in qs.cell(n, R, B, retained_only=False))
            assert set(everything) == set(itertools.combinations(range(1, p.V + 1), B))
            assert set(everything.values()) == {p.R(B)}
            view[(n, R, B)] = collections.Counter(a.type for a in qs.cell(n, R, B))
            assert sum(view[(n, R, B)].values()) == (comb(p.V, B) - comb(p.V - p.M, B)) * p.R(B)
        baseline = baseline or view
        assert view == baseline


@pytest.mark.parametrize("p", CASES, ids=pid)
def test_desired_atoms_contain_nu_once(p):
    for nu in range(1, p.V + 1):
        qs = query_set(p, nu)
        for a in qs.atoms:
            thetas = [t.theta for t in a.terms]
            assert len(set(thetas)) == len(thetas) == a.block
            assert (nu in thetas) == (a.kind == DESIRED)


@pytest.mark.parametrize("p", CASES, ids=pid)
def test_rotation(p):
    qs = query_set(p, 1)
    for R in range(2, p.K + 1):
        for n in range(1, p.N + 1):
            prev = p.neighbor(n, -1)
            here = sorted((a.type, tuple(t.slot for t in a.terms)) for a in qs.cell(n, R, 1, retained_only=False))
            there = sorted((a.type, tuple(t.slot for t in a.terms)) for a in qs.cell(prev, R - 1, 1, retained_only=False))
            assert here == there


@pytest.mark.parametrize("p", CASES, ids=pid)
def test_coverage_k_distinct_databases(p):
    for nu in (1, p.V):
        qs = query_set(p, nu)
        groups = collections.defaultdict(list)
        for a in qs.atoms:
            groups[a.key].append(a)
        xslots = set()
        for members in groups.values():
            assert len(members) == p.K
            assert len({a.db for a in members}) == p.K
            assert len({tuple(sorted((t.theta, t.slot) for t in a.terms)) if a.kind == INTERFERENCE else 0
                        for a in members}) == 1
            if members[0].kind == DESIRED:
                xs = {a.xslot for a in members}
                assert len(xs) == 1
                assert not xs & xslots
                xslots |= xs
        # Fresh-slot discipline: every slot of the requested combination issued exactly once.
        assert xslots == set(range(1, p.Lt + 1))


@pytest.mark.parametrize("p", CASES, ids=pid)
def test_side_information_use(p):
    """Each SI atom serves each consuming database at most once per round."""
    qs = query_set(p, p.V)
    uses = collections.Counter()
    for a in qs.atoms:
        if a.si is not None:
            uses[(a.si, a.db, a.round)] += 1
            si = qs.atoms[a.si]
            assert si.round == 1 and si.block == a.block - 1
            assert a.db in {p.neighbor(si.db, -i) for i in range(1, p.Nb + 1)}
            for t in si.terms:
                assert (t.theta, t.slot) in {(u.theta, u.slot) for u in a.terms}
    assert set(uses.values()) <= {1}


def test_sign_rule_and_elimination_q3():
    p = SchemeParams(3, 2, 2, 3)
    for nu in range(1, p.V + 1):
        for B in range(1, p.V + 1):
            coeffs = reconstruction_coefficients(p, nu, B)
            assert len(coeffs) == comb(p.V - p.M, B)
    assert term_sign((1, 2), 1, (2,), 3) in (1, -1)


def test_elimination_example():
    p = SchemeParams(3, 2, 2, 2)
    qs = query_set(p, 3)
    elim = collections.Counter((a.db, a.round, a.block, a.type) for a in qs.eliminated)
    assert set(elim.values()) == {4}
    assert {k[3] for k in elim} == {(3,)}
    assert len(elim) == 6
    assert retained_per_db_round(p) == 15
    # c_t = a_t + b_t: each eliminated singleton rebuilt from the two basis singletons.
    for a in qs.eliminated:
        rel = qs.relations[a.uid]
        assert sorted(qs.atoms[u].type for u, _ in rel) == [(1,), (2,)]
        assert all(c == 1 for _, c in rel)


def test_elimination_is_nu_independent():
    p = SchemeParams(3, 2, 2, 3)
    pats = {nu: sorted((a.db, a.round, a.block, a.type) for a in query_set(p, nu).eliminated)
            for nu in range(1, p.V + 1)}
    assert len({tuple(v) for v in pats.values()}) == 1


def test_lowering_examples():
    p = SchemeParams(3, 2, 2, 2)
    qs = query_set(p, 3)
    A = make_index_assignment(5, p.Lt)
    qm, uids = lower_to_matrix(qs, 1, A)
    assert qm.nrows == 30 and qm.width == 54
    dense = qm.to_dense()
    for r, u in enumerate(uids.tolist()):
        a = qs.atoms[u]
        want = np.zeros(54, np.int64)
        for t in a.terms:
            tau = A.pi(t.slot) - 1
            v = combination_matrix(2, 2)[t.theta - 1]
            want[[tau, 27 + tau]] += v * t.sign * A.sigma(t.slot)
        assert np.array_equal(dense[r], want % 2)
    # A singleton of c = a + b has ones at (m=1, pi(t)) and (m=2, pi(t)).
    single = next(a for a in qs.atoms if a.type == (3,) and a.block == 1)
    ident = IndexAssignment.identity(p.Lt)
    row = lower_to_matrix(qs, single.db, ident, order="generation")
    # Eliminated atoms are not sent, so lower the symbolic term directly.
    t = single.terms[0].slot
    r, pos, coef = _expand_terms(qs, [single], ident)
    assert sorted(pos.tolist()) == [t - 1, 27 + t - 1] and coef.tolist() == [1, 1]
    assert row[0].nrows == 30
    q3 = SchemeParams(3, 2, 2, 3)
    qs3 = query_set(q3, 3)
    atom = next(a for a in qs3.retained(1) if a.block == 2 and a.kind == DESIRED)
    qm3, u3 = lower_to_matrix(qs3, 1, IndexAssignment.identity(q3.Lt), order="generation")
    row = qm3.to_dense()[list(u3).index(atom.uid)]
    vecs = combination_matrix(3, 2)
    want = np.zeros(2 * q3.Lt, np.int64)
    for t in atom.terms:
        want[[t.slot - 1, q3.Lt + t.slot - 1]] += vecs[t.theta - 1] * t.sign
    assert np.array_equal(row, want % 3)
    assert sorted(t.sign % 3 for t in atom.terms) == [1, 2]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(CASES), st.integers(0, 2**32), st.data())
def test_fast_lowering_matches_reference(p, seed, data):
    nu = data.draw(st.integers(1, p.V))
    db = data.draw(st.integers(1, p.N))
    qs = query_set(p, nu)
    A = make_index_assignment(seed, p.Lt)
    for order in ("canonical", "generation"):
        a, ua = compiled_plan(qs).lower(db, A, order)
        b, ub = lower_to_matrix(qs, db, A, order=order)
        assert a == b and np.array_equal(ua, ub)
    assert a.is_canonically_sorted() or order == "generation"


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(CASES), st.integers(0, 2**32))
def test_lowered_answers_match_symbolic_oracle(p, seed):
    rng = np.random.default_rng(seed)
    nu = int(rng.integers(1, p.V + 1))
    qs = query_set(p, nu)
    G = GeneratorMatrix(rng.integers(0, p.q, size=(p.K, p.N)), p.q)
    store = MessageStore.random(p.M, p.Lt, p.K, p.q, rng)
    A = make_index_assignment(seed, p.Lt)
    vecs = combination_matrix(p.q, p.M).tolist()
    for shard in encode_shards(store, G):
        qm, uids = lower_to_matrix(qs, shard.db_index, A)
        assert qm.is_canonically_sorted()
        got = evaluate_answers(shard, qm).values
        for v, u in zip(got.tolist(), uids.tolist()):
            assert v == oracles.atom_answer(qs.atoms[u], shard.db_index, store.data, G.G, vecs, A, p.q)


def test_query_matrix_wire_format():
    p = SchemeParams(3, 2, 2, 3)
    qm, _ = lower_to_matrix(query_set(p, 2), 2, make_index_assignment(1, p.Lt))
    buf = qm.to_bytes()
    assert len(buf) == qm.wire_size() == 16 + qm.nrows * 2 * p.Lt
    assert buf[:16] == np.array([3, 2, p.Lt, qm.nrows], dtype="<u4").tobytes()
    assert QueryMatrix.from_bytes(buf) == qm
    assert QueryMatrix.from_dense(3, 2, p.Lt, qm.to_dense()) == qm


def test_symbolic_export_has_tags():
    import json

    qs = query_set(SchemeParams(3, 2, 2, 2), 3)
    doc = json.loads(qs.to_json())
    assert doc["nu"] == 3 and len(doc["atoms"]) == len(qs.atoms)
    qm, _ = lower_to_matrix(qs, 1, IndexAssignment.identity(27))
    assert set(qm.to_json()) == {"q", "M", "Lt", "rows"}
