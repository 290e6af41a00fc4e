import json

import numpy as np
import pytest

from pfrlab.mds import MessageStore, build_generator, encode_shards
from pfrlab.protocol import (
    AnswerLengthError,
    AnswerString,
    DatabaseNode,
    DimensionMismatchError,
    InProcessTransport,
    NodeUnreachableError,
    SessionDecodeError,
    SocketTransport,
    evaluate_answers,
    run_session,
)
from pfrlab.query import QueryMatrix, SchemeParams, query_set, total_download
from pfrlab.plan import compiled_plan
from pfrlab.virtual import IndexAssignment
from fractions import Fraction


@pytest.fixture
def shards():
    G = build_generator(3, 2, 2)
    store = MessageStore.random(2, 27, 2, 2, 5)
    return store, G, encode_shards(store, G)


def test_zero_query(shards):
    store, G, sh = shards
    qm = QueryMatrix.from_dense(2, 2, 27, np.zeros((4, 54), np.int64))
    assert evaluate_answers(sh[0], qm).values.tolist() == [0, 0, 0, 0]


def test_singleton_virtual_row(shards):
    store, G, sh = shards
    for t in (1, 9, 27):
        dense = np.zeros((1, 54), np.int64)
        dense[0, [t - 1, 27 + t - 1]] = 1
        qm = QueryMatrix.from_dense(2, 2, 27, dense)
        for n in (1, 2, 3):
            c_t = (store.segment(1, t) + store.segment(2, t)) % 2
            assert evaluate_answers(sh[n - 1], qm).values[0] == G.column(n) @ c_t % 2


def test_table_cell_three_way_sum(shards):
    store, G, sh = shards
    p = SchemeParams(3, 2, 2, 2)
    qs = query_set(p, 3)
    qm, uids = compiled_plan(qs).lower(1, IndexAssignment.identity(27))
    r = next(i for i, u in enumerate(uids.tolist()) if qs.atoms[u].round == 1 and qs.atoms[u].block == 3)
    a, b, c = store.segment(1, 17), store.segment(2, 19), (store.segment(1, 25) + store.segment(2, 25))
    assert evaluate_answers(sh[0], qm).values[r] == G.column(1) @ (a - b + c) % 2


def test_dimension_mismatch(shards):
    _, _, sh = shards
    with pytest.raises(DimensionMismatchError):
        evaluate_answers(sh[0], QueryMatrix.from_dense(2, 2, 26, np.zeros((1, 52), np.int64)))
    with pytest.raises(DimensionMismatchError):
        evaluate_answers(sh[0], QueryMatrix.from_dense(3, 2, 27, np.zeros((1, 54), np.int64)))


def test_answer_purity_and_bytes(shards):
    _, _, sh = shards
    qm = QueryMatrix.from_dense(2, 2, 27, np.random.default_rng(0).integers(0, 2, (6, 54)))
    a1, a2 = evaluate_answers(sh[1], qm), evaluate_answers(sh[1], qm)
    assert a1 == a2 and len(a1) == 6
    assert AnswerString.from_bytes(a1.to_bytes()) == a1


def test_example_session():
    p = SchemeParams(3, 2, 2, 2)
    tr = run_session(p, 3, seed=1)
    assert tr.correct
    assert np.array_equal(tr.decoded, (tr.expected))
    assert tr.decoded_symbols.size == 54
    assert tr.rate["D"] == sum(len(a) for a in tr.answers.values()) == total_download(p) == 90
    assert tr.rate["rate"] == Fraction(3, 5)


def test_single_message_rate_one():
    tr = run_session(SchemeParams(3, 1, 1, 5), 1, seed=0)
    assert tr.correct and tr.rate["rate"] == 1


def test_replay_determinism():
    p = SchemeParams(3, 2, 2, 3)
    a = run_session(p, 4, seed=9).to_json()
    b = run_session(p, 4, seed=9).to_json()
    c = run_session(p, 4, seed=10).to_json()
    assert a == b and a != c
    doc = json.loads(a)
    assert doc["correct"] and doc["nu"] == 4


def test_transports_agree():
    p = SchemeParams(3, 2, 2, 2)
    base = run_session(p, 2, seed=4)
    nodes = _nodes(p, 4)
    with SocketTransport(nodes) as sock:
        over_wire = run_session(p, 2, seed=4, transport=sock)
    serial = run_session(p, 2, seed=4, transport=InProcessTransport(nodes, serialize=True))
    for tr in (over_wire, serial, run_session(p, 2, seed=4, transport="socket")):
        assert tr.correct and tr.to_json() == base.to_json()


def test_socket_framing_roundtrip():
    G = build_generator(3, 2, 3)
    store = MessageStore.random(2, 4, 2, 3, 0)
    shards = encode_shards(store, G)
    nodes = [DatabaseNode(s) for s in shards]
    qm = QueryMatrix.from_dense(3, 2, 4, np.random.default_rng(1).integers(0, 3, (5, 8)))
    with SocketTransport(nodes) as tr:
        got = tr.exchange({1: qm, 3: qm})
    assert set(got) == {1, 3}
    assert got[3] == evaluate_answers(shards[2], qm)


class _Drop:
    def __init__(self, inner, drop=None, truncate=None):
        self.inner, self.drop, self.truncate = inner, drop, truncate

    def exchange(self, queries):
        out = self.inner.exchange(queries)
        if self.drop:
            out.pop(self.drop)
        if self.truncate:
            a = out[self.truncate]
            out[self.truncate] = AnswerString(a.db_index, a.q, a.values[:-1])
        return out

    def close(self):
        pass


def _nodes(p, seed):
    from pfrlab.protocol import session_inputs

    store, _ = session_inputs(p, seed)
    return [DatabaseNode(s) for s in encode_shards(store, build_generator(p.N, p.K, p.q))]


def test_distinct_errors(monkeypatch):
    p = SchemeParams(3, 2, 2, 2)
    nodes = _nodes(p, 0)
    with pytest.raises(NodeUnreachableError):
        run_session(p, 1, 0, transport=InProcessTransport(nodes[:2]))
    with pytest.raises(NodeUnreachableError):
        run_session(p, 1, 0, transport=_Drop(InProcessTransport(nodes), drop=3))
    with pytest.raises(AnswerLengthError):
        run_session(p, 1, 0, transport=_Drop(InProcessTransport(nodes), truncate=2))
    from pfrlab import protocol
    from pfrlab.decoder import DecodeError

    def boom(*a, **k):
        raise DecodeError("corrupt")

    monkeypatch.setattr(protocol, "peel_decode", boom)
    with pytest.raises(SessionDecodeError):
        run_session(p, 1, 0)
    with pytest.raises(ValueError):
        run_session(p, 4, 0)
