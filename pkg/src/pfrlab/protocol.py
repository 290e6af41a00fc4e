"""Database nodes, transports, and full query/answer/decode sessions."""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .audit import scheme_rate
from .decoder import DecodeError, peel_decode
from .mds import (
    DatabaseShard,
    GeneratorMatrix,
    MessageStore,
    ShardFormatError,
    build_generator,
    encode_shards,
    pack_elements,
    unpack_elements,
)
from .plan import compiled_plan
from .query import QueryMatrix, SchemeParams, query_set
from .virtual import IndexAssignment, combination_matrix, make_index_assignment, virtual_message

_FRAME = struct.Struct("<I")


class ProtocolError(RuntimeError):
    pass


class NodeUnreachableError(ProtocolError):
    pass


class AnswerLengthError(ProtocolError):
    pass


class DimensionMismatchError(ValueError):
    pass


class SessionDecodeError(ProtocolError):
    pass


@dataclass(frozen=True, eq=False)
class AnswerString:
    """One database's answers, entry r paired with query row r."""

    db_index: int
    q: int
    values: np.ndarray

    _HEADER = struct.Struct("<3I")

    def __len__(self):
        return int(self.values.size)

    def __eq__(self, other):
        return (
            isinstance(other, AnswerString)
            and (self.db_index, self.q) == (other.db_index, other.q)
            and np.array_equal(self.values, other.values)
        )

    def to_bytes(self) -> bytes:
        return self._HEADER.pack(self.db_index, self.q, len(self)) + pack_elements(self.values, self.q)

    @classmethod
    def from_bytes(cls, buf: bytes) -> AnswerString:
        if len(buf) < cls._HEADER.size:
            raise ShardFormatError("truncated answer header")
        db, q, n = cls._HEADER.unpack_from(buf)
        return cls(db, q, unpack_elements(buf[cls._HEADER.size :], n, q))


def evaluate_answers(shard: DatabaseShard, qm: QueryMatrix) -> AnswerString:
    """Entry r is the inner product of query row r with the shard grid."""
    if (qm.q, qm.M, qm.Lt) != (shard.q, shard.M, shard.Lt):
        raise DimensionMismatchError(
            f"query is over (q={qm.q}, M={qm.M}, L~={qm.Lt}), "
            f"shard is (q={shard.q}, M={shard.M}, L~={shard.Lt})"
        )
    flat = shard.grid.reshape(-1)
    row_of = np.repeat(np.arange(qm.nrows), np.diff(qm.indptr))
    out = np.zeros(qm.nrows, np.int64)
    np.add.at(out, row_of, qm.data * flat[qm.indices] % qm.q)
    return AnswerString(shard.db_index, shard.q, out % qm.q)


class DatabaseNode:
    """Stateless evaluator holding a single shard; sees only its own queries."""

    def __init__(self, shard: DatabaseShard):
        self._shard = shard

    @property
    def db_index(self) -> int:
        return self._shard.db_index

    def handle(self, qm: QueryMatrix) -> AnswerString:
        return evaluate_answers(self._shard, qm)

    def handle_bytes(self, payload: bytes) -> bytes:
        return self.handle(QueryMatrix.from_bytes(payload)).to_bytes()


class InProcessTransport:
    """Calls each node directly, in database order.

    With ``serialize=True`` every query and answer goes through its byte
    encoding, as it would on a socket.
    """

    def __init__(self, nodes, serialize: bool = False):
        self.nodes = {node.db_index: node for node in nodes}
        self.serialize = serialize

    def exchange(self, queries: dict) -> dict:
        out = {}
        for db in sorted(queries):
            node = self.nodes.get(db)
            if node is None:
                raise NodeUnreachableError(f"no node for database {db}")
            if self.serialize:
                out[db] = AnswerString.from_bytes(node.handle_bytes(queries[db].to_bytes()))
            else:
                out[db] = node.handle(queries[db])
        return out

    def close(self):
        pass


def send_frame(sock, payload: bytes):
    sock.sendall(_FRAME.pack(len(payload)) + payload)


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock) -> bytes:
    (n,) = _FRAME.unpack(_recv_exact(sock, _FRAME.size))
    return _recv_exact(sock, n)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        payload = recv_frame(self.request)
        send_frame(self.request, self.server.node.handle_bytes(payload))


class SocketTransport:
    """One localhost TCP server per node; frames are a 4-byte LE length then the payload."""

    def __init__(self, nodes, host: str = "127.0.0.1", timeout: float = 30.0):
        self.timeout = timeout
        self.servers = {}
        self.addrs = {}
        for node in nodes:
            srv = socketserver.ThreadingTCPServer((host, 0), _Handler)
            srv.daemon_threads = True
            srv.node = node
            threading.Thread(target=srv.serve_forever, daemon=True).start()
            self.servers[node.db_index] = srv
            self.addrs[node.db_index] = srv.server_address

    def exchange(self, queries: dict) -> dict:
        out = {}
        for db in sorted(queries):
            addr = self.addrs.get(db)
            if addr is None:
                raise NodeUnreachableError(f"no node for database {db}")
            try:
                with socket.create_connection(addr, timeout=self.timeout) as s:
                    send_frame(s, queries[db].to_bytes())
                    out[db] = AnswerString.from_bytes(recv_frame(s))
            except OSError as exc:
                raise NodeUnreachableError(f"database {db} at {addr}: {exc}") from exc
        return out

    def close(self):
        for srv in self.servers.values():
            srv.shutdown()
            srv.server_close()
        self.servers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class SessionTranscript:
    params: SchemeParams
    seed: int
    nu: int
    generator: GeneratorMatrix
    assignment: IndexAssignment
    queries: dict  # db -> QueryMatrix
    answers: dict  # db -> AnswerString
    decoded: np.ndarray  # L~ x K
    expected: np.ndarray
    rate: dict = field(default_factory=dict)

    @property
    def correct(self) -> bool:
        return bool(np.array_equal(self.decoded, self.expected))

    @property
    def decoded_symbols(self) -> np.ndarray:
        """W~_nu as a flat vector of L symbols."""
        return self.decoded.reshape(-1)

    def to_json(self) -> str:
        return json.dumps(
            {
                "params": self.params.as_dict(),
                "seed": self.seed,
                "nu": self.nu,
                "generator": self.generator.tolist(),
                "queries": {str(db): qm.to_json()["rows"] for db, qm in self.queries.items()},
                "answers": {str(db): a.values.tolist() for db, a in self.answers.items()},
                "decoded": self.decoded.tolist(),
                "correct": self.correct,
                "rate": {k: str(v) for k, v in self.rate.items()},
            },
            sort_keys=True,
        )


def session_inputs(params: SchemeParams, seed: int):
    """Messages and assignment derived from one seed."""
    s_store, s_assign = np.random.SeedSequence(seed).spawn(2)
    store = MessageStore.random(params.M, params.Lt, params.K, params.q, np.random.default_rng(s_store))
    assignment = make_index_assignment(int(s_assign.generate_state(1)[0]), params.Lt)
    return store, assignment


def run_session(params: SchemeParams, nu: int, seed: int, transport="inproc", *,
                G: GeneratorMatrix | None = None, store: MessageStore | None = None,
                assignment: IndexAssignment | None = None) -> SessionTranscript:
    """Generate queries, collect every database's answers, and decode W~_nu."""
    p = params
    if not 1 <= nu <= p.V:
        raise ValueError(f"nu must lie in 1..{p.V}")
    G = G if G is not None else build_generator(p.N, p.K, p.q)
    s0, a0 = session_inputs(p, seed)
    store = store if store is not None else s0
    assignment = assignment if assignment is not None else a0
    nodes = [DatabaseNode(s) for s in encode_shards(store, G)]

    own = isinstance(transport, str)
    if transport == "inproc":
        transport = InProcessTransport(nodes)
    elif transport == "socket":
        transport = SocketTransport(nodes)
    elif own:
        raise ValueError(f"unknown transport {transport!r}")

    qs = query_set(p, nu)
    plan = compiled_plan(qs)
    queries, uids = {}, {}
    for db in range(1, p.N + 1):
        queries[db], uids[db] = plan.lower(db, assignment)
    try:
        answers = transport.exchange(queries)
    finally:
        if own:
            transport.close()
    for db in range(1, p.N + 1):
        if db not in answers:
            raise NodeUnreachableError(f"no answer from database {db}")
        if len(answers[db]) != queries[db].nrows:
            raise AnswerLengthError(
                f"database {db} returned {len(answers[db])} answers for {queries[db].nrows} queries"
            )
    try:
        decoded = peel_decode(qs, {db: (uids[db], answers[db].values) for db in answers}, assignment, G)
    except DecodeError as exc:
        raise SessionDecodeError(str(exc)) from exc
    expected = virtual_message(store, combination_matrix(p.q, p.M)[nu - 1])
    D = sum(len(a) for a in answers.values())
    rate = {"L": p.L, "D": D, "rate": Fraction(p.L, D), "closed_form": scheme_rate(p.N, p.K, p.M)}
    return SessionTranscript(p, seed, nu, G, assignment, queries, answers, decoded, expected, rate)
