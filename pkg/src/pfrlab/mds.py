"""(N, K) MDS generator matrices, coded database shards, and segment decoding."""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .field import FieldError, SingularMatrixError, det_mod, inv_mod, is_prime, rank_mod

SHARD_MAGIC = 0x53524650  # b"PFRS" read as little-endian uint32
_HEADER = struct.Struct("<7I")

EXHAUSTIVE_LIMIT = 2**24
RANDOM_TRIALS = 10**5


class MDSConstructionError(ValueError):
    """No (N, K) MDS matrix over F_q was found (or none exists)."""


class ShardFormatError(ValueError):
    pass


class DecodeSingularError(RuntimeError):
    """K projections did not determine a segment; indicates corrupted state."""


def element_width(q: int) -> int:
    """Bytes needed to store one residue mod q."""
    return max(1, ((q - 1).bit_length() + 7) // 8)


def pack_elements(values: np.ndarray, q: int) -> bytes:
    w = element_width(q)
    flat = np.asarray(values, dtype=np.int64).ravel()
    if w in (1, 2, 4, 8):
        return flat.astype(f"<u{w}").tobytes()
    return b"".join(int(v).to_bytes(w, "little") for v in flat)


def unpack_elements(buf: bytes, count: int, q: int) -> np.ndarray:
    w = element_width(q)
    if len(buf) != w * count:
        raise ShardFormatError(f"expected {w * count} bytes of elements, got {len(buf)}")
    if w in (1, 2, 4, 8):
        out = np.frombuffer(buf, dtype=f"<u{w}").astype(np.int64)
    else:
        out = np.array(
            [int.from_bytes(buf[i : i + w], "little") for i in range(0, len(buf), w)],
            dtype=np.int64,
        )
    if out.size and out.max() >= q:
        raise ShardFormatError("element out of range for the field")
    return out


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """K x N generator; column ``n`` (1-based) is database n's coding vector."""

    G: np.ndarray
    q: int

    def __post_init__(self):
        G = np.array(self.G, dtype=np.int64) % self.q
        if G.ndim != 2:
            raise ValueError("generator must be a 2-D matrix")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @property
    def K(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def code_rate(self) -> Fraction:
        return Fraction(self.K, self.N)

    def column(self, n: int) -> np.ndarray:
        return self.G[:, n - 1]

    def __eq__(self, other):
        return (
            isinstance(other, GeneratorMatrix)
            and self.q == other.q
            and np.array_equal(self.G, other.G)
        )

    def __hash__(self):
        return hash((self.q, self.G.tobytes(), self.G.shape))

    def tolist(self):
        return self.G.tolist()


def verify_mds(G, q: int | None = None) -> bool:
    """True iff every K x K column submatrix of G is nonsingular over F_q."""
    if isinstance(G, GeneratorMatrix):
        q = G.q if q is None else q
        G = G.G
    G = np.asarray(G, dtype=np.int64)
    K, N = G.shape
    if K > N:
        return False
    for cols in itertools.combinations(range(N), K):
        if det_mod(G[:, cols], q) == 0:
            return False
    return True


def _vandermonde(N: int, K: int, q: int) -> np.ndarray:
    # Nonzero points when the field has room for them, otherwise include 0.
    points = range(1, N + 1) if q > N else range(N)
    return np.array([[pow(x, i, q) for x in points] for i in range(K)], dtype=np.int64)


def _systematic_search(N: int, K: int, q: int) -> np.ndarray | None:
    """Exhaustive backtracking over systematic matrices [I_K | P].

    Every MDS matrix is row-equivalent to a systematic one and row operations
    preserve the MDS property, so exhausting P decides existence.
    """
    ident = [tuple(int(i == j) for i in range(K)) for j in range(K)]
    candidates = [
        v for v in itertools.product(range(q), repeat=K) if any(v)
    ]
    chosen = list(ident)

    def ok(col) -> bool:
        for subset in itertools.combinations(range(len(chosen)), K - 1):
            M = np.array([chosen[i] for i in subset] + [col], dtype=np.int64).T
            if det_mod(M, q) == 0:
                return False
        return True

    def extend() -> bool:
        if len(chosen) == N:
            return True
        for col in candidates:
            if ok(col):
                chosen.append(col)
                if extend():
                    return True
                chosen.pop()
        return False

    if extend():
        return np.array(chosen, dtype=np.int64).T
    return None


def build_generator(N: int, K: int, q: int, seed: int = 0) -> GeneratorMatrix:
    """Construct a verified (N, K) MDS generator over F_q.

    Strategies in order: Vandermonde when q >= N, single parity [I_K | 1]
    when K = N - 1, otherwise search (exhaustive when q^(K N) <= 2^24,
    seeded random trials beyond that).
    """
    if not is_prime(q):
        raise FieldError(f"q must be prime, got {q}")
    if not 1 <= K < N:
        raise ValueError(f"need 1 <= K < N, got N={N}, K={K}")
    if q >= N:
        G = _vandermonde(N, K, q)
    elif K == N - 1:
        G = np.concatenate([np.eye(K, dtype=np.int64), np.ones((K, 1), dtype=np.int64)], axis=1)
    elif q ** (K * N) <= EXHAUSTIVE_LIMIT:
        G = _systematic_search(N, K, q)
        if G is None:
            raise MDSConstructionError(
                f"no ({N},{K}) MDS code exists over F_{q} (exhaustive search)"
            )
    else:
        rng = np.random.default_rng(seed)
        G = None
        for _ in range(RANDOM_TRIALS):
            cand = rng.integers(0, q, size=(K, N))
            if verify_mds(cand, q):
                G = cand
                break
        if G is None:
            raise MDSConstructionError(
                f"no ({N},{K}) MDS code over F_{q} found in {RANDOM_TRIALS} random trials"
            )
    if not verify_mds(G, q):
        raise MDSConstructionError(f"constructed matrix for ({N},{K}) over F_{q} is not MDS")
    return GeneratorMatrix(G, q)


@dataclass(frozen=True, eq=False)
class MessageStore:
    """M messages, each stored as an L~ x K matrix of segments.

    ``data[m, t]`` is segment w_{m+1, t+1}.
    """

    data: np.ndarray
    q: int

    def __post_init__(self):
        d = np.array(self.data, dtype=np.int64) % self.q
        if d.ndim != 3:
            raise ValueError("message store must have shape (M, L~, K)")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @classmethod
    def random(cls, M: int, Lt: int, K: int, q: int, rng) -> MessageStore:
        rng = np.random.default_rng(rng)
        return cls(rng.integers(0, q, size=(M, Lt, K), dtype=np.int64), q)

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def Lt(self) -> int:
        return self.data.shape[1]

    @property
    def K(self) -> int:
        return self.data.shape[2]

    @property
    def L(self) -> int:
        return self.Lt * self.K

    def message(self, m: int) -> np.ndarray:
        """Message m (1-based) as a flat vector of L symbols."""
        return self.data[m - 1].reshape(-1)

    def segment(self, m: int, t: int) -> np.ndarray:
        return self.data[m - 1, t - 1]


@dataclass(frozen=True, eq=False)
class DatabaseShard:
    """Database n's M x L~ grid of coded symbols g_n^T w_{m,t}."""

    db_index: int
    q: int
    N: int
    K: int
    grid: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=np.int64) % self.q
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def M(self) -> int:
        return self.grid.shape[0]

    @property
    def Lt(self) -> int:
        return self.grid.shape[1]

    def column(self, t: int) -> np.ndarray:
        """W[t]: the coded symbols of segment t across all messages."""
        return self.grid[:, t - 1]

    def __eq__(self, other):
        return (
            isinstance(other, DatabaseShard)
            and (self.db_index, self.q, self.N, self.K) == (other.db_index, other.q, other.N, other.K)
            and np.array_equal(self.grid, other.grid)
        )

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(SHARD_MAGIC, self.q, self.N, self.K, self.M, self.Lt, self.db_index)
        return head + pack_elements(self.grid, self.q)

    @classmethod
    def from_bytes(cls, buf: bytes) -> DatabaseShard:
        if len(buf) < _HEADER.size:
            raise ShardFormatError("truncated shard header")
        magic, q, N, K, M, Lt, n = _HEADER.unpack_from(buf)
        if magic != SHARD_MAGIC:
            raise ShardFormatError(f"bad magic 0x{magic:08x}")
        grid = unpack_elements(buf[_HEADER.size :], M * Lt, q).reshape(M, Lt)
        return cls(n, q, N, K, grid)

    def to_json(self) -> str:
        return json.dumps(
            {"db_index": self.db_index, "q": self.q, "N": self.N, "K": self.K,
             "grid": self.grid.tolist()},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> DatabaseShard:
        d = json.loads(text)
        return cls(d["db_index"], d["q"], d["N"], d["K"], np.array(d["grid"], dtype=np.int64))


def encode_shards(store: MessageStore, G: GeneratorMatrix) -> list[DatabaseShard]:
    if store.K != G.K:
        raise ValueError(f"store segments have K={store.K}, generator has K={G.K}")
    if store.q != G.q:
        raise ValueError("store and generator use different fields")
    # coded[m, t, n] = w_{m,t} . g_n
    coded = np.einsum("mtk,kn->mtn", store.data, G.G) % G.q
    return [DatabaseShard(n + 1, G.q, G.N, G.K, coded[:, :, n]) for n in range(G.N)]


def decode_segment(projections, G: GeneratorMatrix, seg_coords=None) -> np.ndarray:
    """Recover the K-vector w from K pairs (db_index, g_n^T w).

    ``seg_coords`` is carried for error reporting only.
    """
    projections = list(projections)
    if len(projections) != G.K:
        raise ValueError(f"need exactly K={G.K} projections, got {len(projections)}")
    dbs = [int(n) for n, _ in projections]
    if len(set(dbs)) != G.K:
        raise ValueError(f"database indices must be distinct, got {dbs}")
    A = G.G[:, [n - 1 for n in dbs]].T
    y = np.array([int(v) for _, v in projections], dtype=np.int64)
    try:
        inv = inv_mod(A, G.q)
    except SingularMatrixError as exc:
        raise DecodeSingularError(f"singular projection system for {seg_coords} at {dbs}") from exc
    return inv @ y % G.q


def projection_inverse(G: GeneratorMatrix, dbs) -> np.ndarray:
    """Matrix X with X @ (g_{d_1}^T w, ..., g_{d_K}^T w) = w for the given databases."""
    A = G.G[:, [n - 1 for n in dbs]].T
    return inv_mod(A, G.q)


def generator_rank(G: GeneratorMatrix) -> int:
    return rank_mod(G.G, G.q)
