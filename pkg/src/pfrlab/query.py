"""Query-set generation for private function retrieval over MDS-coded databases.

Vocabulary used throughout:

* ``nu`` is the requested combination index, ``theta`` any combination index
  (both 1-based into :func:`~pfrlab.virtual.enumerate_combinations`).
* A *slot* ``t`` in [1:L~] addresses the permuted symbol U_theta(t); slots are
  1-based to match the usual worked example.
* A *bundle* is one instance of a block: for block B it holds one atom of
  every B-subset type of [1:V].  Within a bundle the term of ``theta`` in an
  atom of type ``T`` sits at the slot reserved for the (B-1)-subset
  ``T - {theta}`` (its *column label*).  Labels without ``nu`` are fresh
  slots of the requested combination ("new(U_nu)"), labels containing ``nu``
  are slots inherited from a neighbouring database's side information.
  Side-information symmetry (M-Sym) is exactly this mirroring rule, and it is
  what makes every bundle look the same whatever ``nu`` is.
"""

from __future__ import annotations

import itertools
import json
from collections import OrderedDict
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import comb
from typing import NamedTuple

import numpy as np

from .field import is_prime, rank_mod, solve_left_mod
from .mds import element_width, pack_elements, unpack_elements
from .virtual import IndexAssignment, combination_matrix, num_combinations

DESIRED = "desired"
INTERFERENCE = "interference"


class ParameterError(ValueError):
    pass


class SideInformationError(RuntimeError):
    """Side information ran out or was reused; an internal invariant broke."""


class SignAssignmentError(RuntimeError):
    """A redundant type is not reconstructible from the retained atoms."""


@dataclass(frozen=True)
class SchemeParams:
    N: int
    K: int
    M: int
    q: int

    def __post_init__(self):
        if not is_prime(self.q):
            raise ParameterError(f"q must be prime, got {self.q}")
        if not 1 <= self.K < self.N:
            # K = N makes the closed-form rate 0/0.
            raise ParameterError(f"need 1 <= K < N, got N={self.N}, K={self.K}")
        if self.M < 1:
            raise ParameterError("M must be >= 1")

    @property
    def V(self) -> int:
        return num_combinations(self.q, self.M)

    @property
    def Lt(self) -> int:
        return self.N**self.V

    @property
    def L(self) -> int:
        return self.K * self.Lt

    @property
    def Nb(self) -> int:
        return self.N - self.K

    @property
    def code_rate(self) -> Fraction:
        return Fraction(self.K, self.N)

    def R(self, B: int) -> int:
        """Instances of every type per database, block and round."""
        return self.K ** (self.V - B) * self.Nb ** (B - 1)

    def neighbor(self, n: int, i: int) -> int:
        """DB n + i with wrap-around into [1:N]."""
        return (n - 1 + i) % self.N + 1

    def si_group(self, i: int, R: int) -> int:
        """Round-1 side-information group that neighbour i supplies in round R.

        For i <= Nb and R <= K this is Nb + R - i; indices past K wrap
        cyclically so each neighbour hands every group out exactly once over
        the K rounds.
        """
        return (self.Nb - i + R - 1) % self.K + 1

    def as_dict(self):
        return {"N": self.N, "K": self.K, "M": self.M, "q": self.q}


class Term(NamedTuple):
    theta: int
    slot: int
    sign: int
    col: tuple  # column label: the type minus theta


@dataclass(frozen=True)
class QueryAtom:
    uid: int
    terms: tuple
    block: int
    round: int
    db: int
    group: int | None  # side-information group of the bundle (None in block V)
    kind: str
    bundle: int
    key: tuple  # decode identity: shared by the K copies of the same coded query
    si: int | None = None  # uid of the round-1 interference atom used as side information
    xslot: int | None = None

    @property
    def type(self) -> tuple:
        return tuple(t.theta for t in self.terms)

    def term(self, theta: int) -> Term:
        for t in self.terms:
            if t.theta == theta:
                return t
        raise KeyError(theta)

    def label(self, names=None) -> str:
        """Human-readable form like ``b5 - c13``."""
        out = []
        for i, t in enumerate(self.terms):
            name = names[t.theta - 1] if names else f"U{t.theta}"
            op = ("-" if t.sign < 0 else "+") if i else ("-" if t.sign < 0 else "")
            out.append(f"{op}{name}{t.slot}")
        return " ".join(out).replace(" +", " + ").replace(" -", " - ")

    def to_json(self):
        return {
            "uid": self.uid, "terms": [list(t[:3]) for t in self.terms],
            "block": self.block, "round": self.round, "db": self.db,
            "group": self.group, "kind": self.kind, "bundle": self.bundle,
            "si": self.si,
        }


@dataclass
class Bundle:
    bid: int
    db: int
    round: int
    block: int
    index: int
    group: int | None
    origin_db: int
    x: dict  # (B-1)-subset of [1:V] - {nu}  ->  fresh slot of U_nu
    si: Bundle | None = None
    desired: list = field(default_factory=list)
    interference: list = field(default_factory=list)

    def interference_of(self, T: tuple) -> QueryAtom:
        for a in self.interference:
            if a.type == T:
                return a
        raise KeyError(T)

    @property
    def atoms(self):
        return self.desired + self.interference


class _SlotAllocator:
    """Per-combination fresh-slot bookkeeping ("new(U_theta)")."""

    def __init__(self, V: int, Lt: int):
        self.Lt = Lt
        self.next = 1
        self.used = {theta: set() for theta in range(1, V + 1)}

    def new(self, nu: int) -> int:
        slot = self.next
        self.next += 1
        self.claim(nu, slot)
        return slot

    def claim(self, theta: int, slot: int):
        if not 1 <= slot <= self.Lt:
            raise SideInformationError(f"slot {slot} outside [1:{self.Lt}]")
        if slot in self.used[theta]:
            raise SideInformationError(f"slot {slot} of U_{theta} issued twice")
        self.used[theta].add(slot)


class _Build:
    """Mutable generation state for one (params, nu)."""

    def __init__(self, params: SchemeParams, nu: int):
        if not 1 <= nu <= params.V:
            raise ParameterError(f"nu must lie in [1:{params.V}], got {nu}")
        self.p = params
        self.nu = nu
        self.others = tuple(th for th in range(1, params.V + 1) if th != nu)
        self.alloc = _SlotAllocator(params.V, params.Lt)
        self.bundles: dict[tuple, list[Bundle]] = {}  # (round, block, db) -> bundles
        self.atoms: list[QueryAtom] = []
        self._bid = 0

    def _bundle(self, db, rnd, block, index, origin_db, x, si=None) -> Bundle:
        p = self.p
        group = index // (p.R(block) // p.K) + 1 if block < p.V else None
        b = Bundle(self._bid, db, rnd, block, index, group, origin_db, x, si)
        self._bid += 1
        return b

    def _atom(self, bundle: Bundle, terms, kind, key, si=None, xslot=None) -> QueryAtom:
        a = QueryAtom(
            uid=len(self.atoms), terms=tuple(sorted(terms)), block=bundle.block,
            round=bundle.round, db=bundle.db, group=bundle.group, kind=kind,
            bundle=bundle.bid, key=key, si=si, xslot=xslot,
        )
        self.atoms.append(a)
        return a

    def desired_atom(self, bundle: Bundle, S: tuple) -> QueryAtom:
        nu = self.nu
        T = tuple(sorted(S + (nu,)))
        x = bundle.x[S]
        terms = [Term(nu, x, 1, S)]
        si = None
        if S:
            si = bundle.si.interference_of(S)
            for t in si.terms:
                col = tuple(sorted(set(T) - {t.theta}))
                terms.append(Term(t.theta, t.slot, 1, col))
        return self._atom(bundle, terms, DESIRED, ("D", x), si=si.uid if si else None, xslot=x)

    def interference_atom(self, bundle: Bundle, T: tuple, key=None) -> QueryAtom:
        terms = []
        for th in T:
            col = tuple(c for c in T if c != th)
            terms.append(Term(th, bundle.x[col], 1, col))
        key = key or ("I", bundle.block, bundle.origin_db, bundle.index, T)
        return self._atom(bundle, terms, INTERFERENCE, key)


# --- Algorithm steps -------------------------------------------------------


def init_block1(st: _Build) -> dict[int, list[Bundle]]:
    """Block 1, round 1: R_1 = K^(V-1) fresh singletons of every combination per DB.

    Bundles are split into K side-information groups of R_1/K consecutive
    bundles each.
    """
    p = st.p
    out = {}
    for n in range(1, p.N + 1):
        bundles = []
        for r in range(p.R(1)):
            b = st._bundle(n, 1, 1, r, n, {(): st.alloc.new(st.nu)})
            b.desired.append(st.desired_atom(b, ()))
            bundles.append(b)
        out[n] = bundles
        st.bundles[(1, 1, n)] = bundles
    return out


def _si_supply(st: _Build, B: int, n: int, R: int) -> list[Bundle]:
    p = st.p
    supply = []
    for i in range(1, p.Nb + 1):
        g = p.si_group(i, R)
        src = st.bundles[(1, B - 1, p.neighbor(n, i))]
        supply.extend(b for b in src if b.group == g)
    if len(supply) != p.R(B):
        raise SideInformationError(
            f"block {B} DB {n} round {R}: {len(supply)} side-information bundles for {p.R(B)} slots"
        )
    return supply


def exploit_si(st: _Build, B: int, n: int) -> list[Bundle]:
    """Round 1, block B >= 2: pair fresh U_nu slots with neighbour side information.

    Neighbour DB n+i contributes its block B-1 group ``si_group(i, 1)``;
    every (B-1)-type of the other combinations gets R_B desired B-sums.
    """
    p = st.p
    supply = _si_supply(st, B, n, 1)
    types = list(itertools.combinations(st.others, B - 1))
    xs = [dict() for _ in range(p.R(B))]
    # Fresh slots are drawn type by type in reverse lexicographic order.
    for S in reversed(types):
        for r in range(p.R(B)):
            xs[r][S] = st.alloc.new(st.nu)
    bundles = []
    for r in range(p.R(B)):
        b = st._bundle(n, 1, B, r, n, xs[r], si=supply[r])
        for S in types:
            b.desired.append(st.desired_atom(b, S))
        bundles.append(b)
    st.bundles[(1, B, n)] = bundles
    return bundles


def m_sym(st: _Build, bundles: list[Bundle]) -> list[QueryAtom]:
    """Interference B-sums over the other combinations, mirroring the desired slots.

    In the atom of type T the term of theta reuses the U_nu slot of the
    desired atom whose side information has type T - {theta}; from
    U_nu(i)+U_2(j) and U_nu(l)+U_3(r) this yields U_2(l)+U_3(i).
    """
    out = []
    for b in bundles:
        for T in itertools.combinations(st.others, b.block):
            a = st.interference_atom(b, T)
            for t in a.terms:
                st.alloc.claim(t.theta, t.slot)
            b.interference.append(a)
            out.append(a)
    return out


def rotate_round(st: _Build, R: int) -> dict[int, list[Bundle]]:
    """Block 1 of round R: DB n repeats DB n-1's round R-1 queries."""
    p = st.p
    if not 2 <= R <= p.K:
        raise ParameterError(f"round {R} outside [2:{p.K}]")
    out = {}
    for n in range(1, p.N + 1):
        prev = st.bundles[(R - 1, 1, p.neighbor(n, -1))]
        bundles = []
        for src in prev:
            b = st._bundle(n, R, 1, src.index, src.origin_db, src.x)
            b.desired.append(st.desired_atom(b, ()))
            for a in src.interference:
                b.interference.append(st.interference_atom(b, a.type, key=a.key))
            bundles.append(b)
        out[n] = bundles
        st.bundles[(R, 1, n)] = bundles
    return out


def reuse_si(st: _Build, R: int, B: int, n: int) -> list[Bundle]:
    """Round R >= 2, block B >= 2 at DB n.

    Interference sums are copied from DB n-1 at round R-1; the desired slots
    of that bundle are re-queried here against round-1 side information
    groups of the neighbours not used in earlier rounds.
    """
    p = st.p
    supply = _si_supply(st, B, n, R)
    prev = st.bundles[(R - 1, B, p.neighbor(n, -1))]
    types = list(itertools.combinations(st.others, B - 1))
    bundles = []
    for r, src in enumerate(prev):
        b = st._bundle(n, R, B, src.index, src.origin_db, src.x, si=supply[r])
        for S in types:
            b.desired.append(st.desired_atom(b, S))
        for a in src.interference:
            b.interference.append(st.interference_atom(b, a.type, key=a.key))
        bundles.append(b)
    st.bundles[(R, B, n)] = bundles
    return bundles


# --- signs and redundancy --------------------------------------------------


def term_sign(T: tuple, theta: int, col: tuple, nu: int) -> int:
    """Sign of theta's term in an atom of type T.

    Alternating by rank inside the type, times a fixed flip of columns that
    carry neighbour side information.  The flip is a per-column relabelling
    (absorbed by the random sigma), and it makes every desired atom equal
    +-U_nu plus +- the neighbour's interference atom exactly.
    """
    s = -1 if T.index(theta) % 2 else 1
    if nu in col and sum(1 for a in col if a > nu) % 2:
        s = -s
    return s


def _bundle_matrix(params: SchemeParams, nu: int, B: int, types) -> np.ndarray:
    """Rows of the abstract block-B bundle over (column label, message) pairs."""
    vecs = combination_matrix(params.q, params.M)
    cols = {c: i for i, c in enumerate(itertools.combinations(range(1, params.V + 1), B - 1))}
    M = params.M
    out = np.zeros((len(types), len(cols) * M), dtype=np.int64)
    for r, T in enumerate(types):
        for th in T:
            col = tuple(c for c in T if c != th)
            s = term_sign(T, th, col, nu)
            j = cols[col] * M
            out[r, j : j + M] = (s * vecs[th - 1]) % params.q
    return out


def redundant_types(params: SchemeParams, B: int) -> list[tuple]:
    """B-types built only from non-basis combinations (indices > M)."""
    return list(itertools.combinations(range(params.M + 1, params.V + 1), B))


def reconstruction_coefficients(params: SchemeParams, nu: int, B: int) -> dict:
    """For each redundant type T: {retained type: coefficient} rebuilding it.

    Raises SignAssignmentError unless the retained rows are independent and
    every redundant row lies in their span.
    """
    q = params.q
    all_types = list(itertools.combinations(range(1, params.V + 1), B))
    red = set(redundant_types(params, B))
    kept = [T for T in all_types if T not in red]
    A = _bundle_matrix(params, nu, B, all_types)
    idx = {T: i for i, T in enumerate(all_types)}
    kept_rows = A[[idx[T] for T in kept]]
    if rank_mod(kept_rows, q) != len(kept):
        raise SignAssignmentError(f"block {B}: retained atoms are linearly dependent")
    out = {}
    for T in sorted(red):
        c = solve_left_mod(kept_rows, A[idx[T]], q)
        if c is None:
            raise SignAssignmentError(f"block {B}: type {T} is not reconstructible")
        out[T] = {kept[i]: int(c[i]) for i in np.nonzero(c)[0]}
    return out


# --- assembled query sets --------------------------------------------------


class QuerySet:
    """All atoms of one retrieval, with per-database views and elimination records."""

    def __init__(self, params, nu, atoms, bundles, eliminated, relations, skip_msym=False):
        self.params = params
        self.nu = nu
        self.atoms: list[QueryAtom] = atoms
        self.bundles: list[Bundle] = bundles
        self.eliminated: list[QueryAtom] = eliminated
        self.relations: dict[int, list[tuple[int, int]]] = relations  # uid -> [(uid, coeff)]
        self.skip_msym = skip_msym
        elim = {a.uid for a in eliminated}
        self.retained_mask = np.array([a.uid not in elim for a in atoms], dtype=bool)
        if skip_msym:
            for a in atoms:
                if a.kind == INTERFERENCE and a.block >= 2:
                    self.retained_mask[a.uid] = False

    @cached_property
    def _by_db(self):
        out = {n: [] for n in range(1, self.params.N + 1)}
        for a in self.atoms:
            if self.retained_mask[a.uid]:
                out[a.db].append(a)
        return out

    def retained(self, db: int) -> list[QueryAtom]:
        """Atoms actually queried at database ``db``, in generation order."""
        return self._by_db[db]

    def cell(self, db: int, round: int, block: int, *, retained_only=True) -> list[QueryAtom]:
        return [
            a for a in self.atoms
            if a.db == db and a.round == round and a.block == block
            and (self.retained_mask[a.uid] or not retained_only)
        ]

    def partition(self, db: int, round: int, block: int) -> dict:
        """Retained atoms split into the desired part and interference groups I_G."""
        parts = {"M": []}
        for a in self.cell(db, round, block):
            if a.kind == DESIRED:
                parts["M"].append(a)
            else:
                parts.setdefault(f"I{a.group}", []).append(a)
        return parts

    def download_count(self) -> int:
        return int(self.retained_mask.sum())

    def census(self) -> dict:
        """Retained / eliminated atom counts per block, plus per-DB totals."""
        p = self.params
        blocks = {}
        for B in range(1, p.V + 1):
            blocks[B] = {"retained": 0, "eliminated": 0,
                         "retained_types": set(), "eliminated_types": set()}
        elim = {a.uid for a in self.eliminated}
        for a in self.atoms:
            rec = blocks[a.block]
            if a.uid in elim:
                rec["eliminated"] += 1
                rec["eliminated_types"].add(a.type)
            elif self.retained_mask[a.uid]:
                rec["retained"] += 1
                rec["retained_types"].add(a.type)
        per_db = {n: len(self.retained(n)) for n in range(1, p.N + 1)}
        return {"blocks": blocks, "per_db": per_db, "D": self.download_count()}

    def to_json(self) -> str:
        """Symbolic export for user-side debugging; never sent to a database."""
        return json.dumps(
            {"params": self.params.as_dict(), "nu": self.nu,
             "atoms": [a.to_json() for a in self.atoms],
             "eliminated": [a.uid for a in self.eliminated],
             "relations": {str(k): v for k, v in self.relations.items()}},
            sort_keys=True,
        )


def assign_signs(st: _Build) -> None:
    """Replace the unsigned terms of every atom with their signed versions."""
    nu = st.nu
    for i, a in enumerate(st.atoms):
        T = a.type
        terms = tuple(t._replace(sign=term_sign(T, t.theta, t.col, nu)) for t in a.terms)
        st.atoms[i] = a = QueryAtom(**{**a.__dict__, "terms": terms})
    for b in _all_bundles(st):
        b.desired = [st.atoms[a.uid] for a in b.desired]
        b.interference = [st.atoms[a.uid] for a in b.interference]
    # Each desired atom must read +-U_nu(x) +- (its side-information atom).
    for a in st.atoms:
        if a.kind != DESIRED or a.si is None:
            continue
        si = st.atoms[a.si]
        ratios = {a.term(t.theta).sign * t.sign for t in si.terms}
        if len(ratios) != 1 or {(t.theta, t.slot) for t in si.terms} != {
            (t.theta, t.slot) for t in a.terms if t.theta != nu
        }:
            raise SignAssignmentError(f"desired atom {a.uid} does not embed its side information")


def _all_bundles(st: _Build):
    for key in sorted(st.bundles):
        yield from st.bundles[key]


def eliminate_redundancy(st: _Build):
    """Drop atoms whose type avoids every basis combination; record how to rebuild them."""
    p = st.p
    coeffs = {B: reconstruction_coefficients(p, st.nu, B) for B in range(1, p.V + 1)}
    eliminated, relations = [], {}
    for b in _all_bundles(st):
        table = coeffs[b.block]
        if not table:
            continue
        by_type = {a.type: a for a in b.atoms}
        for T, combo in table.items():
            a = by_type[T]
            eliminated.append(a)
            relations[a.uid] = [(by_type[T2].uid, c) for T2, c in sorted(combo.items())]
    return eliminated, relations


def generate_query_set(params: SchemeParams, nu: int, *, skip_msym: bool = False) -> QuerySet:
    """Run the whole query-generation algorithm for combination ``nu``.

    ``skip_msym`` withholds the block >= 2 interference sums from the
    databases; it exists only as a privacy negative control.
    """
    st = _Build(params, nu)
    p = params
    init_block1(st)
    m_sym(st, [b for n in range(1, p.N + 1) for b in st.bundles[(1, 1, n)]])
    for B in range(2, p.V + 1):
        for n in range(1, p.N + 1):
            m_sym(st, exploit_si(st, B, n))
    for R in range(2, p.K + 1):
        rotate_round(st, R)
        for B in range(2, p.V + 1):
            for n in range(1, p.N + 1):
                reuse_si(st, R, B, n)
    assign_signs(st)
    eliminated, relations = eliminate_redundancy(st)
    bundles = list(_all_bundles(st))
    return QuerySet(p, nu, st.atoms, bundles, eliminated, relations, skip_msym=skip_msym)


_CACHE: OrderedDict = OrderedDict()
CACHE_SIZE = 8


def query_set(params: SchemeParams, nu: int, *, skip_msym: bool = False) -> QuerySet:
    """Memoized :func:`generate_query_set` (query sets are immutable once built)."""
    key = (params, nu, skip_msym)
    if key in _CACHE:
        _CACHE.move_to_end(key)
    else:
        _CACHE[key] = generate_query_set(params, nu, skip_msym=skip_msym)
        while len(_CACHE) > CACHE_SIZE:
            _CACHE.popitem(last=False)
    return _CACHE[key]


# --- closed-form counts ----------------------------------------------------


def retained_per_db_round(params: SchemeParams) -> int:
    p = params
    return sum(
        (comb(p.V, v) - comb(p.V - p.M, v)) * p.K ** (p.V - v) * p.Nb ** (v - 1)
        for v in range(1, p.V + 1)
    )


def total_download(params: SchemeParams) -> int:
    return params.K * params.N * retained_per_db_round(params)


# --- lowering to coefficient matrices --------------------------------------


class QueryMatrix:
    """Sparse coefficient rows over the (message, column) grid of a database.

    Row r pairs with the flat positions ``(m-1) * L~ + (tau-1)``.  This is the
    only object a database receives; it carries no symbolic tags.
    """

    _HEADER = struct.Struct("<4I")

    def __init__(self, q: int, M: int, Lt: int, indptr, indices, data):
        self.q, self.M, self.Lt = int(q), int(M), int(Lt)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.int64) % self.q

    @property
    def nrows(self) -> int:
        return self.indptr.size - 1

    @property
    def width(self) -> int:
        return self.M * self.Lt

    def row(self, r: int):
        s, e = self.indptr[r], self.indptr[r + 1]
        return self.indices[s:e], self.data[s:e]

    def rows(self):
        return [
            [(int(i), int(v)) for i, v in zip(*self.row(r))] for r in range(self.nrows)
        ]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.nrows, self.width), dtype=np.int64)
        row_of = np.repeat(np.arange(self.nrows), np.diff(self.indptr))
        out[row_of, self.indices] = self.data
        return out

    @classmethod
    def from_dense(cls, q, M, Lt, dense) -> QueryMatrix:
        dense = np.asarray(dense, dtype=np.int64) % q
        r, c = np.nonzero(dense)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=dense.shape[0]))])
        return cls(q, M, Lt, indptr, c, dense[r, c])

    def __eq__(self, other):
        return (
            isinstance(other, QueryMatrix)
            and (self.q, self.M, self.Lt) == (other.q, other.M, other.Lt)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def is_canonically_sorted(self) -> bool:
        keys = [_row_key(*self.row(r)) for r in range(self.nrows)]
        return all(keys[i] <= keys[i + 1] for i in range(len(keys) - 1))

    def to_bytes(self) -> bytes:
        """Header (q, M, L~, rows) then the dense row-major coefficients."""
        head = self._HEADER.pack(self.q, self.M, self.Lt, self.nrows)
        return head + pack_elements(self.to_dense(), self.q)

    @classmethod
    def from_bytes(cls, buf: bytes) -> QueryMatrix:
        q, M, Lt, rows = cls._HEADER.unpack_from(buf)
        flat = unpack_elements(buf[cls._HEADER.size :], rows * M * Lt, q)
        return cls.from_dense(q, M, Lt, flat.reshape(rows, M * Lt))

    def wire_size(self) -> int:
        return self._HEADER.size + element_width(self.q) * self.nrows * self.width

    def to_json(self):
        return {"q": self.q, "M": self.M, "Lt": self.Lt, "rows": self.rows()}


def _row_key(indices, values):
    # Dense lexicographic order on sparse rows: an earlier nonzero makes a row larger.
    return tuple((-int(i), int(v)) for i, v in zip(indices, values))


def _expand_terms(qs: QuerySet, atoms, assignment: IndexAssignment):
    """(row, flat position, coefficient) triples for the given atoms."""
    p = qs.params
    vecs = combination_matrix(p.q, p.M)
    rows, pos, coef = [], [], []
    for r, a in enumerate(atoms):
        for t in a.terms:
            tau = int(assignment.perm[t.slot - 1])
            f = t.sign * int(assignment.signs[t.slot - 1])
            for m in range(p.M):
                c = int(vecs[t.theta - 1, m])
                if c:
                    rows.append(r)
                    pos.append(m * p.Lt + tau)
                    coef.append(c * f % p.q)
    return np.array(rows, dtype=np.int64), np.array(pos, dtype=np.int64), np.array(coef, dtype=np.int64)


def _csr(nrows, rows, pos, coef):
    order = np.lexsort((pos, rows))
    rows, pos, coef = rows[order], pos[order], coef[order]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=nrows))])
    return indptr, pos, coef


def lower_to_matrix(qs: QuerySet, db: int, assignment: IndexAssignment, *, order: str = "canonical"):
    """Lower DB ``db``'s retained atoms to a :class:`QueryMatrix`.

    Returns ``(matrix, atom_uids)`` with ``atom_uids[r]`` the atom behind row
    r; the mapping stays with the user.  ``order="generation"`` keeps the
    symbolic order instead of sorting, which leaks nu (negative control).
    """
    p = qs.params
    atoms = qs.retained(db)
    rows, pos, coef = _expand_terms(qs, atoms, assignment)
    indptr, pos, coef = _csr(len(atoms), rows, pos, coef)
    uids = np.array([a.uid for a in atoms], dtype=np.int64)
    if order == "canonical":
        keys = [_row_key(pos[indptr[r] : indptr[r + 1]], coef[indptr[r] : indptr[r + 1]])
                for r in range(len(atoms))]
        perm = sorted(range(len(atoms)), key=keys.__getitem__)
        lens = np.diff(indptr)[perm]
        starts = indptr[:-1][perm]
        idx = np.concatenate([np.arange(s, s + n) for s, n in zip(starts, lens)]) if perm else np.zeros(0, np.int64)
        indptr = np.concatenate([[0], np.cumsum(lens)])
        pos, coef = pos[idx], coef[idx]
        uids = uids[perm]
    elif order != "generation":
        raise ValueError(f"unknown row order {order!r}")
    return QueryMatrix(p.q, p.M, p.Lt, indptr, pos, coef), uids
