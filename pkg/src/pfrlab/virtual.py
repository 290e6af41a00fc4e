"""Linear-combination vectors, virtual messages, and the shared index assignment."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .field import is_prime
from .mds import MessageStore


@dataclass(frozen=True)
class CombinationVector:
    index: int  # nu, 1-based
    coeffs: tuple[int, ...]

    @property
    def is_basis(self) -> bool:
        return sum(1 for c in self.coeffs if c) == 1 and 1 in self.coeffs

    def __str__(self):
        return "[" + " ".join(map(str, self.coeffs)) + "]"


def num_combinations(q: int, M: int) -> int:
    return (q**M - 1) // (q - 1)


def enumerate_combinations(q: int, M: int) -> list[CombinationVector]:
    """All projective points of F_q^M as canonical vectors (leading nonzero = 1).

    The unit vectors e_1..e_M come first; the rest follow in lexicographic order.
    """
    if not is_prime(q):
        raise ValueError(f"q must be prime, got {q}")
    if M < 1:
        raise ValueError("M must be >= 1")
    basis = [tuple(int(i == m) for i in range(M)) for m in range(M)]
    rest = []
    for v in itertools.product(range(q), repeat=M):
        lead = next((c for c in v if c), 0)
        if lead == 1 and v not in basis:
            rest.append(v)
    vecs = basis + sorted(rest)
    assert len(vecs) == num_combinations(q, M)
    return [CombinationVector(i + 1, v) for i, v in enumerate(vecs)]


def combination_matrix(q: int, M: int) -> np.ndarray:
    """V x M array whose row nu-1 is v_nu."""
    return np.array([c.coeffs for c in enumerate_combinations(q, M)], dtype=np.int64)


def virtual_message(store: MessageStore, coeffs) -> np.ndarray:
    """W~ = v [W_1..W_M]^T as an L~ x K array of segments."""
    v = np.asarray(coeffs, dtype=np.int64)
    if v.shape != (store.M,):
        raise ValueError(f"coefficient vector must have length M={store.M}")
    return np.tensordot(v, store.data, axes=1) % store.q


def virtual_symbol(store: MessageStore, combos, nu: int, t: int) -> np.ndarray:
    """Segment t (1-based) of virtual message nu: sum_m v_nu(m) w_{m,t}."""
    if not 1 <= nu <= len(combos):
        raise IndexError(f"combination index {nu} out of range 1..{len(combos)}")
    if not 1 <= t <= store.Lt:
        raise IndexError(f"segment index {t} out of range 1..{store.Lt}")
    v = np.asarray(combos[nu - 1].coeffs, dtype=np.int64)
    return v @ store.data[:, t - 1, :] % store.q


@dataclass(frozen=True, eq=False)
class IndexAssignment:
    """Permutation pi of [1:L~] and signs sigma, shared by every virtual message.

    Stored 0-based: ``perm[t-1] == pi(t) - 1``.
    """

    perm: np.ndarray
    signs: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        perm = np.array(self.perm, dtype=np.int64)
        signs = np.array(self.signs, dtype=np.int64)
        if perm.ndim != 1 or sorted(perm.tolist()) != list(range(perm.size)):
            raise ValueError("perm must be a permutation of 0..L~-1")
        if signs.shape != perm.shape or not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +1/-1, one per slot")
        perm.setflags(write=False)
        signs.setflags(write=False)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def identity(cls, Lt: int) -> IndexAssignment:
        return cls(np.arange(Lt), np.ones(Lt, dtype=np.int64), None)

    @property
    def Lt(self) -> int:
        return self.perm.size

    def pi(self, t: int) -> int:
        return int(self.perm[t - 1]) + 1

    def sigma(self, t: int) -> int:
        return int(self.signs[t - 1])

    def __eq__(self, other):
        return (
            isinstance(other, IndexAssignment)
            and np.array_equal(self.perm, other.perm)
            and np.array_equal(self.signs, other.signs)
        )


def make_index_assignment(seed: int, Lt: int) -> IndexAssignment:
    """Uniform random (pi, sigma) from a seeded generator (numpy's Fisher-Yates shuffle)."""
    if Lt < 1:
        raise ValueError("L~ must be >= 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(Lt)
    signs = rng.integers(0, 2, size=Lt) * 2 - 1
    return IndexAssignment(perm, signs, seed)


def permuted_symbol(store: MessageStore, combos, assignment: IndexAssignment, nu: int, t: int) -> np.ndarray:
    """U_nu(t) = sigma_t W~_nu(pi(t))."""
    if not 1 <= t <= assignment.Lt:
        raise IndexError(f"slot {t} out of range 1..{assignment.Lt}")
    base = virtual_symbol(store, combos, nu, assignment.pi(t))
    return base * assignment.sigma(t) % store.q
