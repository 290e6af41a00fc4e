"""Exact arithmetic over prime fields F_q.

Scalars are wrapped in :class:`FieldElement` for the public API; bulk work
(encoding, lowering, decoding) runs on ``int64`` numpy arrays reduced mod q,
with the small dense linear-algebra routines below.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# Exact rate values; stdlib Fraction normalizes sign and gcd on construction.
Rational = Fraction


class FieldError(ValueError):
    pass


class FieldMismatchError(FieldError):
    """Operands come from different fields."""


class ZeroInverseError(FieldError, ZeroDivisionError):
    pass


class SingularMatrixError(FieldError):
    pass


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class PrimeField:
    """The field of integers modulo a prime ``q``."""

    q: int

    def __post_init__(self):
        if not isinstance(self.q, (int, np.integer)) or not is_prime(int(self.q)):
            raise FieldError(f"q must be prime, got {self.q!r}")
        object.__setattr__(self, "q", int(self.q))

    def __call__(self, value: int) -> FieldElement:
        return FieldElement(int(value) % self.q, self)

    def elements(self):
        return [FieldElement(v, self) for v in range(self.q)]

    @property
    def minus_one(self) -> int:
        return self.q - 1

    def sign(self, s: int) -> int:
        """Realize a sign in {+1, -1} as the residue 1 or q-1."""
        if s not in (1, -1):
            raise FieldError(f"sign must be +1 or -1, got {s!r}")
        return 1 if s == 1 else self.q - 1

    def inv(self, a: int) -> int:
        a %= self.q
        if a == 0:
            raise ZeroInverseError(f"0 has no inverse in F_{self.q}")
        return pow(a, self.q - 2, self.q)


PrimeFieldCtx = PrimeField


@dataclass(frozen=True)
class FieldElement:
    value: int
    field: PrimeField

    def __post_init__(self):
        if not 0 <= self.value < self.field.q:
            raise FieldError(f"{self.value} is not a residue mod {self.field.q}")

    @property
    def q(self) -> int:
        return self.field.q

    def _coerce(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.field != self.field:
                raise FieldMismatchError(f"F_{self.q} vs F_{other.q}")
            return other.value
        if isinstance(other, (int, np.integer)):
            return int(other) % self.q
        return NotImplemented

    def __add__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return FieldElement((self.value + b) % self.q, self.field)

    __radd__ = __add__

    def __sub__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return FieldElement((self.value - b) % self.q, self.field)

    def __rsub__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return FieldElement((b - self.value) % self.q, self.field)

    def __mul__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return FieldElement((self.value * b) % self.q, self.field)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement((-self.value) % self.q, self.field)

    def inverse(self) -> FieldElement:
        return FieldElement(self.field.inv(self.value), self.field)

    def __truediv__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return self * self.field.inv(b)

    def __int__(self):
        return self.value

    def __repr__(self):
        return f"{self.value} (mod {self.q})"


def fp_add(a: FieldElement, b: FieldElement) -> FieldElement:
    return a + b


def fp_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    return a * b


def fp_inv(a: FieldElement) -> FieldElement:
    return a.inverse()


# --- dense linear algebra mod q -------------------------------------------


def _row_reduce(A: np.ndarray, q: int):
    """Reduced row echelon form of ``A`` mod q; returns (R, pivot columns, det sign/scale).

    The third value is the product of the pivots and row-swap signs, which is
    the determinant when ``A`` is square and nonsingular.
    """
    R = np.array(A, dtype=np.int64) % q
    rows, cols = R.shape
    pivots = []
    det = 1
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.nonzero(R[r:, c])[0]
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            R[[r, p]] = R[[p, r]]
            det = -det
        piv = int(R[r, c])
        det = det * piv % q
        R[r] = R[r] * pow(piv, q - 2, q) % q
        others = np.nonzero(R[:, c])[0]
        for o in others:
            if o != r:
                R[o] = (R[o] - R[o, c] * R[r]) % q
        pivots.append(c)
        r += 1
    return R, pivots, det % q


def rank_mod(A: np.ndarray, q: int) -> int:
    return len(_row_reduce(A, q)[1])


def det_mod(A: np.ndarray, q: int) -> int:
    A = np.asarray(A)
    n, m = A.shape
    if n != m:
        raise ValueError("determinant of a non-square matrix")
    _, pivots, det = _row_reduce(A, q)
    return det if len(pivots) == n else 0


def inv_mod(A: np.ndarray, q: int) -> np.ndarray:
    A = np.asarray(A, dtype=np.int64)
    n = A.shape[0]
    aug = np.concatenate([A % q, np.eye(n, dtype=np.int64)], axis=1)
    R, pivots, _ = _row_reduce(aug, q)
    if pivots[:n] != list(range(n)):
        raise SingularMatrixError("matrix is singular mod %d" % q)
    return R[:, n:]


def solve_mod(A: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """Unique solution x of A x = b (mod q) for square nonsingular A."""
    return inv_mod(A, q) @ (np.asarray(b, dtype=np.int64) % q) % q


def solve_left_mod(rows: np.ndarray, target: np.ndarray, q: int) -> np.ndarray | None:
    """Coefficients c with c @ rows == target (mod q), or None if no solution.

    When ``rows`` has full row rank the solution is unique.
    """
    rows = np.asarray(rows, dtype=np.int64) % q
    target = np.asarray(target, dtype=np.int64) % q
    k = rows.shape[0]
    # Solve rows^T c = target by reducing [rows^T | target].
    aug = np.concatenate([rows.T, target[:, None]], axis=1)
    R, pivots, _ = _row_reduce(aug, q)
    if k in pivots:
        return None
    c = np.zeros(k, dtype=np.int64)
    for i, p in enumerate(pivots):
        c[p] = R[i, k]
    return c
