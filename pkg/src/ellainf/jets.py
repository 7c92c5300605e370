"""Truncated polynomial arithmetic in up to two commuting nilpotent variables.

A :class:`Jet2` is an element of C[e1, e2] / (e1^m1, e2^m2).  Every scalar
formula in the analytic layer evaluates verbatim on jets, which is how
matrix arguments of the form ``t - N2 + N0*`` are fed through theta-type
series: evaluate on a jet, then substitute the commuting nilpotent matrices
for e1, e2.

Coefficients may be python/numpy complex scalars or numpy arrays of a
common shape (used to evaluate jet-valued functions on grids at once).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Jet2:
    """Polynomial sum c[i, j] * e1^i e2^j, exact modulo (e1^m1, e2^m2)."""

    coeff: np.ndarray  # shape (m1, m2) or (m1, m2, *extra) for grid values

    __array_ufunc__ = None  # numpy must defer to the reflected operators

    def __post_init__(self):
        object.__setattr__(self, "coeff", np.asarray(self.coeff, dtype=complex))

    # -- constructors ------------------------------------------------------
    @staticmethod
    def constant(value, orders=(1, 1)) -> "Jet2":
        value = np.asarray(value, dtype=complex)
        c = np.zeros(tuple(orders) + value.shape, dtype=complex)
        c[0, 0] = value
        return Jet2(c)

    @staticmethod
    def variable(value, which: int, orders) -> "Jet2":
        """value + e_which, with truncation ``orders``."""
        if not (0 <= which < 2):
            raise ValueError("which must be 0 or 1")
        if orders[which] < 2:
            raise ValueError("truncation order too small for a variable")
        j = Jet2.constant(value, orders)
        idx = (1, 0) if which == 0 else (0, 1)
        j.coeff[idx] = 1.0
        return j

    # -- basic queries ------------------------------------------------------
    @property
    def orders(self):
        return self.coeff.shape[:2]

    @property
    def std(self):
        """Standard part (the scalar specialization)."""
        return self.coeff[0, 0]

    def nil_part(self) -> "Jet2":
        c = self.coeff.copy()
        c[0, 0] = 0
        return Jet2(c)

    # -- ring operations -----------------------------------------------------
    def _coerced(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            if other.orders != self.orders:
                raise ValueError(f"jet order mismatch {self.orders} vs {other.orders}")
            return other
        return Jet2.constant(other, self.orders)

    def __add__(self, other):
        other = self._coerced(other)
        a, b = self.coeff, other.coeff
        while a.ndim < b.ndim:
            a = a[..., None]
        while b.ndim < a.ndim:
            b = b[..., None]
        return Jet2(a + b)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.coeff)

    def __sub__(self, other):
        return self + (-self._coerced(other))

    def __rsub__(self, other):
        return self._coerced(other) + (-self)

    def __mul__(self, other):
        other = self._coerced(other)
        m1, m2 = self.orders
        shape = np.broadcast_shapes(self.coeff.shape[2:], other.coeff.shape[2:])
        out = np.zeros((m1, m2) + shape, dtype=complex)
        # per-pair products keep scalar-valued jets on the scalar ufunc path,
        # so zero-nilpotent jets reproduce plain complex arithmetic bit-for-bit
        for i in range(m1):
            for j in range(m2):
                a = self.coeff[i, j]
                if not np.any(a):
                    continue
                for k in range(m1 - i):
                    for l in range(m2 - j):
                        b = other.coeff[k, l]
                        if not np.any(b):
                            continue
                        out[i + k, j + l] += a * b
        return Jet2(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return self * other.inv()
        out = np.array(self.coeff, dtype=complex)
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] = out[i, j] / other
        return Jet2(out)

    def __rtruediv__(self, other):
        return self._coerced(other) * self.inv()

    def inv(self, tol: float = 1e-12) -> "Jet2":
        """Multiplicative inverse; requires an invertible standard part."""
        s = self.std
        if np.min(np.abs(s)) <= tol:
            raise ZeroDivisionError("jet not invertible: standard part ~ 0")
        n = (self.nil_part() * Jet2.constant(1.0 / s, self.orders))
        # geometric series in the nilpotent part
        acc = Jet2.constant(np.ones_like(s), self.orders)
        term = Jet2.constant(np.ones_like(s), self.orders)
        sign = 1.0
        for _ in range(1, self.orders[0] + self.orders[1] - 1):
            term = term * n
            sign = -sign
            if not np.any(term.coeff):
                break
            acc = acc + Jet2(sign * term.coeff)
        return acc * Jet2.constant(1.0 / s, self.orders)

    def exp(self) -> "Jet2":
        """exp(standard part) times the finite polynomial exp of the rest."""
        s = self.std
        n = self.nil_part()
        acc = Jet2.constant(np.ones_like(s), self.orders)
        term = Jet2.constant(np.ones_like(s), self.orders)
        for k in range(1, self.orders[0] + self.orders[1] - 1):
            term = term * n
            if not np.any(term.coeff):
                break
            acc = acc + Jet2(term.coeff / math.factorial(k))
        return acc * Jet2.constant(np.exp(s), self.orders)


def jet_exp(x):
    """exp on scalars, arrays, or jets."""
    if isinstance(x, Jet2):
        return x.exp()
    return np.exp(x)


def jet_inv(x, tol: float = 1e-12):
    if isinstance(x, Jet2):
        return x.inv(tol)
    if np.min(np.abs(x)) <= tol:
        raise ZeroDivisionError("not invertible")
    return 1.0 / x


def substitute_nilpotents(x: Jet2, n1: np.ndarray, n2: np.ndarray,
                          tol: float = 1e-10) -> np.ndarray:
    """Evaluate sum c[i,j] N1^i N2^j for commuting nilpotent matrices.

    N1, N2 must commute (they come from distinct tensor factors) and their
    nilpotency indices must not exceed the jet truncation orders.
    """
    n1 = np.asarray(n1, dtype=complex)
    n2 = np.asarray(n2, dtype=complex)
    if n1.shape != n2.shape:
        raise ValueError("matrix shape mismatch")
    if np.max(np.abs(n1 @ n2 - n2 @ n1)) > tol * (1 + np.max(np.abs(n1)) * np.max(np.abs(n2))):
        raise ValueError("nilpotent matrices do not commute")
    m1, m2 = x.orders
    d = n1.shape[0]
    if np.max(np.abs(np.linalg.matrix_power(n1, m1))) > tol:
        raise ValueError("truncation order too small for N1")
    if np.max(np.abs(np.linalg.matrix_power(n2, m2))) > tol:
        raise ValueError("truncation order too small for N2")
    pow1 = [np.eye(d, dtype=complex)]
    for _ in range(m1 - 1):
        pow1.append(pow1[-1] @ n1)
    pow2 = [np.eye(d, dtype=complex)]
    for _ in range(m2 - 1):
        pow2.append(pow2[-1] @ n2)
    out = np.zeros((d, d), dtype=complex)
    for i in range(m1):
        for j in range(m2):
            c = x.coeff[i, j]
            if c != 0:
                out += c * (pow1[i] @ pow2[j])
    return out


def nilpotency_index(n: np.ndarray, tol: float = 1e-12) -> int:
    """Smallest k with N^k = 0 (so jets of order k capture exp/series exactly)."""
    n = np.asarray(n, dtype=complex)
    k, power = 1, n.copy()
    while np.max(np.abs(power), initial=0.0) > tol:
        power = power @ n
        k += 1
        if k > n.shape[0] + 1:
            raise ValueError("matrix is not nilpotent")
    return k
