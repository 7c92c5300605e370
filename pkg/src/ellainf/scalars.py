"""Exact rational-complex scalars.

The A-infinity engine runs in two scalar modes: floating ``complex`` for
analytic structures, and :class:`QC` (Gaussian rationals) for sign/axiom
self-tests where residuals must vanish exactly, not within tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class QC:
    """Complex number with exact rational real and imaginary parts."""

    re: Fraction = Fraction(0)
    im: Fraction = Fraction(0)

    @staticmethod
    def of(x) -> "QC":
        if isinstance(x, QC):
            return x
        if isinstance(x, complex):
            return QC(Fraction(x.real).limit_denominator(10**12),
                      Fraction(x.imag).limit_denominator(10**12))
        return QC(Fraction(x))

    def __add__(self, other):
        other = QC.of(other)
        return QC(self.re + other.re, self.im + other.im)

    __radd__ = __add__

    def __neg__(self):
        return QC(-self.re, -self.im)

    def __sub__(self, other):
        return self + (-QC.of(other))

    def __rsub__(self, other):
        return QC.of(other) + (-self)

    def __mul__(self, other):
        other = QC.of(other)
        return QC(self.re * other.re - self.im * other.im,
                  self.re * other.im + self.im * other.re)

    __rmul__ = __mul__

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __abs__(self) -> float:
        return (float(self.re) ** 2 + float(self.im) ** 2) ** 0.5

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))


def scalar_zero(exact: bool):
    return QC() if exact else 0j


def scalar_norm(x) -> float:
    return abs(x)
