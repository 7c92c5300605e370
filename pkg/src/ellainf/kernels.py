"""Analytic kernels on the elliptic curve C/(Z + Z*tau).

Everything here is generic over scalar-or-jet arguments: a jet argument
shifts the holomorphic variable by nilpotent amounts, which is how matrix
arguments enter the closed-form triple products.

Series are truncated with explicit Gaussian tail bounds derived from the
exp(-pi Im(tau) n^2) decay; evaluation near a pole of a quotient raises
instead of returning a huge value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .jets import Jet2, jet_exp, jet_inv


class PoleError(ArithmeticError):
    """Evaluation requested within tolerance of a pole/zero of a denominator."""


class CutoffError(ArithmeticError):
    """Series index bound hit before the tail bound met the tolerance."""


@dataclass(frozen=True)
class ModularParam:
    """Upper half-plane parameter plus the truncation policy for all series.

    ``tol`` is the target absolute tail bound; ``max_index`` a hard cap on
    series indices; ``pole_tol`` the minimum denominator modulus accepted
    in quotients.
    """

    tau: complex
    tol: float = 1e-14
    max_index: int = 600
    pole_tol: float = 1e-6

    def __post_init__(self):
        if self.tau.imag <= 0:
            raise ValueError("Im(tau) must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    @property
    def im(self) -> float:
        return self.tau.imag

    def theta_cutoff(self, im_z: float, scale: float = 1.0) -> int:
        """Index N with exp(-pi Im(tau) scale (n - R)^2) < tol for |n| >= N.

        R bounds the drift |Im z| / (Im(tau) * scale) of the Gaussian peak.
        """
        a = math.pi * self.im * scale
        r = abs(im_z) / (self.im * scale)
        n = r + math.sqrt(max(math.log(1.0 / self.tol), 1.0) / a) + 3.0
        n = int(math.ceil(n))
        if n > self.max_index:
            raise CutoffError(f"required cutoff {n} exceeds max_index {self.max_index}")
        return n


@dataclass(frozen=True)
class RealDecomposition:
    """Real coordinates of z = z1 + tau*z2."""

    z1: float
    z2: float

    @staticmethod
    def of(z: complex, tau: complex) -> "RealDecomposition":
        z2 = z.imag / tau.imag
        z1 = z.real - tau.real * z2
        return RealDecomposition(z1, z2)

    def recompose(self, tau: complex) -> complex:
        return self.z1 + tau * self.z2


def _std(x):
    """Standard part of a scalar-or-jet (scalar pass-through)."""
    return x.std if isinstance(x, Jet2) else x


def _imag_std(x) -> float:
    """Bound on |Im| of the standard part (for cutoff radii)."""
    s = _std(x)
    return float(np.max(np.abs(np.imag(np.asarray(s)))))


def _im_signed(x) -> float:
    """Signed imaginary part of a scalar-or-jet standard part."""
    return float(np.imag(np.asarray(_std(x)).ravel()[0]))


def theta(z, mp: ModularParam):
    """theta(z, tau) = sum_n exp(pi i tau n^2 + 2 pi i n z), scalar or jet z."""
    n_max = mp.theta_cutoff(_imag_std(z))
    terms = []
    for n in range(-n_max, n_max + 1):
        terms.append(jet_exp((1j * math.pi * mp.tau * n * n) + (2j * math.pi * n) * z))
    return _ordered_sum(terms)


def theta_deriv(z, mp: ModularParam, order: int = 1):
    """Derivative of theta of the given order, by term-wise differentiation."""
    n_max = mp.theta_cutoff(_imag_std(z), 1.0)
    terms = []
    for n in range(-n_max, n_max + 1):
        if order > 0 and n == 0:
            continue
        terms.append(((2j * math.pi * n) ** order)
                     * jet_exp((1j * math.pi * mp.tau * n * n) + (2j * math.pi * n) * z))
    return _ordered_sum(terms)


def theta_basis(k: int, n: int, w, z, mp: ModularParam):
    """Basis section theta_k of the degree-n bundle with translation w.

    theta_k(z) = sum_{m in nZ + k} exp((pi i tau m^2 + 2 pi i m (n z + w)) / n),
    for 0 <= k < n.  For n = 1, w = 0 this is theta(z).
    """
    if n <= 0:
        raise ValueError("theta_basis needs positive degree")
    if not 0 <= k < n:
        raise ValueError("k out of range")
    drift = abs(_imag_std(z)) + abs(_imag_std(w)) / n
    m_max = mp.theta_cutoff(drift, 1.0 / n)
    terms = []
    m = k - ((k + m_max) // n) * n
    while m <= m_max:
        quad = 1j * math.pi * mp.tau * m * m / n
        terms.append(jet_exp(quad + (2j * math.pi * m / n) * (n * z + w)))
        m += n
    return _ordered_sum(terms)


def _ordered_sum(terms):
    """Deterministic pairwise reduction (same order regardless of threading)."""
    if not terms:
        raise ValueError("empty sum")
    work = list(terms)
    while len(work) > 1:
        nxt = []
        for i in range(0, len(work) - 1, 2):
            nxt.append(work[i] + work[i + 1])
        if len(work) % 2:
            nxt.append(work[-1])
        work = nxt
    return work[0]


def alpha_coefficient(z, mp: ModularParam):
    """Coefficient of dz-bar in the (0,1)-form dual to theta.

    alpha(z) = i/sqrt(2 Im tau) * conj(theta(z)) * exp(-2 pi Im(tau) z2^2) dz-bar.
    Scalar z only (the form is not holomorphic; jet shifts of it are handled
    by the callers through dedicated expansions).
    """
    z = np.asarray(z, dtype=complex)
    z2 = np.imag(z) / mp.im
    th = theta(z, mp)
    return (1j / math.sqrt(2 * mp.im)) * np.conj(th) * np.exp(-2 * math.pi * mp.im * z2 ** 2)


def dual_class_coefficient(k: int, n: int, w: complex, z, mp: ModularParam):
    """Coefficient of dz-bar of the H^1 class dual to theta_k of the
    degree-n, translation-w bundle (Serre pairing value delta_{kl}).

    For n = 1, w = 0 this is alpha; in general
    e_k(z) = i sqrt(n/(2 Im tau)) exp(-2 pi Im(w)^2/(n Im tau))
             conj(theta_k(z)) exp(-2 pi n Im(tau) z2^2 - 4 pi Im(w) z2).
    """
    z = np.asarray(z, dtype=complex)
    z2 = np.imag(z) / mp.im
    tb = theta_basis(k, n, w, z, mp)
    const = 1j * math.sqrt(n / (2 * mp.im)) * math.exp(-2 * math.pi * (w.imag ** 2) / (n * mp.im))
    return const * np.conj(tb) * np.exp(-2 * math.pi * n * mp.im * z2 ** 2 - 4 * math.pi * w.imag * z2)


def _h_term(m: int, n: int, z, u, mp: ModularParam):
    gamma = m * mp.tau - n
    if abs(complex(np.asarray(_std(gamma + u)).ravel()[0])) < mp.pole_tol:
        raise PoleError(f"pole of h at lattice point gamma = {gamma}")
    z_std = np.asarray(_std(z))
    z2 = np.imag(z_std) / mp.im
    z1 = np.real(z_std) - mp.tau.real * z2
    # z enters only through its real coordinates; a jet shift of z acts in the
    # holomorphic direction only: d/dz z1 = -conj(tau)/(tau-conj(tau)),
    # d/dz z2 = 1/(tau-conj(tau)).
    if isinstance(z, Jet2):
        dz = z - z_std
        denom = mp.tau - np.conj(mp.tau)
        z1j = z1 + dz * (-np.conj(mp.tau) / denom)
        z2j = z2 + dz * (1.0 / denom)
    else:
        z1j, z2j = z1, z2
    quad = (-math.pi / (2 * mp.im)) * (abs(gamma) ** 2 + 2 * np.conj(gamma) * u + u * u)
    lin = 2j * math.pi * (m * z1j + (n - u) * z2j)
    return ((-1) ** (m * n)) * jet_exp(quad + lin) * jet_inv(gamma + u, mp.pole_tol)


def _gram_eigen(tau: complex):
    """Eigenvalue range of the form |m*tau - n|^2 on Z^2."""
    a, b = abs(tau) ** 2, -tau.real
    tr, det = a + 1.0, a - b * b
    disc = math.sqrt(max(tr * tr - 4 * det, 0.0))
    return (tr - disc) / 2.0, (tr + disc) / 2.0


def h_function(z, u, mp: ModularParam, order: str = "square"):
    """The explicit d-bar primitive h(z, u); pole when u hits the lattice.

    ``order`` selects the summation order: "square" (shells by max(|m|,|n|))
    or "diagonal" (shells by |m|+|n|), for cross-validation.
    """
    if order not in ("square", "diagonal"):
        raise ValueError("unknown summation order")
    lam_min, lam_max = _gram_eigen(mp.tau)
    u_std = complex(np.asarray(_std(u)).ravel()[0])
    z2_max = _imag_std(z) / mp.im
    # |term| <= exp(-pi/(2 Im tau) (lam_min r^2 - 2 sqrt(lam_max) r |u|) + c)
    budget = math.log(1.0 / mp.tol) + (math.pi / (2 * mp.im)) * abs(u_std) ** 2 \
        + 2 * math.pi * abs(u_std.imag) * (z2_max + 1.0) + 5.0
    drift = abs(u_std) * math.sqrt(lam_max) / lam_min
    rad = int(math.ceil(drift + math.sqrt(2 * mp.im * budget / (math.pi * lam_min)))) + 2
    if rad > mp.max_index:
        raise CutoffError(f"h cutoff {rad} exceeds max_index {mp.max_index}")
    terms = []
    last_shell_mag = math.inf
    shell_range = range(rad + 1) if order == "square" else range(2 * rad + 1)
    for s in shell_range:
        if order == "square":
            shell = [(m, n) for m in range(-s, s + 1) for n in range(-s, s + 1)
                     if max(abs(m), abs(n)) == s]
        else:
            shell = [(m, n) for m in range(-s, s + 1) for n in range(-s, s + 1)
                     if abs(m) + abs(n) == s]
        last_shell_mag = 0.0
        for (m, n) in shell:
            term = _h_term(m, n, z, u, mp)
            terms.append(term)
            last_shell_mag = max(last_shell_mag,
                                 float(np.max(np.abs(np.asarray(_std(term))))))
    if last_shell_mag > mp.tol:
        raise CutoffError("h series tail above tolerance at cutoff")
    pref = -1.0 / (2j * math.pi)
    return pref * _ordered_sum(terms)


THETA_NULL_SHIFT = 0.5  # z0 = (tau+1)/2, where theta vanishes


def _z0(mp: ModularParam) -> complex:
    return (mp.tau + 1.0) / 2.0


def kronecker_f_theta(t, u, mp: ModularParam):
    """F(t,u) as the theta quotient
    theta'(z0) theta(t-u+z0) / (2 pi i theta(t+z0) theta(-u+z0)), z0=(tau+1)/2.
    """
    z0 = _z0(mp)
    dth = theta_deriv(z0, mp)
    num = theta(t - u + z0, mp)
    d1 = theta(t + z0, mp)
    d2 = theta((-1.0) * u + z0, mp)
    scale = abs(dth)  # natural scale of theta near its zero
    for d in (d1, d2):
        if np.min(np.abs(np.asarray(_std(d)))) < mp.pole_tol * scale:
            raise PoleError("pole of F: denominator theta vanishes to tolerance")
    return dth * num * jet_inv(d1, 0.0) * jet_inv(d2, 0.0) / (2j * math.pi)


def kronecker_f_lattice(t, u, mp: ModularParam):
    """F(t,u) as the signed lattice sum over (m - t2)(n + u2) > 0.

    sum sign(m - t2) exp(2 pi i tau m n + 2 pi i (m u - n t)); requires
    t2, u2 not in Z (otherwise the region degenerates).
    """
    t2 = _im_signed(t) / mp.im
    u2 = _im_signed(u) / mp.im
    if min(abs(t2 - round(t2)), abs(u2 - round(u2))) < 1e-9:
        raise PoleError("lattice route needs t2, u2 not in Z")
    terms = []
    # positive branch: m > t2, n > -u2 ; negative branch: m < t2, n < -u2
    for (m0, n0, step, sign) in ((math.ceil(t2), math.ceil(-u2), 1, 1.0),
                                 (math.floor(t2), math.floor(-u2), -1, -1.0)):
        tail_hit = False
        for a in range(mp.max_index):
            m = m0 + step * a
            row = []
            for b in range(mp.max_index):
                n = n0 + step * b
                term = sign * jet_exp(2j * math.pi * (mp.tau * m * n + m * u - n * t))
                row.append(term)
                mag = float(np.max(np.abs(np.asarray(_std(term)))))
                if mag < mp.tol * 1e-3 and b > 2:
                    break
            else:
                raise CutoffError("lattice sum: inner index bound hit")
            terms.extend(row)
            first = float(np.max(np.abs(np.asarray(_std(row[0])))))
            if first < mp.tol * 1e-3 and a > 2:
                tail_hit = True
                break
        if not tail_hit:
            raise CutoffError("lattice sum: outer index bound hit")
    return _ordered_sum(terms)


@dataclass
class KernelSuite:
    """Convenience wrapper fixing a ModularParam for repeated evaluations."""

    mp: ModularParam
    _cache: dict = field(default_factory=dict)

    def theta(self, z):
        return theta(z, self.mp)

    def h(self, z, u, order: str = "square"):
        return h_function(z, u, self.mp, order)

    def f_theta(self, t, u):
        return kronecker_f_theta(t, u, self.mp)

    def f_lattice(self, t, u):
        return kronecker_f_lattice(t, u, self.mp)
