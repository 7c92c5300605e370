"""Holomorphic side at desk scale.

Bundles are L(0)^{n-1} (x) L(u) (x) V_N with N nilpotent.  A morphism
between two bundles lives in H^0 (positive hom degree, theta basis) or H^1
(negative degree, basis dual to the theta basis of the inverse bundle
under the Serre pairing); coefficients are matrices over generators
shifted by the boundary nilpotents through eta(z) -> eta(z - A/d).

Everything is computed from honest section/form values on a torus grid:

* products of morphisms are pointwise matrix products of their fields;
* coefficients are extracted with the Serre pairing against the dual
  basis of the reverse hom space (this is exactly the harmonic projection
  in the canonical metrics: all jet cross-terms integrate to zero);
* the (1,-1,1) triple product has the closed Kronecker-function form;
  (-1,1,1), (1,1,-1), (-1,1,-1) are assembled from translates of the
  explicit d-bar primitive h; higher weights reduce to these through
  arity-4 constraints along independently chosen degree-1 factorizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as iproduct

import numpy as np

from .jets import Jet2, nilpotency_index
from .kernels import (
    ModularParam,
    dual_class_coefficient,
    h_function,
    kronecker_f_theta,
    theta_basis,
)


class NonTransversalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# bundles, hom spaces, morphisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BundleData:
    """L(0)^(n-1) (x) L(u) (x) V_N; the rank is the size of N."""

    degree: int
    translation: complex
    nil: object = None

    def __post_init__(self):
        n = np.zeros((1, 1), dtype=complex) if self.nil is None \
            else np.asarray(self.nil, dtype=complex)
        object.__setattr__(self, "nil", n)
        nilpotency_index(n)  # raises if not nilpotent

    @property
    def rank(self) -> int:
        return self.nil.shape[0]

    def tensor_line(self, degree: int, translation: complex) -> "BundleData":
        return BundleData(self.degree + degree, self.translation + translation, self.nil)

    def u12(self, tau: complex):
        u2 = self.translation.imag / tau.imag
        u1 = self.translation.real - tau.real * u2
        return u1, u2


def transversal_pair(a: BundleData, b: BundleData, tau: complex) -> bool:
    if a.degree != b.degree:
        return True
    _, a2 = a.u12(tau)
    _, b2 = b.u12(tau)
    d = (a2 - b2) % 1.0
    return min(d, 1.0 - d) > 1e-9


def transversal_collection(bundles, tau: complex) -> bool:
    bundles = list(bundles)
    return all(transversal_pair(bundles[i], bundles[j], tau)
               for i in range(len(bundles)) for j in range(i + 1, len(bundles)))


@dataclass(frozen=True)
class HomSpace:
    src: BundleData
    dst: BundleData

    @property
    def degree(self) -> int:
        return self.dst.degree - self.src.degree

    @property
    def translation(self) -> complex:
        return self.dst.translation - self.src.translation

    @property
    def dim_line(self) -> int:
        return abs(self.degree)

    @property
    def shape(self):
        return (self.dst.rank, self.src.rank)

    @property
    def parity(self) -> int:
        return 0 if self.degree > 0 else 1

    def reverse(self) -> "HomSpace":
        return HomSpace(self.dst, self.src)


@dataclass
class Morphism:
    """Coefficients coeff[k] over the k-th (shifted) generator of the hom space."""

    hom: HomSpace
    coeff: np.ndarray

    def __post_init__(self):
        want = (self.hom.dim_line,) + self.hom.shape
        self.coeff = np.asarray(self.coeff, dtype=complex)
        if self.coeff.shape != want:
            raise ValueError(f"coefficient shape {self.coeff.shape}, want {want}")

    @staticmethod
    def zero(hom: HomSpace) -> "Morphism":
        return Morphism(hom, np.zeros((hom.dim_line,) + hom.shape, dtype=complex))

    @staticmethod
    def basis(hom: HomSpace, k: int, row: int = 0, col: int = 0) -> "Morphism":
        m = Morphism.zero(hom)
        m.coeff[k, row, col] = 1.0
        return m

    def __add__(self, other):
        assert self.hom == other.hom
        return Morphism(self.hom, self.coeff + other.coeff)

    def __sub__(self, other):
        assert self.hom == other.hom
        return Morphism(self.hom, self.coeff - other.coeff)

    def __mul__(self, c):
        return Morphism(self.hom, self.coeff * c)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.max(np.abs(self.coeff))) if self.coeff.size else 0.0


def hom_basis(hom: HomSpace):
    return [(k, r, c) for k in range(hom.dim_line)
            for r in range(hom.shape[0]) for c in range(hom.shape[1])]


# ---------------------------------------------------------------------------
# torus grid and fields
# ---------------------------------------------------------------------------

@dataclass
class TorusGrid:
    mp: ModularParam
    n: int = 48

    def __post_init__(self):
        i = (np.arange(self.n) + 0.5) / self.n
        z1, z2 = np.meshgrid(i, i, indexing="ij")
        self.z1 = z1.ravel()
        self.z2 = z2.ravel()
        self.z = self.z1 + self.mp.tau * self.z2
        # dz ^ dz-bar = -2i Im(tau) dz1 dz2; mean over midpoints integrates
        self.measure = -2j * self.mp.im / self.z.size


def _sandwich_powers(mat, n_left, n_right, orders):
    """(L - R)^m [mat] for m < orders: L = left mult by n_left, R = right by n_right."""
    ol, orr = nilpotency_index(n_left), nilpotency_index(n_right)
    lp = [np.eye(n_left.shape[0], dtype=complex)]
    for _ in range(ol - 1):
        lp.append(lp[-1] @ n_left)
    rp = [np.eye(n_right.shape[0], dtype=complex)]
    for _ in range(orr - 1):
        rp.append(rp[-1] @ n_right)
    out = []
    for m in range(orders):
        acc = np.zeros_like(mat)
        for a in range(m + 1):
            b = m - a
            if a >= ol or b >= orr:
                continue
            acc = acc + math.comb(m, a) * ((-1) ** b) * (lp[a] @ mat @ rp[b])
        out.append(acc)
    return out


def _theta_jets(k, d, w, grid: TorusGrid, order: int):
    """(1/m!) d^m/dz^m theta_k^{(d,w)} on the grid for m < order."""
    if order == 1:
        return [theta_basis(k, d, w, grid.z, grid.mp)]
    zj = Jet2(np.zeros((order, 1, grid.z.size), dtype=complex))
    zj.coeff[0, 0] = grid.z
    zj.coeff[1, 0] = np.ones(grid.z.size)
    vals = theta_basis(k, d, w, zj, grid.mp)
    return [vals.coeff[m, 0] for m in range(order)]


def _dual_jets(k, d, w, grid: TorusGrid, order: int):
    """(1/m!) (d/dz)^m of the dual-class coefficient e_k^{(d,w)} on the grid.

    Only the holomorphic direction moves: conj(theta_k) is annihilated by
    d/dz and the Gaussian weight shifts through z2 -> z2 + s/(tau - conj tau).
    """
    mp = grid.mp
    base = dual_class_coefficient(k, d, w, grid.z, mp)
    if order == 1:
        return [base]
    dz2 = 1.0 / (mp.tau - np.conj(mp.tau))
    # weight exponent G(z2) = -2 pi d Im(tau) z2^2 - 4 pi Im(w) z2
    a2 = -2 * math.pi * d * mp.im
    a1 = -4 * math.pi * w.imag
    shift = Jet2(np.zeros((order, 1, grid.z.size), dtype=complex))
    shift.coeff[0, 0] = grid.z2
    shift.coeff[1, 0] = dz2 * np.ones(grid.z.size)
    expo = (shift * shift) * a2 + shift * a1
    expo = expo - np.asarray(expo.coeff[0, 0])  # subtract G(z2): exp(0)=1 branch
    gauss = expo.exp()
    return [base * gauss.coeff[m, 0] for m in range(order)]


def h0_field(mor: Morphism, grid: TorusGrid) -> np.ndarray:
    """Honest section values: sum_k theta_k^{(d,w)}(z - A/d)[W_k], A = L - R."""
    hom = mor.hom
    if hom.degree <= 0:
        raise ValueError("h0_field needs positive degree")
    d, w = hom.degree, hom.translation
    nl, nr = hom.dst.nil, hom.src.nil
    order = nilpotency_index(nl) + nilpotency_index(nr) - 1
    out = np.zeros(hom.shape + (grid.z.size,), dtype=complex)
    for k in range(d):
        if not np.any(mor.coeff[k]):
            continue
        jets = _theta_jets(k, d, w, grid, order)
        sand = _sandwich_powers(mor.coeff[k], nl, nr, order)
        for m in range(order):
            out += ((-1.0 / d) ** m) * sand[m][:, :, None] * jets[m][None, None, :]
    return out


def h1_field(mor: Morphism, grid: TorusGrid) -> np.ndarray:
    """Form values of an H^1 morphism: dual classes shifted by +A/|d|."""
    hom = mor.hom
    if hom.degree >= 0:
        raise ValueError("h1_field needs negative degree")
    d = -hom.degree
    w = -hom.translation  # dual classes of the inverse bundle
    nl, nr = hom.dst.nil, hom.src.nil
    order = nilpotency_index(nl) + nilpotency_index(nr) - 1
    out = np.zeros(hom.shape + (grid.z.size,), dtype=complex)
    for k in range(d):
        if not np.any(mor.coeff[k]):
            continue
        jets = _dual_jets(k, d, w, grid, order)
        sand = _sandwich_powers(mor.coeff[k], nl, nr, order)
        for m in range(order):
            out += ((1.0 / d) ** m) * sand[m][:, :, None] * jets[m][None, None, :]
    return out


def field(mor: Morphism, grid: TorusGrid) -> np.ndarray:
    return h0_field(mor, grid) if hom_sign(mor.hom) > 0 else h1_field(mor, grid)


def hom_sign(hom: HomSpace) -> int:
    if hom.degree == 0:
        raise NonTransversalError("degree-0 hom between transversal bundles is zero")
    return 1 if hom.degree > 0 else -1


def mat_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise composition of fields: (b after a)(z)."""
    return np.einsum("ikg,kjg->ijg", b, a)


def pair_fields(f_h0: np.ndarray, g_h1: np.ndarray, grid: TorusGrid) -> complex:
    """Serre pairing integral dz ^ Tr(f o g dz-bar) from field values."""
    tr = np.einsum("ijg,jig->g", f_h0, g_h1)
    return complex(grid.measure * tr.sum())


def extract_h0(fld: np.ndarray, hom: HomSpace, grid: TorusGrid) -> Morphism:
    """Harmonic-projection coefficients of a (possibly non-holomorphic) field,
    read off by pairing against the dual basis of the reverse hom space."""
    rev = hom.reverse()
    out = Morphism.zero(hom)
    for k in range(hom.dim_line):
        for r in range(rev.shape[0]):
            for c in range(rev.shape[1]):
                b = h1_field(Morphism.basis(rev, k, r, c), grid)
                val = pair_fields(fld, b, grid)
                # b(theta_k[W], e_k[E_rc]) = Tr(W E_rc) = W[c, r]
                out.coeff[k, c, r] = val
    return out


def extract_h1(fld: np.ndarray, hom: HomSpace, grid: TorusGrid) -> Morphism:
    rev = hom.reverse()
    out = Morphism.zero(hom)
    for k in range(hom.dim_line):
        for r in range(rev.shape[0]):
            for c in range(rev.shape[1]):
                b = h0_field(Morphism.basis(rev, k, r, c), grid)
                val = pair_fields(b, fld, grid)
                out.coeff[k, c, r] = val
    return out


def multiply(x: Morphism, y: Morphism, grid: TorusGrid,
             check: bool = True, tol: float = 1e-8) -> Morphism:
    """Composition product m_2(x, y) for x: X->Y, y: Y->Z.

    H0*H0 -> H0 and H0*H1/H1*H0 -> H1; a degree-0 target means the product
    vanishes identically (transversal bundles have no degree-0 homs).
    """
    if x.hom.dst != y.hom.src:
        raise NonTransversalError("morphisms are not composable")
    out_hom = HomSpace(x.hom.src, y.hom.dst)
    if x.hom.dim_line == 0 or y.hom.dim_line == 0 or out_hom.degree == 0:
        return Morphism.zero(out_hom)
    if x.hom.parity + y.hom.parity > 1:
        raise ValueError("product of two odd morphisms vanishes (no H^2)")
    prod = mat_product(field(x, grid), field(y, grid))
    if out_hom.degree > 0:
        out = extract_h0(prod, out_hom, grid)
        if check:
            back = h0_field(out, grid)
            err = float(np.max(np.abs(back - prod)))
            scale = max(float(np.max(np.abs(prod))), 1e-30)
            if err > tol * scale:
                raise ArithmeticError(f"product fit residual {err/scale:.2e}")
    else:
        out = extract_h1(prod, out_hom, grid)
    return out


# ---------------------------------------------------------------------------
# d-bar primitives of adjacent (section, class) products
# ---------------------------------------------------------------------------

class SlotPoly:
    """Truncated polynomial in chain-insertion slots with array coefficients."""

    def __init__(self, orders, terms=None):
        self.orders = tuple(orders)
        self.terms = dict(terms or {})

    @staticmethod
    def constant(value, orders):
        return SlotPoly(orders, {tuple(0 for _ in orders): value})

    def __add__(self, other):
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v
        return SlotPoly(self.orders, out)

    def __mul__(self, other):
        if not isinstance(other, SlotPoly):
            return SlotPoly(self.orders, {k: v * other for k, v in self.terms.items()})
        out = {}
        for ka, va in self.terms.items():
            for kb, vb in other.terms.items():
                key = tuple(a + b for a, b in zip(ka, kb))
                if any(k >= o for k, o in zip(key, self.orders)):
                    continue
                prod = va * vb
                out[key] = out[key] + prod if key in out else prod
        return SlotPoly(self.orders, out)

    __rmul__ = __mul__


def jet2_on_slots(jet: Jet2, dir1, dir2, orders) -> SlotPoly:
    """Substitute linear slot forms for the two jet variables."""
    lin = []
    for direction in (dir1, dir2):
        p = SlotPoly(orders)
        for i, lam in enumerate(direction):
            if lam != 0:
                key = tuple(1 if j == i else 0 for j in range(len(orders)))
                p.terms[key] = p.terms.get(key, 0) + lam
        lin.append(p)
    m1, m2 = jet.orders
    pow1 = [SlotPoly.constant(1.0 + 0j, orders)]
    for _ in range(m1 - 1):
        pow1.append(pow1[-1] * lin[0])
    pow2 = [SlotPoly.constant(1.0 + 0j, orders)]
    for _ in range(m2 - 1):
        pow2.append(pow2[-1] * lin[1])
    out = SlotPoly(orders)
    for i in range(m1):
        for j in range(m2):
            c = jet.coeff[i, j]
            if not np.any(c):
                continue
            out = out + (pow1[i] * pow2[j]) * c
    return out


def contract_chain(poly: SlotPoly, mats, nils, shape, gsize) -> np.ndarray:
    """sum_p coeff_p(z) N_s^{p_s} W_s ... W_1 N_0^{p_0} as a matrix-grid."""
    npow = []
    for n in nils:
        p = [np.eye(n.shape[0], dtype=complex)]
        for _ in range(nilpotency_index(n) - 1):
            p.append(p[-1] @ n)
        npow.append(p)
    out = np.zeros(shape + (gsize,), dtype=complex)
    for key, c in poly.terms.items():
        if any(k >= len(npow[i]) for i, k in enumerate(key)):
            continue
        chain = npow[0][key[0]]
        for i, w in enumerate(mats):
            chain = npow[i + 1][key[i + 1]] @ (w @ chain)
        out += chain[:, :, None] * np.asarray(c).reshape(1, 1, -1)
    return out


def prim_product_field(x: Morphism, y: Morphism, grid: TorusGrid) -> np.ndarray:
    """The d-bar primitive of the product field of adjacent degree +-1
    morphisms x: X->Y, y: Y->Z of opposite parities, via translates of h.

    For s = theta(z + a - A_x) and e = alpha-type(z - b + A_y)-style data,
    prim(pointwise product) = h with jet arguments in the three insertion
    slots (right of W_x, middle, left of W_y).
    """
    if x.hom.dst != y.hom.src:
        raise NonTransversalError("not composable")
    if {x.hom.degree, y.hom.degree} != {1, -1}:
        raise ValueError("prim needs degrees (+1,-1) or (-1,+1)")
    n0, n1, n2 = x.hom.src.nil, x.hom.dst.nil, y.hom.dst.nil
    orders = (nilpotency_index(n0), nilpotency_index(n1), nilpotency_index(n2))
    wx, wy = x.hom.translation, y.hom.translation
    gz = grid.z.size
    o1_tot = orders[1] + orders[2] - 1 if x.hom.degree == 1 else orders[0] + orders[1] - 1
    o2_tot = orders[0] + orders[2] - 1
    if x.hom.degree == 1:
        # prim[theta(z+wx-(a1-a0)) alpha(z-wy+(a2-a1))] = h(z-wy+(a2-a1), wx+wy-(a2-a0))
        zc = grid.z - wy
        uc = wx + wy
        dir1 = (0.0, -1.0, 1.0)
        dir2 = (1.0, 0.0, -1.0)
    else:
        # prim[alpha(z-wx+(a1-a0)) theta(z+wy-(a2-a1))] = h(z-wx+(a1-a0), wx+wy-(a2-a0))
        zc = grid.z - wx
        uc = wx + wy
        dir1 = (-1.0, 1.0, 0.0)
        dir2 = (1.0, 0.0, -1.0)
    zj = Jet2(np.zeros((max(o1_tot, 1), max(o2_tot, 1), gz), dtype=complex))
    zj.coeff[0, 0] = zc
    if o1_tot > 1:
        zj.coeff[1, 0] = np.ones(gz)
    uj = Jet2(np.zeros((max(o1_tot, 1), max(o2_tot, 1), 1), dtype=complex))
    uj.coeff[0, 0] = uc
    if o2_tot > 1:
        uj.coeff[0, 1] = 1.0
    hval = h_function(zj, uj, grid.mp)
    poly = jet2_on_slots(hval, dir1, dir2, orders)
    shape = (y.hom.dst.rank, x.hom.src.rank)
    acc = np.zeros(shape + (gz,), dtype=complex)
    for kx in range(1):
        acc += contract_chain(poly, [x.coeff[0], y.coeff[0]], [n0, n1, n2], shape, gz)
    return acc


# ---------------------------------------------------------------------------
# triple products
# ---------------------------------------------------------------------------

def m3_closed_form(x1: Morphism, x2: Morphism, x3: Morphism,
                   mp: ModularParam) -> Morphism:
    """Signature (1,-1,1): coefficient -Tr(F(jets) . chain) over the shifted
    generator of the output hom space (no grids involved)."""
    degs = (x1.hom.degree, x2.hom.degree, x3.hom.degree)
    if degs != (1, -1, 1):
        raise ValueError(f"closed form needs (1,-1,1), got {degs}")
    _check_chain(x1, x2, x3)
    w1, w2, w3 = (x.hom.translation for x in (x1, x2, x3))
    n0 = x1.hom.src.nil
    n1 = x1.hom.dst.nil
    n2 = x2.hom.dst.nil
    n3 = x3.hom.dst.nil
    orders = tuple(nilpotency_index(n) for n in (n0, n1, n2, n3))
    o_t = orders[0] + orders[2] - 1
    o_u = orders[1] + orders[3] - 1
    jt = Jet2.variable(w1 + w2, 0, (max(o_t, 2), max(o_u, 2)))
    ju = Jet2.variable(w3 + w2, 1, (max(o_t, 2), max(o_u, 2)))
    fj = kronecker_f_theta(jt, ju, mp)
    # F(t - N2 + N0^*, u - N3 + N1^*): slot directions over (a0, a1, a2, a3)
    poly = jet2_on_slots(fj, (1.0, 0.0, -1.0, 0.0), (0.0, 1.0, 0.0, -1.0), orders)
    out_hom = HomSpace(x1.hom.src, x3.hom.dst)
    shape = out_hom.shape
    w = contract_chain(poly, [x1.coeff[0], x2.coeff[0], x3.coeff[0]],
                       [n0, n1, n2, n3], shape, 1)
    return Morphism(out_hom, -w[None, :, :, 0])


def _check_chain(*mors):
    for a, b in zip(mors, mors[1:]):
        if a.hom.dst != b.hom.src:
            raise NonTransversalError("chain of morphisms is not composable")


@dataclass
class TripleProductH:
    """Holomorphic triple-product provider.

    Dispatches between the closed form, the h-based Hodge assembly, and
    arity-4 reductions through degree-1 factorizations with auxiliary
    bundles drawn from a seeded generator (independent of any identity
    under test).
    """

    mp: ModularParam
    grid_n: int = 48
    seed: int = 2024
    check_transversal: bool = True

    def __post_init__(self):
        self.grid = TorusGrid(self.mp, self.grid_n)
        self._rng = np.random.default_rng(self.seed)

    # -- public ------------------------------------------------------------
    def m2(self, x: Morphism, y: Morphism) -> Morphism:
        return multiply(x, y, self.grid)

    def m3(self, x1: Morphism, x2: Morphism, x3: Morphism) -> Morphism:
        _check_chain(x1, x2, x3)
        degs = (x1.hom.degree, x2.hom.degree, x3.hom.degree)
        out_hom = HomSpace(x1.hom.src, x3.hom.dst)
        if self.check_transversal:
            chain = [x1.hom.src, x1.hom.dst, x2.hom.dst, x3.hom.dst]
            if not transversal_collection(chain, self.mp.tau):
                raise NonTransversalError("triple-product chain not transversal")
        if out_hom.degree == 0 or any(m.hom.dim_line == 0 for m in (x1, x2, x3)):
            return Morphism.zero(out_hom)
        if sum(1 for d in degs if d < 0) != 1:
            raise ValueError("providers cover exactly one H^1 input")
        if any(m.norm() == 0.0 for m in (x1, x2, x3)):
            return Morphism.zero(out_hom)
        if degs == (1, -1, 1):
            return m3_closed_form(x1, x2, x3, self.mp)
        if degs == (1, 1, -1):
            g = prim_product_field(x2, x3, self.grid)
            s1 = h0_field(x1, self.grid)
            return -1.0 * extract_h0(mat_product(s1, g), out_hom, self.grid)
        if degs == (-1, 1, 1):
            g = prim_product_field(x1, x2, self.grid)
            s3 = h0_field(x3, self.grid)
            return extract_h0(mat_product(g, s3), out_hom, self.grid)
        if degs[0] >= 2 and degs[1] < 0:
            return self._reduce_first(x1, x2, x3)
        if degs[2] >= 2:
            return self._reduce_third(x1, x2, x3)
        raise ValueError(f"signature {degs} outside the implemented range")

    def m3_form(self, x1: Morphism, x2: Morphism, x3: Morphism) -> np.ndarray:
        """Signature (-1,1,-1): the H^1-valued product as a form field
        p[prim(x1 x2) x3 + x1 prim(x2 x3)] (used through pairings only,
        where the harmonic projection is invisible)."""
        degs = (x1.hom.degree, x2.hom.degree, x3.hom.degree)
        if degs != (-1, 1, -1):
            raise ValueError("m3_form covers (-1,1,-1)")
        g12 = prim_product_field(x1, x2, self.grid)
        g23 = prim_product_field(x2, x3, self.grid)
        e1 = h1_field(x1, self.grid)
        e3 = h1_field(x3, self.grid)
        return mat_product(g12, e3) + mat_product(e1, g23)

    # -- reductions ----------------------------------------------------------
    def _aux_bundle(self, degree: int, avoid, max_tries: int = 40) -> BundleData:
        for _ in range(max_tries):
            u = complex(self._rng.uniform(-0.45, 0.45),
                        self._rng.uniform(0.1, 0.9) * self.mp.im)
            cand = BundleData(degree, u)
            if transversal_collection(list(avoid) + [cand], self.mp.tau):
                return cand
        raise NonTransversalError("could not draw a transversal auxiliary bundle")

    def _factor_through(self, x: Morphism, first: bool):
        """Write x (H^0, degree >= 2) as a sum of m2(s_a, s_b) with the unit
        degree on the requested side, through rank-one auxiliary objects with
        independently drawn translations."""
        hom = x.hom
        avoid = [hom.src, hom.dst]
        pieces, rows = [], []
        for _ in range(2):
            if first:
                mid = self._aux_bundle(hom.src.degree + 1, avoid)
            else:
                mid = self._aux_bundle(hom.dst.degree - 1, avoid)
            avoid.append(mid)
            h_a = HomSpace(hom.src, mid)
            h_b = HomSpace(mid, hom.dst)
            for ka, ra, ca in hom_basis(h_a):
                sa = Morphism.basis(h_a, ka, ra, ca)
                for kb, rb, cb in hom_basis(h_b):
                    sb = Morphism.basis(h_b, kb, rb, cb)
                    prod = multiply(sa, sb, self.grid)
                    pieces.append((sa, sb))
                    rows.append(prod.coeff.ravel())
        a = np.array(rows).T
        sol, *_ = np.linalg.lstsq(a, x.coeff.ravel(), rcond=None)
        resid = float(np.max(np.abs(a @ sol - x.coeff.ravel())))
        if resid > 1e-7 * max(1.0, float(np.max(np.abs(x.coeff)))):
            raise ArithmeticError(f"factorization residual {resid:.2e}")
        return [(c, sa, sb) for c, (sa, sb) in zip(sol, pieces) if abs(c) > 1e-12]

    def _reduce_first(self, x1, x2, x3):
        """m3(sa sb, e, x3) = m2(m3(sa,sb,e), x3) + m2(sa, m3(sb,e,x3))
        + m3(sa, sb e, x3) - m3(sa, sb, e x3)."""
        out_hom = HomSpace(x1.hom.src, x3.hom.dst)
        acc = Morphism.zero(out_hom)
        for c, sa, sb in self._factor_through(x1, first=True):
            t1 = self.m2(self.m3(sa, sb, x2), x3)
            t2 = self.m2(sa, self.m3(sb, x2, x3))
            t3 = self.m3(sa, self.m2(sb, x2), x3)
            t4 = self.m3(sa, sb, self.m2(x2, x3))
            for t, sgn in ((t1, 1), (t2, 1), (t3, 1), (t4, -1)):
                if t.norm() > 0:
                    acc = acc + (c * sgn) * t
        return acc

    def _reduce_third(self, x1, x2, x3):
        """m3(x1, e, sc sd) = m2(m3(x1,e,sc), sd) + m2(x1, m3(e,sc,sd))
        - m3(m2(x1,e), sc, sd) + m3(x1, m2(e,sc), sd)."""
        out_hom = HomSpace(x1.hom.src, x3.hom.dst)
        acc = Morphism.zero(out_hom)
        for c, sc, sd in self._factor_through(x3, first=False):
            t1 = self.m2(self.m3(x1, x2, sc), sd)
            t2 = self.m2(x1, self.m3(x2, sc, sd))
            t3 = self.m3(self.m2(x1, x2), sc, sd)
            t4 = self.m3(x1, self.m2(x2, sc), sd)
            for t, sgn in ((t1, 1), (t2, 1), (t3, -1), (t4, 1)):
                if t.norm() > 0:
                    acc = acc + (c * sgn) * t
        return acc


# ---------------------------------------------------------------------------
# spec'd standalone operations
# ---------------------------------------------------------------------------

def m2_structure_constants(l1: BundleData, l2: BundleData, mp: ModularParam,
                           seed: int = 0, samples: int = None):
    """Multiplication tensor of rank-1 theta bases by sampling + least squares.

    Returns c[k1, k2, k] with theta_k1 theta_k2 = sum_k c theta_k; resamples
    once on ill conditioning and validates the fit residual.
    """
    if l1.degree <= 0 or l2.degree <= 0:
        raise ValueError("structure constants need positive degrees")
    d1, d2 = l1.degree, l2.degree
    w1, w2 = l1.translation, l2.translation
    d, w = d1 + d2, w1 + w2
    if samples is None:
        samples = 6 * d
    for attempt in range(3):
        rng = np.random.default_rng(seed + attempt)
        zs = rng.uniform(-0.5, 0.5, samples) + \
            mp.tau * rng.uniform(-0.5, 0.5, samples)
        basis = np.array([theta_basis(k, d, w, zs, mp) for k in range(d)]).T
        if np.linalg.cond(basis) > 1e8:
            continue
        out = np.zeros((d1, d2, d), dtype=complex)
        ok = True
        for k1 in range(d1):
            for k2 in range(d2):
                prod = theta_basis(k1, d1, w1, zs, mp) * theta_basis(k2, d2, w2, zs, mp)
                sol, *_ = np.linalg.lstsq(basis, prod, rcond=None)
                if np.max(np.abs(basis @ sol - prod)) > 1e-9 * max(1.0, np.max(np.abs(prod))):
                    ok = False
                    break
                out[k1, k2] = sol
            if not ok:
                break
        if ok:
            return out
    raise ArithmeticError("ill-conditioned sample matrix, resampling failed")


def m3_h(t: complex, u: complex, nils, v01, v12, v23, mp: ModularParam) -> np.ndarray:
    """Closed-form triple product on the normalized degree (1,-1,1) chain:
    bundles (0; t,1; t,0; t+u,1) with unipotent factors nils = (N0..N3).
    Returns the matrix coefficient over theta(z + t + u - N3 + N0^*)."""
    n0, n1, n2, n3 = nils
    x0 = BundleData(0, 0.0, n0)
    x1 = BundleData(1, t, n1)
    x2 = BundleData(0, t, n2)
    x3 = BundleData(1, t + u, n3)
    m1 = Morphism(HomSpace(x0, x1), v01[None, :, :])
    m2_ = Morphism(HomSpace(x1, x2), v12[None, :, :])
    m3_ = Morphism(HomSpace(x2, x3), v23[None, :, :])
    return m3_closed_form(m1, m2_, m3_, mp).coeff[0]


def serre_pairing_numeric(f: Morphism, g: Morphism, grid_n: int,
                          mp: ModularParam) -> complex:
    """Quadrature of the Serre pairing integral over the fundamental domain."""
    if f.hom.degree <= 0 or g.hom.degree >= 0:
        raise ValueError("pairing takes (H^0, H^1) morphisms")
    if f.hom.degree != -g.hom.degree or f.hom.src != g.hom.dst or f.hom.dst != g.hom.src:
        raise ValueError("pairing needs Hom(X,Y) x Ext(Y,X) with opposite degrees")
    grid = TorusGrid(mp, grid_n)
    return pair_fields(h0_field(f, grid), h1_field(g, grid), grid)


@dataclass
class ExactnessReport:
    beta_surjective: bool
    beta_alpha_norm: float
    rank_alpha: int
    ker_beta_dim: int

    @property
    def exact(self) -> bool:
        return self.beta_surjective and self.beta_alpha_norm < 1e-9 \
            and self.rank_alpha == self.ker_beta_dim


def exactness_check(l: BundleData, family, mp: ModularParam,
                    tol: float = 1e-9) -> ExactnessReport:
    """Numerical exactness of

        (+) H0(L1)H0(L2)H0(L3) --alpha--> (+) H0(L1)H0(L2) --beta--> H0(L) -> 0

    restricted to splittings whose right factors lie in the finite family;
    alpha(s1, s2, s3) = s1 s2 (x) s3 - s1 (x) s2 s3, beta(s1, s2) = s1 s2.
    """
    deg = l.degree
    mid_blocks = []  # (M, L1) with L2 = M
    for m in family:
        if 0 < m.degree < deg:
            l1 = BundleData(deg - m.degree, l.translation - m.translation)
            mid_blocks.append((l1, m))
    left_blocks = []  # (L1, L2, L3): L3 = m3, L2 L3 = m23 in the family
    for m3_lab in family:
        for m23 in family:
            d2 = m23.degree - m3_lab.degree
            if m3_lab.degree <= 0 or d2 <= 0 or m23.degree >= deg:
                continue
            l2 = BundleData(d2, m23.translation - m3_lab.translation)
            l1 = BundleData(deg - m23.degree, l.translation - m23.translation)
            left_blocks.append((l1, l2, m3_lab, m23))
    if not mid_blocks:
        raise ValueError("family gives no middle terms")

    mid_dims = [b[0].degree * b[1].degree for b in mid_blocks]
    mid_off = np.concatenate([[0], np.cumsum(mid_dims)])
    mid_total = int(mid_off[-1])

    beta = np.zeros((deg, mid_total), dtype=complex)
    for bi, (l1, l2) in enumerate(mid_blocks):
        c = m2_structure_constants(l1, l2, mp)
        flat = c.reshape(l1.degree * l2.degree, deg).T
        beta[:, mid_off[bi]: mid_off[bi + 1]] = flat

    cols = []
    for (l1, l2, l3, m23) in left_blocks:
        bi_right = None
        bi_mid = None
        for i, (c1, c2) in enumerate(mid_blocks):
            if c2.degree == l3.degree and abs(c2.translation - l3.translation) < 1e-9:
                bi_right = i
            if c2.degree == m23.degree and abs(c2.translation - m23.translation) < 1e-9:
                bi_mid = i
        if bi_right is None or bi_mid is None:
            continue
        c12 = m2_structure_constants(l1, l2, mp)      # -> H0(L1 L2)
        c23 = m2_structure_constants(l2, l3, mp)      # -> H0(L2 L3)
        for k1 in range(l1.degree):
            for k2 in range(l2.degree):
                for k3 in range(l3.degree):
                    col = np.zeros(mid_total, dtype=complex)
                    l12 = mid_blocks[bi_right][0]
                    vec = np.zeros((l12.degree, l3.degree), dtype=complex)
                    vec[:, k3] = c12[k1, k2]
                    col[mid_off[bi_right]: mid_off[bi_right + 1]] = vec.ravel()
                    l1m = mid_blocks[bi_mid][0]
                    vec2 = np.zeros((l1m.degree, m23.degree), dtype=complex)
                    vec2[k1, :] = c23[k2, k3]
                    col[mid_off[bi_mid]: mid_off[bi_mid + 1]] -= vec2.ravel()
                    cols.append(col)
    alpha = np.array(cols).T if cols else np.zeros((mid_total, 0))

    ba = beta @ alpha if alpha.size else np.zeros((deg, 0))
    ba_norm = float(np.max(np.abs(ba))) if ba.size else 0.0
    sv_beta = np.linalg.svd(beta, compute_uv=False)
    surj = bool(sv_beta.size >= deg and sv_beta[deg - 1] > 1e-8)
    rank_a = int(np.sum(np.linalg.svd(alpha, compute_uv=False) > 1e-8)) if alpha.size else 0
    ker_b = mid_total - int(np.sum(sv_beta > 1e-8))
    return ExactnessReport(surj, ba_norm, rank_a, ker_b)


def identity_chain(l1p, l1pp, l2p, l2pp, m_bundle, start_nil=None):
    """Objects X0 -> .. -> X5 of the triple-product identity configuration."""
    x0 = BundleData(0, 0.0, start_nil)
    chain = [x0]
    for step in (l1p, l1pp, m_bundle, l2p, l2pp):
        prev = chain[-1]
        nil = step.nil if step.rank > 1 else prev.nil
        chain.append(BundleData(prev.degree + step.degree,
                                prev.translation + step.translation, nil))
    return chain


def triple_product_identity_residual(provider, l1p: BundleData, l1pp: BundleData,
                                     l2p: BundleData, l2pp: BundleData,
                                     m_bundle: BundleData, tau: complex,
                                     samples: int = 2, seed: int = 7,
                                     start_nil=None, wrong_sign: bool = False) -> float:
    """Relative residual of m3(s1's1'', e, s2's2'') = m3(s1', s1''e, s2') s2''
    + s1' m3(s1'', e s2', s2'') on random elements of the five hom spaces."""
    chain = identity_chain(l1p, l1pp, l2p, l2pp, m_bundle, start_nil)
    if not transversal_collection(chain, tau):
        raise NonTransversalError("identity chain not transversal")
    homs = [HomSpace(chain[i], chain[i + 1]) for i in range(5)]
    rng = np.random.default_rng(seed)
    second_sign = -1.0 if wrong_sign else 1.0
    worst = 0.0
    for _ in range(samples):
        s1p, s1pp, e, s2p, s2pp = (_random_morphism(h, rng) for h in homs)
        lhs = provider.m3(provider.m2(s1p, s1pp), e, provider.m2(s2p, s2pp))
        r1 = provider.m2(provider.m3(s1p, provider.m2(s1pp, e), s2p), s2pp)
        r2 = provider.m2(s1p, provider.m3(s1pp, provider.m2(e, s2p), s2pp))
        res = lhs - r1 - second_sign * r2
        scale = max(lhs.norm(), r1.norm(), r2.norm(), 1e-12)
        worst = max(worst, res.norm() / scale)
    return worst


def _random_morphism(hom: HomSpace, rng) -> Morphism:
    shape = (hom.dim_line,) + hom.shape
    return Morphism(hom, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def h0_dimension(l: BundleData, mp: ModularParam, seed: int = 1) -> int:
    """Numerical rank of the theta basis (= n for degree n > 0)."""
    d = l.degree
    if d <= 0:
        return 0
    rng = np.random.default_rng(seed)
    zs = rng.uniform(-0.5, 0.5, 3 * d) + mp.tau * rng.uniform(-0.5, 0.5, 3 * d)
    m = np.array([theta_basis(k, d, l.translation, zs, mp) for k in range(d)]).T
    return int(np.sum(np.linalg.svd(m, compute_uv=False) > 1e-8))
