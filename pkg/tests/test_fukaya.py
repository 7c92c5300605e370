import math

import numpy as np
import pytest

from ellainf.ainf import check_axiom, check_cyclic
from ellainf.fukaya import (
    ConnectionOp,
    FukayaMorphism,
    FukayaObject,
    GeodesicCircle,
    NonTransversalError,
    TorusCategory,
    enumerate_polygons,
    hom_degree,
    intersections,
    nil_exp,
    pairing_value,
    product,
)

TAU = 1j
JORDAN = np.array([[0, 1], [0, 0]], dtype=complex)


def obj(slope, offset, lam=0.0, nil=None):
    conn = ConnectionOp(lam, np.zeros((1, 1)) if nil is None else nil)
    return FukayaObject(GeodesicCircle.of(slope, offset), conn)


def unit_mor(src, dst, idx=0):
    m = np.zeros((dst.rank, src.rank), dtype=complex)
    m[0, 0] = 1.0
    return FukayaMorphism(src, dst, {idx: m})


def test_intersection_counts():
    assert len(intersections(GeodesicCircle.of(0, 0.1), GeodesicCircle.of(1, 0.2))) == 1
    assert len(intersections(GeodesicCircle.of(1, 0.1), GeodesicCircle.of(3, 0.2))) == 2
    one = intersections(GeodesicCircle.of(0.5, 0.11), GeodesicCircle.of(1 / 3, 0.21))
    assert len(one) == 1
    with pytest.raises(NonTransversalError):
        intersections(GeodesicCircle.of(1, 0.1), GeodesicCircle.of(1, 0.1))
    # parallel distinct circles: transversal, empty intersection
    assert intersections(GeodesicCircle.of(1, 0.1), GeodesicCircle.of(1, 0.3)) == []


def test_integer_slope_points_match_formula():
    # circles y = n x - u2 and y = n' x - u2' meet at
    # x = (k + u2' - u2)/(n' - n), y = (n k + n u2' - n' u2)/(n' - n)
    n, np_, u2, u2p = 1, 3, 0.23, 0.61
    pts = intersections(GeodesicCircle.of(n, -u2), GeodesicCircle.of(np_, -u2p))
    want = set()
    for k in range(np_ - n):
        want.add((round(((k + u2p - u2) / (np_ - n)) % 1, 7),
                  round(((n * k + n * u2p - np_ * u2) / (np_ - n)) % 1, 7)))
    got = {(round(x, 7), round(y, 7)) for (x, y) in pts}
    assert got == want


def test_hom_degree_rule():
    a, b = obj(1, 0.0), obj(2, 0.1)
    assert hom_degree(a, b) == 0 and hom_degree(b, a) == 1
    with pytest.raises(ValueError):
        hom_degree(obj(1, 0.0), obj(1, 0.3))


def test_degenerate_polygon_counted_once():
    oo = [obj(0, 0.0), obj(1, 0.0), obj(2, 0.0)]
    hits = enumerate_polygons(oo, [(0.0, 0.0), (0.0, 0.0)], 4.0)
    degen = [h for h in hits if h.area == 0.0]
    assert len(degen) == 1
    assert enumerate_polygons(oo, [(0.0, 0.0), (0.0, 0.0)], 4.0, clockwise=False) == []


def test_enumeration_stable_under_cutoff_doubling():
    oo = [obj(0, 0.0), obj(1, -0.37, 0.11), obj(2, -0.81, -0.23)]
    a, b = unit_mor(oo[0], oo[1]), unit_mor(oo[1], oo[2])
    small = product([a, b], TAU, tol=1e-10)
    big = product([a, b], TAU, tol=1e-10,
                  area_cutoff=2 * math.log(1e12) / (2 * math.pi))
    for k in set(small.coeffs) | set(big.coeffs):
        assert abs(small.matrix(k)[0, 0] - big.matrix(k)[0, 0]) < 1e-10


def test_product_triangle_sum_oracle():
    # slopes (0,1,2) built from translation data; the coefficient over the
    # output point x = ((k + t2+u2)/2) mod 1 is the quadratic exponential sum
    # sum_nu exp(2 pi i (tau (nu+d)^2 + (nu+d)(u1-t1))), d = (k+u2-t2)/2.
    t1, t2, u1, u2 = -0.11, 0.37, 0.34, 0.44
    oo = [obj(0, 0.0, 0.0), obj(1, -t2, -t1), obj(2, -t2 - u2, -(t1 + u1))]
    m = product([unit_mor(oo[0], oo[1]), unit_mor(oo[1], oo[2])], TAU, tol=1e-13)
    pts = intersections(oo[0].circle, oo[2].circle)
    for k in (0, 1):
        d = (k + u2 - t2) / 2
        want = sum(np.exp(2j * math.pi * (TAU * (nu + d) ** 2 + (nu + d) * (u1 - t1)))
                   for nu in range(-30, 31))
        x = ((k + t2 + u2) / 2) % 1.0
        idx = min(range(len(pts)), key=lambda i: abs((pts[i][0] - x + 0.5) % 1 - 0.5))
        assert abs(m.coeffs[idx][0, 0] - want) < 1e-12


@pytest.mark.parametrize("ranks", [(1, 1, 1, 1), (1, 2, 2, 1)])
def test_m2_associativity(ranks):
    rng = np.random.default_rng(42)
    slopes = [0, 1, 2, 3]
    objs = []
    for s, r in zip(slopes, ranks):
        nil = JORDAN if r == 2 else np.zeros((1, 1))
        objs.append(obj(s, rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), nil))
    def rmat(dst, src):
        return (rng.standard_normal((dst.rank, src.rank))
                + 1j * rng.standard_normal((dst.rank, src.rank)))
    mors = [FukayaMorphism(objs[i], objs[i + 1],
                           {0: rmat(objs[i + 1], objs[i])}) for i in range(3)]
    lhs = product([product(mors[:2], TAU), mors[2]], TAU)
    rhs = product([mors[0], product(mors[1:], TAU)], TAU)
    worst = 0.0
    for k in set(lhs.coeffs) | set(rhs.coeffs):
        worst = max(worst, float(np.max(np.abs(lhs.matrix(k) - rhs.matrix(k)))))
    assert worst < 1e-8


def test_degree_rule_gives_zero():
    # slopes 0,1,2 increasing: homs all degree 0, sum 0+0+1 != 2
    oo = [obj(0, 0.1), obj(1, 0.2), obj(2, 0.3), obj(3, 0.15)]
    mors = [unit_mor(oo[i], oo[i + 1]) for i in range(3)]
    out = product(mors, TAU)
    assert out.coeffs == {}


def test_direct_sum_strictness():
    # a block-diagonal (here: diagonal-zero nilpotent) connection on the middle
    # object is a direct sum of rank-1 objects; m_2 through it equals the sum
    # of the summand products, exactly
    rng = np.random.default_rng(7)
    offs = rng.uniform(-0.4, 0.4, 3)
    lams = rng.uniform(-0.4, 0.4, 3)
    block = np.zeros((2, 2))
    o_sum = [obj(0, offs[0], lams[0]), obj(1, offs[1], lams[1], block), obj(2, offs[2], lams[2])]
    o_one = [obj(0, offs[0], lams[0]), obj(1, offs[1], lams[1]), obj(2, offs[2], lams[2])]
    a_col = np.array([[1.0 + 0.2j], [2.0j]])     # V0 -> C^2
    b_row = np.array([[0.5 - 1j, 3.0]])          # C^2 -> V2
    m_sum = product([FukayaMorphism(o_sum[0], o_sum[1], {0: a_col}),
                     FukayaMorphism(o_sum[1], o_sum[2], {0: b_row})], TAU)
    per = []
    for i in range(2):
        m1 = FukayaMorphism(o_one[0], o_one[1], {0: a_col[i:i + 1, :]})
        m2 = FukayaMorphism(o_one[1], o_one[2], {0: b_row[:, i:i + 1]})
        per.append(product([m1, m2], TAU))
    for k, mat in m_sum.coeffs.items():
        want = sum(p.matrix(k)[0, 0] for p in per)
        assert abs(mat[0, 0] - want) < 1e-14


def test_pairing_autodual():
    o1, o2 = obj(0, 0.1), obj(1, 0.3)
    a = unit_mor(o1, o2)
    b = unit_mor(o2, o1)
    assert abs(pairing_value(a, b) - 1.0) < 1e-14
    o3 = obj(2, 0.05)
    pts = intersections(o1.circle, o3.circle)
    assert len(pts) == 2
    a2 = unit_mor(o1, o3, 0)
    b2 = unit_mor(o3, o1, 1)
    assert abs(pairing_value(a2, b2)) < 1e-14
    # bilinearity
    rng = np.random.default_rng(3)
    c1, c2 = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    lin = FukayaMorphism(o1, o3, {0: c1 * a2.coeffs[0], 1: c2 * np.eye(1, dtype=complex)})
    assert abs(pairing_value(lin, b2) - c2) < 1e-13


def test_odd_sign_guard():
    # four circles through the origin with degree pattern summing to 2:
    # the fully degenerate quadrilateral hits x(p0) = x(p3)
    oo = [obj(0, 0.0), obj(2, 0.0), obj(1, 0.0), obj(3, 0.0)]
    mors = [unit_mor(oo[i], oo[i + 1]) for i in range(3)]
    with pytest.raises(AssertionError):
        product(mors, TAU)


def test_category_export_axioms_and_cyclicity():
    rng = np.random.default_rng(9)
    objs = [obj(0, 0.13, 0.21), obj(1, -0.29, -0.17), obj(2, 0.41, 0.08)]
    cat = TorusCategory(objs, TAU, tol=1e-11)
    struct, pairing = cat.structure(max_arity=3)
    assert check_axiom(struct, 2, 1e-9).ok
    assert check_axiom(struct, 3, 1e-8).ok
    rep = check_cyclic(struct, pairing, 1e-8)
    assert rep.ok, rep.max_residual


def test_category_with_jordan_block_cyclic():
    objs = [obj(0, 0.13, 0.21, JORDAN), obj(1, -0.29, -0.17), obj(2, 0.41, 0.08)]
    cat = TorusCategory(objs, TAU, tol=1e-11)
    struct, pairing = cat.structure(max_arity=2)
    assert check_axiom(struct, 2, 1e-9).ok
    assert check_cyclic(struct, pairing, 1e-8).ok


def test_nil_exp_exact():
    n = JORDAN
    e = nil_exp(3.0 + 1j, n)
    assert np.allclose(e, np.eye(2) + (3.0 + 1j) * n)
