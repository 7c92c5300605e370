import math

import numpy as np
import pytest

from ellainf.jets import Jet2
from ellainf.kernels import (
    CutoffError,
    ModularParam,
    PoleError,
    RealDecomposition,
    alpha_coefficient,
    dual_class_coefficient,
    h_function,
    kronecker_f_lattice,
    kronecker_f_theta,
    theta,
    theta_basis,
    theta_deriv,
)

MP = ModularParam(tau=1j)
MP2 = ModularParam(tau=0.5 + 0.8j)


def rand_points(rng, n, spread=0.8):
    # keep z2-type coordinates away from Z so lattice sums stay transversal
    re = rng.uniform(-spread, spread, n)
    im = rng.uniform(0.15, spread, n) * rng.choice([-1.0, 1.0], n)
    return re + 1j * im


def test_real_decomposition_roundtrip():
    rng = np.random.default_rng(3)
    for tau in (1j, 0.5 + 0.8j, 2j):
        for z in rand_points(rng, 10):
            rd = RealDecomposition.of(z, tau)
            assert abs(rd.recompose(tau) - z) < 1e-12


def test_theta_even():
    rng = np.random.default_rng(4)
    for mp in (MP, MP2):
        for z in rand_points(rng, 8):
            assert abs(theta(z, mp) - theta(-z, mp)) < 1e-12


def test_theta_vanishes_at_half_period():
    for mp in (MP, MP2, ModularParam(2j)):
        z0 = (mp.tau + 1) / 2
        assert abs(theta(z0, mp)) < 1e-12


def test_theta_quasi_periodicity():
    rng = np.random.default_rng(5)
    for mp in (MP, MP2):
        for z in rand_points(rng, 8):
            t1 = theta(z + 1, mp) - theta(z, mp)
            t2 = theta(z + mp.tau, mp) - np.exp(-1j * math.pi * mp.tau - 2j * math.pi * z) * theta(z, mp)
            assert abs(t1) < 1e-10 and abs(t2) < 1e-10


def test_theta_vectorized_matches_scalar():
    z = np.array([0.1 + 0.2j, -0.3 + 0.05j])
    v = theta(z, MP)
    assert np.allclose(v, [theta(z[0], MP), theta(z[1], MP)])


def test_theta_deriv_matches_finite_difference():
    z = 0.17 + 0.23j
    eps = 1e-5
    fd = (theta(z + eps, MP) - theta(z - eps, MP)) / (2 * eps)
    assert abs(theta_deriv(z, MP) - fd) < 1e-8


def test_theta_on_jets_gives_taylor_coefficients():
    z = 0.1 + 0.3j
    jz = Jet2.variable(z, 0, (3, 1))
    jv = theta(jz, MP)
    assert abs(jv.coeff[0, 0] - theta(z, MP)) < 1e-13
    assert abs(jv.coeff[1, 0] - theta_deriv(z, MP)) < 1e-11
    assert abs(jv.coeff[2, 0] - theta_deriv(z, MP, 2) / 2) < 1e-10


def test_theta_basis_degree_one_is_theta():
    rng = np.random.default_rng(6)
    for z in rand_points(rng, 5):
        assert abs(theta_basis(0, 1, 0.0, z, MP) - theta(z, MP)) < 1e-12


def test_theta_basis_linear_independence_degree_two():
    w = 0.21 + 0.13j
    zs = [0.11 + 0.04j, -0.35 + 0.27j]
    m = np.array([[theta_basis(k, 2, w, z, MP2) for k in range(2)] for z in zs])
    assert np.linalg.cond(m) < 1e6


def test_theta_basis_translation_eigenvector():
    # z -> z + 1/n multiplies theta_k by exp(2 pi i k / n)
    n, w = 3, 0.2 - 0.1j
    z = 0.07 + 0.21j
    for k in range(n):
        lhs = theta_basis(k, n, w, z + 1.0 / n, MP)
        rhs = np.exp(2j * math.pi * k / n) * theta_basis(k, n, w, z, MP)
        assert abs(lhs - rhs) < 1e-10


def test_alpha_periodic_and_vanishing():
    rng = np.random.default_rng(7)
    for z in rand_points(rng, 5):
        assert abs(alpha_coefficient(z + 1, MP) - alpha_coefficient(z, MP)) < 1e-10
    z0 = (MP.tau + 1) / 2
    assert abs(alpha_coefficient(z0, MP)) < 1e-12


def test_alpha_decay_along_vertical_strip():
    # |alpha| ~ exp(-2 pi Im tau z2^2) |conj theta|
    z2 = 1.7
    z = 0.3 + MP.tau * z2
    bound = abs(theta(z, MP)) * math.exp(-2 * math.pi * MP.im * z2 ** 2)
    assert abs(alpha_coefficient(z, MP)) <= bound * (1 + 1e-12)


def test_alpha_is_degree_minus_one_dual_class():
    rng = np.random.default_rng(8)
    for z in rand_points(rng, 4):
        assert abs(dual_class_coefficient(0, 1, 0.0, z, MP) - alpha_coefficient(z, MP)) < 1e-12


def test_h_summation_orders_agree():
    z = 0.1 + 0.2j
    u = 0.3 + 0.4j
    a = h_function(z, u, MP, "square")
    b = h_function(z, u, MP, "diagonal")
    assert abs(a - b) < 1e-11


def test_h_pole_at_lattice():
    with pytest.raises(PoleError):
        h_function(0.1 + 0.2j, 1e-9 + 0j, MP)


def test_h_dbar_gives_theta_alpha():
    # dbar h(z, u) = theta(z+u) alpha(z) (coefficient of dz-bar), checked by
    # central differences in the real coordinates of z.
    for mp in (MP, MP2):
        tau = mp.tau
        z = 0.13 + 0.29 * tau
        u = 0.37 + 0.41 * tau
        eps = 1e-5
        d1 = (h_function(z + eps, u, mp) - h_function(z - eps, u, mp)) / (2 * eps)
        d2 = (h_function(z + tau * eps, u, mp) - h_function(z - tau * eps, u, mp)) / (2 * eps)
        # dbar = (tau d/dz1 - d/dz2) / (tau - conj tau)
        dbar = (tau * d1 - d2) / (tau - np.conj(tau))
        rhs = theta(z + u, mp) * alpha_coefficient(z, mp)
        assert abs(dbar - rhs) < 1e-7


def test_primitive_identity_h_theta_f():
    # h(z,t) theta(z+u) - h(z,u) theta(z+t) + F(t,u) theta(z+t+u) = 0
    rng = np.random.default_rng(9)
    worst = 0.0
    for mp in (MP, MP2):
        for _ in range(12):
            z, t, u = rand_points(rng, 3, spread=0.6)
            f = kronecker_f_theta(t, u, mp)
            res = h_function(z, t, mp) * theta(z + u, mp) \
                - h_function(z, u, mp) * theta(z + t, mp) \
                + f * theta(z + t + u, mp)
            worst = max(worst, abs(res))
    assert worst < 1e-9


def test_f_antisymmetry_and_quasi_periodicity():
    rng = np.random.default_rng(10)
    for mp in (MP, MP2):
        for _ in range(6):
            t, u = rand_points(rng, 2, spread=0.6)
            f = kronecker_f_theta(t, u, mp)
            assert abs(f + kronecker_f_theta(u, t, mp)) < 1e-10
            assert abs(kronecker_f_theta(t + 1, u, mp) - f) < 1e-10
            assert abs(kronecker_f_theta(t + mp.tau, u, mp) - np.exp(2j * math.pi * u) * f) < 1e-10


def test_f_residue_at_origin():
    # t * F(t, u) -> 1/(2 pi i) as t -> 0, via Richardson extrapolation
    u = 0.23 + 0.31j
    seq = []
    for k in range(1, 9):
        t = 0.5 ** k * (0.3 + 0.2j)
        seq.append(t * kronecker_f_theta(t, u, MP))
    # Richardson for step-halving: strip the O(t), O(t^2), O(t^3) error terms
    r1 = [2 * seq[i + 1] - seq[i] for i in range(len(seq) - 1)]
    r2 = [(4 * r1[i + 1] - r1[i]) / 3 for i in range(len(r1) - 1)]
    r3 = [(8 * r2[i + 1] - r2[i]) / 7 for i in range(len(r2) - 1)]
    assert abs(r3[-1] - 1 / (2j * math.pi)) < 1e-8


def test_f_pole_guard():
    with pytest.raises(PoleError):
        kronecker_f_theta(1e-9 + 0j, 0.3 + 0.4j, MP)


def test_f_lattice_requires_nonintegral_components():
    with pytest.raises(PoleError):
        kronecker_f_lattice(0.5 + 0j, 0.3 + 0.4j, MP)  # t2 = 0 in Z


def test_f_two_routes_agree():
    t = 0.3 + 0.4j
    u = 0.2 - 0.3j
    for mp in (MP, MP2, ModularParam(2j)):
        a = kronecker_f_lattice(t, u, mp)
        b = kronecker_f_theta(t, u, mp)
        assert abs(a - b) < 1e-10


def test_f_lattice_antisymmetry():
    t = 0.17 + 0.26j
    u = -0.32 + 0.44j
    assert abs(kronecker_f_lattice(t, u, MP) + kronecker_f_lattice(u, t, MP)) < 1e-10


def test_f_routes_agree_on_jets():
    t = Jet2.variable(0.3 + 0.4j, 0, (2, 2))
    u = Jet2.variable(0.2 - 0.3j, 1, (2, 2))
    a = kronecker_f_lattice(t, u, MP)
    b = kronecker_f_theta(t, u, MP)
    assert np.max(np.abs(a.coeff - b.coeff)) < 1e-9
    fd = 1e-6
    num_dt = (kronecker_f_theta(0.3 + 0.4j + fd, 0.2 - 0.3j, MP)
              - kronecker_f_theta(0.3 + 0.4j - fd, 0.2 - 0.3j, MP)) / (2 * fd)
    assert abs(b.coeff[1, 0] - num_dt) < 1e-6


def test_jet_with_zero_nilpotent_part_matches_scalar():
    t = 0.3 + 0.4j
    u = 0.2 - 0.3j
    jt = Jet2.constant(t, (2, 2))
    ju = Jet2.constant(u, (2, 2))
    a = kronecker_f_theta(jt, ju, MP)
    assert a.coeff[0, 0] == kronecker_f_theta(t, u, MP)
    assert abs(theta(Jet2.constant(0.1 + 0.2j, (2, 1)), MP).coeff[0, 0]
               - theta(0.1 + 0.2j, MP)) == 0.0


def test_cutoff_error_when_budget_too_small():
    mp = ModularParam(tau=1j, tol=1e-14, max_index=3)
    with pytest.raises(CutoffError):
        theta(0.1 + 5.0j, mp)
