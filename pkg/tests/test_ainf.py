"""Exact-scalar tests of the A-infinity engine.

The base example is the exterior algebra on two degree-1 generators with
its strictly associative product; homotopy transport then produces honest
higher products whose axioms must hold exactly over Gaussian rationals.
"""

from fractions import Fraction

import pytest

from ellainf.ainf import (
    AInfStructure,
    CyclicPairing,
    GradedHomSpace,
    GridMismatchError,
    HomGrid,
    HomotopyData,
    TableAbsentError,
    bar_differential,
    bar_differential_sum,
    check_axiom,
    check_cyclic,
    check_cyclic_homotopy,
    compose_homotopies,
    inverse_homotopy,
    mu_sign,
    transport,
)
from ellainf.scalars import QC

ONE = QC(Fraction(1))


def exterior_grid():
    space = GradedHomSpace({"u": 0, "x": 1, "y": 1, "xy": 2})
    return HomGrid(["*"], {("*", "*"): space})


def exterior_structure(max_arity=4):
    grid = exterior_grid()
    basis = ["u", "x", "y", "xy"]
    wedge = {
        ("u", "u"): {"u": ONE}, ("u", "x"): {"x": ONE}, ("u", "y"): {"y": ONE},
        ("u", "xy"): {"xy": ONE}, ("x", "u"): {"x": ONE}, ("y", "u"): {"y": ONE},
        ("xy", "u"): {"xy": ONE}, ("x", "y"): {"xy": ONE}, ("y", "x"): {"xy": -ONE},
    }
    table = {}
    for a in basis:
        for b in basis:
            v = wedge.get((a, b))
            if v:
                table[(a, b)] = dict(v)
    products = {1: {}, 2: table}
    for n in range(3, max_arity + 1):
        products[n] = {}
    return AInfStructure(grid, products, exact=True)


def top_pairing(grid):
    blocks = {("u", "xy"): ONE, ("xy", "u"): ONE, ("x", "y"): ONE, ("y", "x"): -ONE}
    return CyclicPairing(grid, blocks)


def random_homotopy(grid, rng, arities=(2, 3)):
    labels = list(grid.homs[("*", "*")].degrees)
    maps = {}
    for n in arities:
        table = {}
        for word in grid.words(n):
            want = sum(grid.degree(l) for l in word) + 1 - n
            outs = [l for l in labels if grid.degree(l) == want]
            vec = {}
            for l in outs:
                c = rng.integers(-2, 3)
                if c:
                    vec[l] = QC(Fraction(int(c)))
            if vec:
                table[word] = vec
        if table:
            maps[n] = table
    return HomotopyData(grid, maps)


def assert_tables_equal(a: AInfStructure, b: AInfStructure):
    assert a.arities == b.arities
    for n in a.arities:
        words = set(a.products[n]) | set(b.products[n])
        for w in words:
            va, vb = a.m(n, w), b.m(n, w)
            for lab in set(va) | set(vb):
                diff = va.get(lab, QC()) - vb.get(lab, QC())
                assert not diff, (n, w, lab)


def test_mu_sign_values():
    assert mu_sign([0]) == 0
    assert mu_sign([1, 1]) == 0
    assert mu_sign([1, 0, 1]) == 1


def test_axiom_of_associative_algebra():
    s = exterior_structure()
    for n in range(1, 5):
        rep = check_axiom(s, n)
        assert rep.max_residual == 0.0 and rep.exact_zero


def test_axiom_one_is_squared_differential():
    grid = HomGrid(["*"], {("*", "*"): GradedHomSpace({"a": 0, "b": 1, "c": 2})})
    products = {1: {("a",): {"b": ONE}, ("b",): {"c": ONE}}}
    s = AInfStructure(grid, products, exact=True)
    rep = check_axiom(s, 1)
    assert rep.max_residual == 1.0 and rep.violating == ("a",)


def test_missing_table_is_an_error():
    s = exterior_structure(max_arity=3)
    with pytest.raises(TableAbsentError):
        check_axiom(s, 4)


def test_bar_differential_of_singleton():
    s = exterior_structure()
    assert bar_differential(s, ("x",)) == {}


def test_bar_differential_of_pair_signs():
    # d[a|b] = (-1)^{mu(a,b)} [m2(a,b)] when m1 = 0
    s = exterior_structure()
    d = bar_differential(s, ("x", "y"))
    # mu(x,y) = 1*1 + 1 = 0 mod 2
    assert list(d) == [("xy",)] and not (d[("xy",)] - ONE)
    d2 = bar_differential(s, ("u", "x"))
    # mu(u,x) = 1*0 + 1 = 1 mod 2
    assert not (d2[("x",)] + ONE)


def test_bar_differential_squares_to_zero_after_transport():
    import numpy as np
    rng = np.random.default_rng(11)
    m = exterior_structure()
    f = random_homotopy(m.grid, rng)
    m2 = transport(m, f)
    for word in m.grid.words(3) + m.grid.words(4):
        dd = bar_differential_sum(m2, bar_differential(m2, word))
        assert dd == {}, word


def test_transport_by_zero_is_identity():
    m = exterior_structure()
    f = HomotopyData(m.grid, {})
    assert_tables_equal(transport(m, f), m)


def test_transport_preserves_m2_when_m1_zero():
    import numpy as np
    rng = np.random.default_rng(12)
    m = exterior_structure()
    f = random_homotopy(m.grid, rng, arities=(2,))
    m2 = transport(m, f)
    for w, vec in m.products[2].items():
        got = m2.m(2, w)
        for lab in set(vec) | set(got):
            assert not (vec.get(lab, QC()) - got.get(lab, QC()))


def test_transported_structure_satisfies_axioms_exactly():
    import numpy as np
    for seed in (13, 14, 15):
        rng = np.random.default_rng(seed)
        m = exterior_structure()
        f = random_homotopy(m.grid, rng)
        m2 = transport(m, f)
        for n in range(1, 5):
            rep = check_axiom(m2, n)
            assert rep.max_residual == 0.0, (seed, n, rep.violating)


def test_transport_roundtrip_through_inverse():
    import numpy as np
    rng = np.random.default_rng(16)
    m = exterior_structure()
    f = random_homotopy(m.grid, rng)
    m2 = transport(m, f)
    g = inverse_homotopy(f, 4)
    ident = compose_homotopies(f, g, max_arity=4)
    assert all(not any(v.values()) or not v for t in ident.maps.values() for v in t.values()) \
        or ident.maps == {}
    back = transport(m2, g)
    assert_tables_equal(back, m)


def test_compose_with_identity_homotopy():
    import numpy as np
    rng = np.random.default_rng(17)
    grid = exterior_grid()
    g = random_homotopy(grid, rng)
    ident = HomotopyData(grid, {})
    for left in (True, False):
        comp = compose_homotopies(ident, g) if left else compose_homotopies(g, ident)
        for n, table in g.maps.items():
            for w, vec in table.items():
                got = comp.f(n, w)
                for lab in set(vec) | set(got):
                    assert not (vec.get(lab, QC()) - got.get(lab, QC()))


def test_compose_second_component_is_sum():
    import numpy as np
    rng = np.random.default_rng(18)
    grid = exterior_grid()
    f = random_homotopy(grid, rng, arities=(2,))
    g = random_homotopy(grid, rng, arities=(2,))
    comp = compose_homotopies(f, g, max_arity=3)
    for w in grid.words(2):
        want = dict(f.f(2, w))
        for lab, c in g.f(2, w).items():
            want[lab] = want.get(lab, QC()) + c
        got = comp.f(2, w)
        for lab in set(want) | set(got):
            assert not (want.get(lab, QC()) - got.get(lab, QC()))


def test_compose_associativity():
    import numpy as np
    rng = np.random.default_rng(19)
    grid = exterior_grid()
    f, g, h = (random_homotopy(grid, rng) for _ in range(3))
    lhs = compose_homotopies(compose_homotopies(f, g, 4), h, 4)
    rhs = compose_homotopies(f, compose_homotopies(g, h, 4), 4)
    for n in range(2, 5):
        for w in grid.words(n):
            a, b = lhs.f(n, w), rhs.f(n, w)
            for lab in set(a) | set(b):
                assert not (a.get(lab, QC()) - b.get(lab, QC()))


def test_compose_matches_sequential_transport():
    import numpy as np
    rng = np.random.default_rng(20)
    m = exterior_structure()
    g = random_homotopy(m.grid, rng)   # homotopy m -> m'
    f = random_homotopy(m.grid, rng)   # homotopy m' -> m''
    m1 = transport(m, g)
    m2 = transport(m1, f)
    direct = transport(m, compose_homotopies(f, g, max_arity=4))
    assert_tables_equal(m2, direct)


def test_cyclic_of_exterior_algebra():
    s = exterior_structure(max_arity=2)
    rep = check_cyclic(s, top_pairing(s.grid))
    assert rep.max_residual == 0.0


def test_cyclic_homotopy_and_cyclic_transport():
    grid = exterior_grid()
    b = top_pairing(grid)
    # f2(y,y) = x satisfies the cyclic-homotopy identity exactly, and its
    # pairings of two outputs vanish (b(x,x) = 0).
    f = HomotopyData(grid, {2: {("y", "y"): {"x": ONE}}})
    repf = check_cyclic_homotopy(f, b, max_n=5)
    assert repf.max_residual == 0.0
    m = exterior_structure()
    m2 = transport(m, f)
    rep = check_cyclic(m2, b)
    assert rep.max_residual == 0.0
    # identity homotopy: every term contains some f_j with j >= 2
    ident = HomotopyData(grid, {})
    assert check_cyclic_homotopy(ident, b, max_n=5).max_residual == 0.0


def test_non_cyclic_homotopy_detected():
    grid = exterior_grid()
    b = top_pairing(grid)
    f = HomotopyData(grid, {2: {("x", "y"): {"x": ONE}}})
    assert check_cyclic_homotopy(f, b, max_n=4).max_residual > 0


def test_perturbed_product_breaks_cyclicity_proportionally():
    s = exterior_structure(max_arity=2)
    eps = 1e-4
    table = {w: {l: complex(c) for l, c in v.items()} for w, v in s.products[2].items()}
    table[("x", "y")] = {"xy": 1.0 + eps}
    s2 = AInfStructure(s.grid, {1: {}, 2: table})
    rep = check_cyclic(s2, CyclicPairing(s.grid, {k: complex(v) for k, v in
                                                  top_pairing(s.grid).blocks.items()}))
    assert abs(rep.max_residual - eps) < 1e-12


def test_grid_mismatch_raises():
    import numpy as np
    rng = np.random.default_rng(21)
    m = exterior_structure()
    other = HomGrid(["o"], {("o", "o"): GradedHomSpace({"a": 0})})
    f = HomotopyData(other, {})
    with pytest.raises(GridMismatchError):
        transport(m, f)


def test_json_roundtrip():
    s = exterior_structure(max_arity=2)
    # float-mode copy (JSON carries floats)
    table = {w: {l: complex(c) for l, c in v.items()} for w, v in s.products[2].items()}
    s2 = AInfStructure(s.grid, {1: {}, 2: table})
    data = s2.to_json()
    s3 = AInfStructure.from_json(data)
    assert s3.to_json() == data
