"""Transversal Fukaya products on the torus R^2/Z^2.

Objects are geodesic circles of rational slope carrying a connection
operator lambda*Id + N (N nilpotent).  The k-fold product m_k is a sum
over clockwise convex (k+1)-gons with edges on successive line lifts,
weighted by exp(2 pi i tau * area) and connection holonomies; for odd k
each polygon carries the sign of x(p_0) - x(p_k).

Enumeration walks vertex by vertex: the lift of circle i through the
previous vertex is unique, and the admissible positions of the next
vertex on it form a one-parameter integer family.  The closing vertex is
forced as a line intersection, so a (k+1)-gon search is a (k-1)-fold
integer loop over a window certified by the area cutoff: a convex polygon
with area <= A has every edge shorter than sqrt(2 k A / sin(phi_min)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as iproduct

import numpy as np

from .ainf import AInfStructure, CyclicPairing, GradedHomSpace, HomGrid

EPS = 1e-7


class NonTransversalError(ValueError):
    """Objects share a geodesic circle (or an input chain is inconsistent)."""


@dataclass(frozen=True)
class GeodesicCircle:
    """Image of the line y = (p/q) x + c on the torus; offset c mod 1/q."""

    num: int
    den: int
    offset: float

    def __post_init__(self):
        if self.den <= 0:
            raise ValueError("denominator must be positive (no vertical circles)")
        if math.gcd(abs(self.num), self.den) != 1:
            raise ValueError("slope must be reduced")
        object.__setattr__(self, "offset", self.offset % (1.0 / self.den))

    @staticmethod
    def of(slope, offset: float) -> "GeodesicCircle":
        fr = Fraction(slope).limit_denominator(10**6)
        return GeodesicCircle(fr.numerator, fr.denominator, float(offset))

    @property
    def slope(self) -> float:
        return self.num / self.den

    @property
    def direction(self):
        return np.array([self.den, self.num], dtype=float)

    def same(self, other: "GeodesicCircle", eps: float = EPS) -> bool:
        if (self.num, self.den) != (other.num, other.den):
            return False
        period = 1.0 / self.den
        d = (self.offset - other.offset) % period
        return min(d, period - d) < eps

    def lift_intercept_through(self, pt) -> float:
        """Intercept of the unique lift passing through the plane point."""
        return pt[1] - self.slope * pt[0]

    def contains_plane_point(self, pt, intercept, eps: float = EPS) -> bool:
        return abs(pt[1] - self.slope * pt[0] - intercept) < eps


@dataclass(frozen=True)
class ConnectionOp:
    """Connection operator lambda*Id + N with N nilpotent."""

    lam: float
    nil: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.nil, dtype=complex)
        object.__setattr__(self, "nil", n)
        if n.ndim != 2 or n.shape[0] != n.shape[1]:
            raise ValueError("connection nilpotent must be square")
        if np.max(np.abs(np.linalg.matrix_power(n, n.shape[0]))) > 1e-10:
            raise ValueError("connection part is not nilpotent")

    @staticmethod
    def scalar(lam: float) -> "ConnectionOp":
        return ConnectionOp(lam, np.zeros((1, 1)))

    @property
    def rank(self) -> int:
        return self.nil.shape[0]

    def holonomy(self, dx: float) -> np.ndarray:
        """exp(2 pi i dx (lambda Id + N)): scalar phase times exact nilpotent exp."""
        return np.exp(2j * math.pi * dx * self.lam) * nil_exp(2j * math.pi * dx, self.nil)


def nil_exp(scale: complex, n: np.ndarray) -> np.ndarray:
    """exp(scale * N) as the (exact) finite series for nilpotent N."""
    r = n.shape[0]
    acc = np.eye(r, dtype=complex)
    term = np.eye(r, dtype=complex)
    for k in range(1, r):
        term = term @ n * (scale / k)
        acc = acc + term
    return acc


@dataclass(frozen=True)
class FukayaObject:
    circle: GeodesicCircle
    conn: ConnectionOp

    @property
    def rank(self) -> int:
        return self.conn.rank


@dataclass
class FukayaMorphism:
    """Element of Hom((L1,A1),(L2,A2)): matrices attached to intersection points."""

    source: FukayaObject
    target: FukayaObject
    coeffs: dict  # point index (into intersections(source, target)) -> matrix

    def matrix(self, idx: int) -> np.ndarray:
        m = self.coeffs.get(idx)
        if m is None:
            return np.zeros((self.target.rank, self.source.rank), dtype=complex)
        return m

    def norm(self) -> float:
        return max((float(np.max(np.abs(m))) for m in self.coeffs.values()), default=0.0)


def intersections(c1: GeodesicCircle, c2: GeodesicCircle):
    """Ordered intersection points of two distinct circles in [0,1)^2.

    Exactly |p1 q2 - p2 q1| points, ordered by x coordinate (stable choice;
    callers match specific labelings by coordinates).
    """
    if c1.same(c2):
        raise NonTransversalError("identical circles")
    if (c1.num, c1.den) == (c2.num, c2.den):
        return []
    d = abs(c1.num * c2.den - c2.num * c1.den)
    step = (c1.den * c2.den) / d
    x0 = (c2.offset - c1.offset) / (c1.slope - c2.slope)
    pts = []
    for k in range(d):
        x = (x0 + k * step) % 1.0
        y = (c1.slope * (x0 + k * step) + c1.offset) % 1.0
        pts.append((x % 1.0, y))
    pts.sort(key=lambda p: (round(p[0], 9), round(p[1], 9)))
    return pts


def hom_degree(o1: FukayaObject, o2: FukayaObject) -> int:
    """0 when slope(o1) < slope(o2), 1 when slope(o1) > slope(o2)."""
    s1 = Fraction(o1.circle.num, o1.circle.den)
    s2 = Fraction(o2.circle.num, o2.circle.den)
    if s1 == s2:
        raise ValueError("equal slopes: hom space is zero, degree undefined")
    return 0 if s1 < s2 else 1


def pairing_value(a: FukayaMorphism, b: FukayaMorphism) -> complex:
    """Trace pairing with the autodual point basis: sum_P Tr(a(P) b(P))."""
    if not (a.source is b.target or _same_object(a.source, b.target)) \
            or not (a.target is b.source or _same_object(a.target, b.source)):
        raise ValueError("pairing needs morphisms X->Y and Y->X")
    total = 0j
    pts_a = intersections(a.source.circle, a.target.circle)
    pts_b = intersections(b.source.circle, b.target.circle)
    match = _match_points(pts_a, pts_b)
    for ia, m in a.coeffs.items():
        ib = match[ia]
        mb = b.coeffs.get(ib)
        if mb is not None:
            total += np.trace(mb @ m)
    return total


def _same_object(x: FukayaObject, y: FukayaObject) -> bool:
    return x.circle.same(y.circle) and x.conn.rank == y.conn.rank \
        and abs(x.conn.lam - y.conn.lam) < EPS \
        and np.max(np.abs(x.conn.nil - y.conn.nil), initial=0.0) < EPS


def _match_points(pts_a, pts_b):
    out = {}
    for ia, p in enumerate(pts_a):
        for ib, q in enumerate(pts_b):
            if _torus_close(p, q):
                out[ia] = ib
                break
        else:
            raise ValueError("intersection point sets do not match")
    return out


def _torus_close(p, q, eps: float = EPS) -> bool:
    return all(min((a - b) % 1.0, (b - a) % 1.0) < eps for a, b in zip(p, q))


@dataclass(frozen=True)
class PolygonHit:
    vertices: tuple          # p_0 .. p_k in the plane
    area: float
    out_index: int           # index into intersections(circle_0, circle_k)

    @property
    def closing_dx(self) -> float:
        return self.vertices[0][0] - self.vertices[-1][0]


def _integer_solutions_on_line(target, slope_num, slope_den, intercept):
    """Base plane point ~ target (mod Z^2) on the line y = s x + c, plus the
    primitive step (den, num) generating all such points."""
    # target + (a,b) on the line <=> den*b - num*a = den*(s*t_x + c - t_y)
    r = slope_num * target[0] + slope_den * (intercept - target[1])
    big_r = round(r)
    if abs(r - big_r) > 1e-5 * max(1.0, abs(r)) + 1e-6:
        return None
    # q*b - p*a = R has solutions since gcd(p, q) = 1
    g, u, v = _ext_gcd(slope_den, slope_num)
    b0 = u * big_r
    a0 = -v * big_r
    return (target[0] + a0, target[1] + b0)


def _ext_gcd(q, p):
    if p == 0:
        return q, 1, 0
    g, u, v = _ext_gcd(p, q % p)
    return g, v, u - (q // p) * v


def min_slope_angle(circles) -> float:
    """Smallest |sin(angle)| between distinct slope directions."""
    dirs = []
    seen = set()
    for c in circles:
        key = (c.num, c.den)
        if key not in seen:
            seen.add(key)
            dirs.append(c.direction / np.linalg.norm(c.direction))
    best = 1.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            s = abs(dirs[i][0] * dirs[j][1] - dirs[i][1] * dirs[j][0])
            if s > 1e-12:
                best = min(best, s)
    return best


def enumerate_polygons(objects, interior_points, area_cutoff: float,
                       clockwise: bool = True):
    """All convex clockwise (k+1)-gons up to Z^2 translation with
    p_i = interior_points[i] (mod Z^2) for i < k, edges [p_{i-1}, p_i] on
    lifts of circle i, and area <= area_cutoff.

    ``interior_points`` has length k; the closing vertex p_k on circles
    (k, 0) is forced and reported with the index of its intersection point.
    """
    k = len(objects) - 1
    if len(interior_points) != k:
        raise ValueError("need k interior points for k+1 objects")
    circles = [o.circle for o in objects]
    for i in range(len(circles)):
        for j in range(i + 1, len(circles)):
            if circles[i].same(circles[j]):
                raise NonTransversalError("objects share a circle")
    if (circles[0].num, circles[0].den) == (circles[k].num, circles[k].den):
        return []
    out_pts = intersections(circles[0], circles[k])
    sin_min = min_slope_angle(circles)
    l_max = math.sqrt(2 * (k + 1) * max(area_cutoff, 1e-9) / sin_min)
    budget = (k + 1) * l_max + 3.0
    windows = []
    for i in range(1, k):
        steplen = float(np.linalg.norm(circles[i].direction))
        w = int(math.ceil(budget / steplen)) + 1
        windows.append(range(-w, w + 1))

    hits = []
    p0 = np.array(interior_points[0], dtype=float)
    for nus in iproduct(*windows):
        verts = [p0]
        ok = True
        for i in range(1, k):
            c = circles[i]
            intercept = c.lift_intercept_through(verts[-1])
            base = _integer_solutions_on_line(interior_points[i], c.num, c.den, intercept)
            if base is None:
                ok = False
                break
            pt = np.array(base, dtype=float) + nus[i - 1] * c.direction
            verts.append(pt)
        if not ok:
            continue
        # closing vertex: lift of circle k through p_{k-1} meets lift of
        # circle 0 through p_0
        ck, c0 = circles[k], circles[0]
        bk = ck.lift_intercept_through(verts[-1])
        b0 = c0.lift_intercept_through(p0)
        denom = c0.slope - ck.slope
        xk = (bk - b0) / denom
        pk = np.array([xk, c0.slope * xk + b0])
        verts.append(pk)
        hit = _classify_polygon(verts, area_cutoff, clockwise)
        if hit is None:
            continue
        area, _ = hit
        idx = _out_index(out_pts, pk)
        hits.append(PolygonHit(tuple(tuple(v) for v in verts), area, idx))
    return hits


def _classify_polygon(verts, area_cutoff, clockwise):
    """Clockwise convex test (degenerate edges allowed) plus the area."""
    n = len(verts)
    edges = [np.asarray(verts[(i + 1) % n]) - np.asarray(verts[i]) for i in range(n)]
    nz = [e for e in edges if np.linalg.norm(e) > EPS]
    twice_area = sum(verts[i][0] * verts[(i + 1) % n][1]
                     - verts[(i + 1) % n][0] * verts[i][1] for i in range(n))
    area = abs(twice_area) / 2.0
    if area > area_cutoff:
        return None
    if not nz:
        # fully degenerate polygon, weight exp(0); counted on the clockwise side
        return (0.0, 0.0) if clockwise else None
    want = -1.0 if clockwise else 1.0
    if twice_area * want < -EPS:
        return None
    turning = 0.0
    for i in range(len(nz)):
        a, b = nz[i], nz[(i + 1) % len(nz)]
        cross = a[0] * b[1] - a[1] * b[0]
        dot = float(a @ b)
        ang = math.atan2(cross, dot)
        if ang * want < -EPS:
            return None  # a turn against the requested orientation
        turning += ang
    if abs(turning - want * 2 * math.pi) > 1e-6:
        return None  # not a simple polygon traversed once
    return (area, twice_area)


def _out_index(out_pts, pk):
    mod = (pk[0] % 1.0, pk[1] % 1.0)
    for idx, p in enumerate(out_pts):
        if _torus_close(p, mod):
            return idx
    raise AssertionError("closing vertex does not project to an intersection point")


def default_area_cutoff(tau: complex, tol: float) -> float:
    """Area at which |exp(2 pi i tau area)| drops below tol."""
    return math.log(1.0 / tol) / (2 * math.pi * tau.imag)


def product(morphisms, tau: complex, tol: float = 1e-12,
            area_cutoff: float | None = None) -> FukayaMorphism:
    """The k-fold product m_k on a composable chain of morphisms.

    Returns the zero morphism unless the gradings sum to k-1 (with the
    closing hom included); raises on non-transversal chains.
    """
    k = len(morphisms)
    if k < 2:
        raise ValueError("products start at arity 2")
    objects = [morphisms[0].source]
    for m in morphisms:
        if not _same_object(m.source, objects[-1]):
            raise NonTransversalError("chain of morphisms is not composable")
        objects.append(m.target)
    out = FukayaMorphism(objects[0], objects[k], {})
    circles = [o.circle for o in objects]
    for i in range(len(circles)):
        for j in range(i + 1, len(circles)):
            if circles[i].same(circles[j]):
                raise NonTransversalError("objects share a circle")
    # grading rule: sum over i in Z/(k+1) of deg Hom(O_i, O_{i+1}) must be k-1
    try:
        degs = [hom_degree(objects[i], objects[i + 1]) for i in range(k)]
        degs.append(hom_degree(objects[k], objects[0]))
    except ValueError:
        return out  # some hom space vanishes identically
    if sum(degs) != k - 1:
        return out
    if area_cutoff is None:
        area_cutoff = default_area_cutoff(tau, tol * 1e-2)
    pts = [intersections(objects[i].circle, objects[i + 1].circle) for i in range(k)]
    out_rank_shape = (objects[k].rank, objects[0].rank)
    acc: dict = {}
    for combo in iproduct(*[sorted(m.coeffs) for m in morphisms]):
        mats = [morphisms[i].coeffs[combo[i]] for i in range(k)]
        interior = [pts[i][combo[i]] for i in range(k)]
        for hit in enumerate_polygons(objects, interior, area_cutoff):
            verts = hit.vertices
            sign = 1.0
            if k % 2 == 1:
                dx0 = verts[0][0] - verts[k][0]
                if abs(dx0) < EPS:
                    raise AssertionError(
                        "sign(0) reached: x(p_0) = x(p_k) on an odd product")
                sign = math.copysign(1.0, dx0)
            weight = np.exp(2j * math.pi * tau * hit.area)
            chain = objects[0].conn.holonomy(verts[0][0] - verts[k][0])
            for i in range(k):
                chain = mats[i] @ chain
                dx = verts[i + 1][0] - verts[i][0] if i + 1 <= k else 0.0
                chain = objects[i + 1].conn.holonomy(dx) @ chain
            term = sign * weight * chain
            cur = acc.get(hit.out_index)
            acc[hit.out_index] = term if cur is None else cur + term
    out.coeffs = {idx: m for idx, m in acc.items()
                  if np.max(np.abs(m)) > tol * 1e-3}
    for m in out.coeffs.values():
        if m.shape != out_rank_shape:
            raise AssertionError("rank bookkeeping broke")
    return out


# ---------------------------------------------------------------------------
# export to the generic A-infinity engine
# ---------------------------------------------------------------------------

@dataclass
class TorusCategory:
    """A finite family of Fukaya objects with product tables for the engine."""

    objects: list
    tau: complex
    tol: float = 1e-10
    area_cutoff: float | None = None
    names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.names:
            self.names = [f"O{i}" for i in range(len(self.objects))]

    def basis_morphism(self, i: int, j: int, point_idx: int, row: int, col: int) -> FukayaMorphism:
        src, dst = self.objects[i], self.objects[j]
        m = np.zeros((dst.rank, src.rank), dtype=complex)
        m[row, col] = 1.0
        return FukayaMorphism(src, dst, {point_idx: m})

    def hom_labels(self, i: int, j: int):
        src, dst = self.objects[i], self.objects[j]
        if src.circle.same(dst.circle):
            raise NonTransversalError("no hom between identical circles")
        if (src.circle.num, src.circle.den) == (dst.circle.num, dst.circle.den):
            return []
        deg = hom_degree(src, dst)
        pts = intersections(src.circle, dst.circle)
        out = []
        for p in range(len(pts)):
            for r in range(dst.rank):
                for c in range(src.rank):
                    out.append((f"h{i}.{j}.p{p}.{r}{c}", deg, (p, r, c)))
        return out

    def structure(self, max_arity: int = 3):
        """Assemble an AInfStructure (m_1 = 0) plus the trace pairing."""
        homs, meta = {}, {}
        trans = set()
        n_obj = len(self.objects)
        for i in range(n_obj):
            for j in range(n_obj):
                if i == j:
                    continue
                if not self.objects[i].circle.same(self.objects[j].circle):
                    trans.add(frozenset((self.names[i], self.names[j])))
                else:
                    continue
                labels = self.hom_labels(i, j)
                if labels:
                    homs[(self.names[i], self.names[j])] = GradedHomSpace(
                        {lab: deg for lab, deg, _ in labels})
                    for lab, _, key in labels:
                        meta[lab] = (i, j) + key
        grid = HomGrid(self.names, homs, trans)
        products = {1: {}}
        for n in range(2, max_arity + 1):
            table = {}
            for word in grid.words(n):
                vec = self._word_product(word, meta)
                if vec:
                    table[word] = vec
            products[n] = table
        pairing = {}
        for (lab1, (i, j, p1, r1, c1)) in meta.items():
            for (lab2, (i2, j2, p2, r2, c2)) in meta.items():
                if (i2, j2) != (j, i):
                    continue
                m1 = self.basis_morphism(i, j, p1, r1, c1)
                m2 = self.basis_morphism(j, i, p2, r2, c2)
                val = pairing_value(m1, m2)
                if abs(val) > 1e-13:
                    pairing[(lab1, lab2)] = val
        struct = AInfStructure(grid, products)
        return struct, CyclicPairing(grid, pairing)

    def _word_product(self, word, meta):
        chain = [meta[l] for l in word]
        morphs = [self.basis_morphism(i, j, p, r, c) for (i, j, p, r, c) in chain]
        try:
            val = product(morphs, self.tau, self.tol, self.area_cutoff)
        except NonTransversalError:
            return {}
        i0, jk = chain[0][0], chain[-1][1]
        vec = {}
        for p, mat in val.coeffs.items():
            for r in range(mat.shape[0]):
                for c in range(mat.shape[1]):
                    if abs(mat[r, c]) > self.tol * 1e-2:
                        vec[f"h{i0}.{jk}.p{p}.{r}{c}"] = mat[r, c]
        return vec
