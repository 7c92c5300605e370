"""Sign-exact A-infinity engine over finite graded data.

Structures are stored as sparse multilinear tables: for each arity n a map
from composable basis words (tuples of labels) to sparse output vectors.
Two scalar modes are supported: floating ``complex`` and exact Gaussian
rationals (:class:`ellainf.scalars.QC`), the latter so that sign errors
surface as exact nonzeros rather than small residuals.

Conventions (fixed once and used everywhere):

* products m_n have degree 2 - n, homotopy components f_n degree 1 - n;
* mu(a_1..a_k) = (k-1)~a_1 + ... + ~a_{k-1} + k(k-1)/2 (mod 2);
* the axiom Ax_n sums (-1)^{l(~a_1+..+~a_{j-1}) + j(l+1)}
  m_k(a_1,..,m_l(a_j,..),..,a_n) over k+l = n+1;
* the bar coderivation d carries (-1)^{~a_1+..+~a_{j-1} + j - 1 + mu(inner)};
* a homotopy f (f_1 = id) relates m and m' through F d = d' F, with block
  signs eps_L = sum mu(blocks) + mu(values) and the corresponding eps_R.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product as iproduct

from .scalars import scalar_norm

Label = str
Word = tuple
Vector = dict  # Label -> coefficient


class TableAbsentError(KeyError):
    """A product/homotopy table of the required arity is not declared."""


class GridMismatchError(ValueError):
    """Operation mixing data over different hom grids."""


def mu_sign(parities) -> int:
    """mu(a_1,...,a_k) mod 2 for the given degree parities."""
    if len(parities) == 0:
        raise ValueError("mu of the empty word is undefined")
    k = len(parities)
    tot = sum((k - 1 - i) * (p % 2) for i, p in enumerate(parities))
    return (tot + k * (k - 1) // 2) % 2


@dataclass(frozen=True)
class GradedHomSpace:
    """Finite graded basis: label -> degree."""

    degrees: dict

    @property
    def labels(self):
        return list(self.degrees)

    def dim_per_degree(self):
        out = {}
        for d in self.degrees.values():
            out[d] = out.get(d, 0) + 1
        return out


class HomGrid:
    """Object set plus hom-space bases; labels are globally unique."""

    def __init__(self, objects, homs, transversal=None):
        self.objects = list(objects)
        self.homs = dict(homs)  # (src, dst) -> GradedHomSpace
        self.transversal = transversal  # None (all pairs) or set of frozensets
        self._info = {}
        for (src, dst), space in self.homs.items():
            for lab, deg in space.degrees.items():
                if lab in self._info:
                    raise ValueError(f"duplicate basis label {lab!r}")
                self._info[lab] = (src, dst, deg)

    def label_info(self, lab):
        return self._info[lab]

    def degree(self, lab) -> int:
        return self._info[lab][2]

    def parity(self, lab) -> int:
        return self._info[lab][2] % 2

    def pair_transversal(self, x, y) -> bool:
        if self.transversal is None:
            return True
        return x == y or frozenset((x, y)) in self.transversal

    def collection_transversal(self, objs) -> bool:
        objs = list(objs)
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                if objs[i] != objs[j] and not self.pair_transversal(objs[i], objs[j]):
                    return False
        return True

    def composable(self, word) -> bool:
        for a, b in zip(word, word[1:]):
            if self._info[a][1] != self._info[b][0]:
                return False
        return True

    def chain(self, word):
        """Objects X_0..X_n underlying a composable word."""
        objs = [self._info[word[0]][0]]
        for lab in word:
            objs.append(self._info[lab][1])
        return objs

    def words(self, n, closed=False):
        """All composable basis words of length n with pairwise-transversal
        object chains (closed: the chain must return to its start)."""
        out = []

        def extend(word, chain):
            if len(word) == n:
                if not closed or chain[-1] == chain[0]:
                    out.append(tuple(word))
                return
            src = chain[-1]
            for (s, d), space in self.homs.items():
                if s != src:
                    continue
                cand = chain + [d]
                if not self.collection_transversal(cand):
                    continue
                if closed and len(word) == n - 1 and d != chain[0]:
                    continue
                for lab in space.degrees:
                    extend(word + [lab], cand)

        for (s, d), space in self.homs.items():
            for lab in space.degrees:
                extend([lab], [s, d])
        return out


def _vec_add(acc: Vector, vec: Vector, scale=None):
    for lab, c in vec.items():
        val = c if scale is None else c * scale
        cur = acc.get(lab)
        acc[lab] = val if cur is None else cur + val
    return acc


def vec_norm(vec: Vector) -> float:
    return max((scalar_norm(c) for c in vec.values()), default=0.0)


def vec_prune(vec: Vector, tol: float = 0.0) -> Vector:
    return {lab: c for lab, c in vec.items() if scalar_norm(c) > tol}


@dataclass
class AInfStructure:
    """Finite A-infinity structure: hom grid plus sparse product tables."""

    grid: HomGrid
    products: dict  # arity -> {word: Vector}
    exact: bool = False

    def __post_init__(self):
        self.validate()

    # -- table access --------------------------------------------------------
    @property
    def arities(self):
        return sorted(self.products)

    def table(self, n):
        if n not in self.products:
            raise TableAbsentError(f"product table of arity {n} absent")
        return self.products[n]

    def m(self, n, word) -> Vector:
        return dict(self.table(n).get(tuple(word), {}))

    def m_multi(self, n, args) -> Vector:
        """Multilinear extension: each argument is a label or a Vector."""
        slots = [([(a, 1)] if isinstance(a, str) else list(a.items())) for a in args]
        acc: Vector = {}
        for combo in iproduct(*slots):
            word = tuple(lab for lab, _ in combo)
            scale = None
            for _, c in combo:
                scale = c if scale is None else scale * c
            if not scale:
                continue
            _vec_add(acc, self.m(n, word), scale)
        return acc

    def validate(self):
        for n, table in self.products.items():
            for word, vec in table.items():
                if len(word) != n:
                    raise ValueError(f"word {word} in arity-{n} table")
                if not self.grid.composable(word):
                    raise ValueError(f"non-composable word {word}")
                if not self.grid.collection_transversal(self.grid.chain(word)):
                    raise ValueError(f"non-transversal word {word}")
                want = sum(self.grid.degree(l) for l in word) + 2 - n
                for lab in vec:
                    if self.grid.degree(lab) != want:
                        raise ValueError(
                            f"degree rule violated: m_{n}{word} -> {lab} "
                            f"(got {self.grid.degree(lab)}, want {want})")

    # -- serialization ---------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "objects": list(self.grid.objects),
            "homs": {f"{s}->{d}": {"basis": [{"label": l, "degree": deg}
                                             for l, deg in sp.degrees.items()]}
                     for (s, d), sp in self.grid.homs.items()},
            "products": {str(n): [{"inputs": list(w),
                                   "outputs": [{"label": l,
                                                "re": float(complex(c).real),
                                                "im": float(complex(c).imag)}
                                               for l, c in vec.items()]}
                                  for w, vec in table.items()]
                         for n, table in self.products.items()},
            "transversal": (None if self.grid.transversal is None
                            else [sorted(p) for p in self.grid.transversal]),
        }

    @staticmethod
    def from_json(data: dict) -> "AInfStructure":
        homs = {}
        for key, spec in data["homs"].items():
            s, d = key.split("->")
            homs[(s, d)] = GradedHomSpace({b["label"]: int(b["degree"])
                                           for b in spec["basis"]})
        trans = data.get("transversal")
        grid = HomGrid(data["objects"], homs,
                       None if trans is None else {frozenset(p) for p in trans})
        products = {}
        for n_str, entries in data.get("products", {}).items():
            table = {}
            for e in entries:
                table[tuple(e["inputs"])] = {o["label"]: complex(o["re"], o["im"])
                                             for o in e["outputs"]}
            products[int(n_str)] = table
        return AInfStructure(grid, products)


@dataclass
class HomotopyData:
    """Components f_n (n >= 2) of a homotopy; f_1 = id is implicit."""

    grid: HomGrid
    maps: dict = field(default_factory=dict)  # arity -> {word: Vector}

    def __post_init__(self):
        for n, table in self.maps.items():
            if n < 2:
                raise ValueError("homotopy stores only arities >= 2")
            for word, vec in table.items():
                want = sum(self.grid.degree(l) for l in word) + 1 - n
                for lab in vec:
                    if self.grid.degree(lab) != want:
                        raise ValueError(
                            f"degree rule violated: f_{n}{word} -> {lab}")

    def f(self, n, word) -> Vector:
        if n == 1:
            (lab,) = word
            return {lab: 1}
        return dict(self.maps.get(n, {}).get(tuple(word), {}))

    def f_multi(self, n, args) -> Vector:
        slots = [([(a, 1)] if isinstance(a, str) else list(a.items())) for a in args]
        acc: Vector = {}
        for combo in iproduct(*slots):
            word = tuple(lab for lab, _ in combo)
            scale = None
            for _, c in combo:
                scale = c if scale is None else scale * c
            if not scale:
                continue
            _vec_add(acc, self.f(n, word), scale)
        return acc

    def to_json(self) -> dict:
        return {"homotopy": {str(n): [{"inputs": list(w),
                                       "outputs": [{"label": l,
                                                    "re": float(complex(c).real),
                                                    "im": float(complex(c).imag)}
                                                   for l, c in vec.items()]}
                                      for w, vec in table.items()]
                             for n, table in self.maps.items()}}

    @staticmethod
    def from_json(grid: HomGrid, data: dict) -> "HomotopyData":
        maps = {}
        for n_str, entries in data.get("homotopy", {}).items():
            maps[int(n_str)] = {tuple(e["inputs"]):
                                {o["label"]: complex(o["re"], o["im"])
                                 for o in e["outputs"]}
                                for e in entries}
        return HomotopyData(grid, maps)


@dataclass
class CyclicPairing:
    """Sparse bilinear form pairing Hom(X,Y) with Hom(Y,X)."""

    grid: HomGrid
    blocks: dict  # (label1, label2) -> coefficient

    def __post_init__(self):
        for (l1, l2) in self.blocks:
            s1, d1, _ = self.grid.label_info(l1)
            s2, d2, _ = self.grid.label_info(l2)
            if (s1, d1) != (d2, s2):
                raise ValueError(f"pairing block ({l1},{l2}) is not Hom(X,Y)xHom(Y,X)")

    def eval(self, v1: Vector, v2: Vector):
        acc = None
        for l1, c1 in v1.items():
            for l2, c2 in v2.items():
                blk = self.blocks.get((l1, l2))
                if blk is None:
                    continue
                term = c1 * c2 * blk
                acc = term if acc is None else acc + term
        if acc is None:
            acc = 0
        return acc


@dataclass
class AxiomReport:
    arity: int
    max_residual: float
    violating: object = None  # worst word, or None when clean
    exact_zero: bool = False

    @property
    def ok(self):
        return self.violating is None


def _axiom_residual(s: AInfStructure, word) -> Vector:
    n = len(word)
    pars = [s.grid.parity(l) for l in word]
    acc: Vector = {}
    for l in range(1, n + 1):
        k = n + 1 - l
        for j in range(1, k + 1):
            inner = word[j - 1: j - 1 + l]
            val = s.m(l, inner)
            if not val:
                continue
            sign = (-1) ** ((l * sum(pars[: j - 1]) + j * (l + 1)) % 2)
            args = list(word[: j - 1]) + [val] + list(word[j - 1 + l:])
            _vec_add(acc, s.m_multi(k, args), sign)
    return acc


def check_axiom(s: AInfStructure, n: int, tol: float = 0.0) -> AxiomReport:
    """Max residual of the arity-n constraint over transversal basis words."""
    if n < 1:
        raise ValueError("n >= 1")
    for l in range(1, n + 1):
        s.table(l)  # raises TableAbsentError rather than treating as zero
    words = s.grid.words(n)
    workers = int(os.environ.get("AINF_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            residuals = list(ex.map(lambda w: _axiom_residual(s, w), words))
    else:
        residuals = [_axiom_residual(s, w) for w in words]
    worst, where, exact_zero = 0.0, None, True
    for word, res in zip(words, residuals):
        r = vec_norm(res)
        if any(bool(c) for c in res.values()):
            exact_zero = False
        if r > worst:
            worst, where = r, word
    return AxiomReport(n, worst, where if worst > tol else None,
                       exact_zero=exact_zero and s.exact)


def bar_differential(s: AInfStructure, word) -> dict:
    """Coderivation value d[a_1|...|a_n] as a formal sum of words."""
    word = tuple(word)
    if not s.grid.composable(word):
        raise ValueError(f"non-composable word {word}")
    n = len(word)
    pars = [s.grid.parity(l) for l in word]
    out: dict = {}
    for l in range(1, n + 1):
        k = n + 1 - l
        for j in range(1, k + 1):
            inner = word[j - 1: j - 1 + l]
            val = s.m(l, inner)
            if not val:
                continue
            sign = (-1) ** ((sum(pars[: j - 1]) + (j - 1) + mu_sign(pars[j - 1: j - 1 + l])) % 2)
            for lab, c in val.items():
                new = word[: j - 1] + (lab,) + word[j - 1 + l:]
                cur = out.get(new)
                term = c * sign
                out[new] = term if cur is None else cur + term
    return {w: c for w, c in out.items() if bool(c)}


def bar_differential_sum(s: AInfStructure, formal: dict) -> dict:
    out: dict = {}
    for word, coeff in formal.items():
        for w, c in bar_differential(s, word).items():
            term = coeff * c
            cur = out.get(w)
            out[w] = term if cur is None else cur + term
    return {w: c for w, c in out.items() if bool(c)}


# ---------------------------------------------------------------------------
# splittings of (1..n) into consecutive blocks
# ---------------------------------------------------------------------------

def _splittings(n):
    """Yield tuples of block lengths (b_1,..,b_i) with sum n."""
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in _splittings(n - first):
            yield (first,) + rest


def _blocks(word, lens):
    out, at = [], 0
    for b in lens:
        out.append(tuple(word[at: at + b]))
        at += b
    return out


def _value_parity(grid, block, shift):
    """Parity of f_b(block) (shift = b-1) or m_b(block) (shift = b)."""
    return (sum(grid.parity(l) for l in block) + shift) % 2


def compose_homotopies(f: HomotopyData, g: HomotopyData, max_arity=None) -> HomotopyData:
    """Composite homotopy: (f o g)_n = sum over splittings of f_i(g-blocks).

    The block sign is sum of mu over blocks plus mu of the value parities,
    normalized by mu(word) so that composing with the identity homotopy is
    the identity (see the decisions notes for the sign normalization).
    """
    if f.grid is not g.grid and f.grid.homs.keys() != g.grid.homs.keys():
        raise GridMismatchError("homotopies live on different hom grids")
    grid = f.grid
    tops = [max(t.maps, default=1) for t in (f, g)]
    top = max_arity if max_arity is not None else max(tops)
    maps = {}
    for n in range(2, top + 1):
        table = {}
        for word in grid.words(n):
            pars = [grid.parity(l) for l in word]
            acc: Vector = {}
            for lens in _splittings(n):
                i = len(lens)
                blocks = _blocks(word, lens)
                vals = [g.f(b, blk) for b, blk in zip(lens, blocks)]
                if any(len(v) == 0 for v in vals):
                    continue
                eps = sum(mu_sign([grid.parity(l) for l in blk]) for blk in blocks)
                eps += mu_sign([_value_parity(grid, blk, b - 1)
                                for b, blk in zip(lens, blocks)])
                eps += mu_sign(pars)  # normalization making f_1 = id a unit
                term = f.f_multi(i, vals)
                if term:
                    _vec_add(acc, term, (-1) ** (eps % 2))
            acc = {l: c for l, c in acc.items() if bool(c)}
            if acc:
                table[word] = acc
        if table:
            maps[n] = table
    return HomotopyData(grid, maps)


def _morphism_rhs(m: AInfStructure, f: HomotopyData, word) -> Vector:
    """RHS sum f_k(.., m_l(..), ..) of the morphism equation, with eps_R."""
    grid = m.grid
    n = len(word)
    pars = [grid.parity(l) for l in word]
    acc: Vector = {}
    for l in range(1, n + 1):
        k = n + 1 - l
        for j in range(1, k + 1):
            inner = word[j - 1: j - 1 + l]
            val = m.m(l, inner)
            if not val:
                continue
            value_par = _value_parity(grid, inner, l)
            arg_pars = pars[: j - 1] + [value_par] + pars[j - 1 + l:]
            eps = (sum(pars[: j - 1]) + (j - 1)
                   + mu_sign(pars[j - 1: j - 1 + l]) + mu_sign(arg_pars))
            args = list(word[: j - 1]) + [val] + list(word[j - 1 + l:])
            term = f.f_multi(k, args)
            if term:
                _vec_add(acc, term, (-1) ** (eps % 2))
    return acc


def _morphism_lhs_partial(mp_tables, f: HomotopyData, word) -> Vector:
    """LHS sum m'_i(f-blocks) excluding the all-singletons m'_n term."""
    grid = f.grid
    n = len(word)
    acc: Vector = {}
    for lens in _splittings(n):
        if all(b == 1 for b in lens):
            continue
        i = len(lens)
        blocks = _blocks(word, lens)
        vals = [f.f(b, blk) for b, blk in zip(lens, blocks)]
        if any(len(v) == 0 for v in vals):
            continue
        eps = sum(mu_sign([grid.parity(l) for l in blk]) for blk in blocks)
        eps += mu_sign([_value_parity(grid, blk, b - 1)
                        for b, blk in zip(lens, blocks)])
        # multilinear m'_i over the block values
        slots = [list(v.items()) for v in vals]
        for combo in iproduct(*slots):
            w = tuple(lab for lab, _ in combo)
            scale = None
            for _, c in combo:
                scale = c if scale is None else scale * c
            if not scale:
                continue
            val = mp_tables.get(i, {}).get(w)
            if val:
                _vec_add(acc, val, scale * (-1) ** (eps % 2))
    return acc


def transport(m: AInfStructure, f: HomotopyData, max_arity=None) -> AInfStructure:
    """The unique structure m' = m + delta f homotopic to m through f.

    Solved arity by arity from the morphism equation; f_1 = id makes the
    leading m'_n term invertible, so no conditions on f are needed.
    """
    if f.grid is not m.grid and f.grid.homs.keys() != m.grid.homs.keys():
        raise GridMismatchError("homotopy grid differs from the structure grid")
    grid = m.grid
    top = max_arity if max_arity is not None else max(m.arities)
    new_tables = {}
    if 1 in m.products:
        new_tables[1] = {w: dict(v) for w, v in m.products[1].items()}
    for n in range(2, top + 1):
        m.table(n)
        table = {}
        for word in grid.words(n):
            pars = [grid.parity(l) for l in word]
            rhs = _morphism_rhs(m, f, word)
            lhs_part = _morphism_lhs_partial(new_tables, f, word)
            vec = {}
            for lab in set(rhs) | set(lhs_part):
                c = rhs.get(lab, 0) - lhs_part.get(lab, 0)
                if bool(c):
                    vec[lab] = c * (-1) ** mu_sign(pars)
            if vec:
                table[word] = vec
        new_tables[n] = table
    return AInfStructure(grid, new_tables, exact=m.exact)


def inverse_homotopy(f: HomotopyData, max_arity: int) -> HomotopyData:
    """g with f o g = identity homotopy, built arity by arity."""
    grid = f.grid
    g = HomotopyData(grid, {})
    for n in range(2, max_arity + 1):
        table = {}
        for word in grid.words(n):
            pars = [grid.parity(l) for l in word]
            # (f o g)_n = g_n + f_n + middle terms; solve for g_n = -(rest)
            acc: Vector = {}
            for lens in _splittings(n):
                i = len(lens)
                if i == 1:
                    continue  # the unknown g_n term
                blocks = _blocks(word, lens)
                vals = [g.f(b, blk) for b, blk in zip(lens, blocks)]
                if any(len(v) == 0 for v in vals):
                    continue
                eps = sum(mu_sign([grid.parity(l) for l in blk]) for blk in blocks)
                eps += mu_sign([_value_parity(grid, blk, b - 1)
                                for b, blk in zip(lens, blocks)])
                eps += mu_sign(pars)
                term = f.f_multi(i, vals)
                if term:
                    _vec_add(acc, term, (-1) ** (eps % 2))
            vec = {lab: -c for lab, c in acc.items() if bool(c)}
            if vec:
                table[word] = vec
        if table:
            g.maps[n] = table
    return HomotopyData(grid, g.maps)


@dataclass
class CyclicReport:
    per_arity: dict  # arity -> max residual
    max_residual: float
    violating: object = None

    @property
    def ok(self):
        return self.violating is None


def check_cyclic(s: AInfStructure, b: CyclicPairing, tol: float = 0.0) -> CyclicReport:
    """Residuals of b(m_n(a_1..a_n), a_{n+1}) =
    (-1)^{n(~a_1+1)} b(a_1, m_n(a_2..a_{n+1})) over closed transversal words."""
    paired = {(b.grid.label_info(l1)[0], b.grid.label_info(l1)[1])
              for (l1, _) in b.blocks}
    for (s0, d0), sp in s.grid.homs.items():
        if sp.degrees and (d0, s0) in s.grid.homs and s.grid.homs[(d0, s0)].degrees \
                and s.grid.pair_transversal(s0, d0) and (s0, d0) not in paired:
            raise KeyError(f"pairing block for Hom({s0},{d0}) missing")
    per = {}
    worst, where = 0.0, None
    for n in s.arities:
        top = 0.0
        for word in s.grid.words(n + 1, closed=True):
            head, tail = word[: n], word[n]
            lhs = b.eval(s.m(n, head), {tail: 1})
            sign = (-1) ** ((n * (s.grid.parity(word[0]) + 1)) % 2)
            rhs = b.eval({word[0]: 1}, s.m(n, word[1:]))
            res = scalar_norm(lhs - sign * rhs)
            if res > top:
                top = res
            if res > worst:
                worst, where = res, word
        per[n] = top
    return CyclicReport(per, worst, where if worst > tol else None)


def check_cyclic_homotopy(f: HomotopyData, b: CyclicPairing, tol: float = 0.0,
                          max_n=None) -> CyclicReport:
    """Residuals of sum_{k+l=n} (-1)^{(l+1)(~a_1+..+~a_k)+nk}
    b(f_k(a_1..a_k), f_l(a_{k+1}..a_n)) = 0 for n >= 3."""
    grid = f.grid
    top_arity = max_n if max_n is not None else max(f.maps, default=2) + 1
    per = {}
    worst, where = 0.0, None
    for n in range(3, top_arity + 1):
        top = 0.0
        for word in grid.words(n, closed=True):
            pars = [grid.parity(l) for l in word]
            acc = 0
            for k in range(1, n):
                l = n - k
                v1 = f.f(k, word[:k])
                v2 = f.f(l, word[k:])
                if not v1 or not v2:
                    continue
                sign = (-1) ** (((l + 1) * sum(pars[:k]) + n * k) % 2)
                acc = acc + sign * b.eval(v1, v2)
            res = scalar_norm(acc)
            if res > top:
                top = res
            if res > worst:
                worst, where = res, word
        per[n] = top
    return CyclicReport(per, worst, where if worst > tol else None)
