"""Tiles, multi-tiles, their orderings, tile norms, trees and tree selection.

Tiles are exact: spatial intervals are dyadic, frequency intervals are
shifted dyadic, and all order predicates are evaluated on rationals (scalar
API) or on integers after clearing denominators (vectorised API used by the
sweeps).  Both routes are exercised against each other in the tests.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .dyadic import DyadicInterval, Interval, as_fraction, pow2
from .errors import BandLimitViolated, IndexMismatch, RefinementViolated
from .geometry import CubeSet, ShiftedCube, SingularSubspace, whitney_cubes
from .grid import CutoffWeight, GridFunction, GridSpec, weighted_l1
from .symbols import bump_1d

DEFAULT_C0 = 8
DEFAULT_C = 16
DEFAULT_GAP = 2
DEFAULT_N = 10


@dataclass(frozen=True, order=True)
class Tile:
    """``P = I x w`` with ``|I| * |w| = 1``; ``index`` is the slot (0-based)."""

    index: int
    I: DyadicInterval
    w: DyadicInterval

    def __post_init__(self):
        if self.I.shift != 0:
            raise ValueError("spatial intervals are unshifted dyadic intervals")
        if self.I.length * self.w.length != 1:
            raise ValueError("a tile has area 1")

    @property
    def center(self) -> Fraction:
        return self.w.center

    def to_json(self):
        return {"index": self.index, "I": self.I.to_json(), "w": self.w.to_json()}


@dataclass(frozen=True, order=True)
class MultiTile:
    """n tiles sharing the spatial interval ``I``; frequency cube ``cube``."""

    I: DyadicInterval
    cube: ShiftedCube

    def __post_init__(self):
        if self.I.scale != -self.cube.scale:
            raise ValueError("spatial and frequency scales must be reciprocal")

    @property
    def n(self) -> int:
        return self.cube.n

    def tile(self, i: int) -> Tile:
        return Tile(i, self.I, self.cube.axes()[i])

    @property
    def tiles(self) -> tuple[Tile, ...]:
        return tuple(self.tile(i) for i in range(self.n))

    def sort_key(self):
        return (self.I.left, self.I.length, self.cube.offsets)

    def to_json(self):
        return {"I": self.I.to_json(), "cube": self.cube.to_json()}


# --------------------------------------------------------------------------
# orderings (scalar, exact)


def _check_index(p1: Tile, p2: Tile):
    if p1.index != p2.index:
        raise IndexMismatch(f"tile indices {p1.index} and {p2.index} differ")


def order_lt(p1: Tile, p2: Tile) -> bool:
    """``p1 < p2``: I(p1) strictly inside I(p2) and w(p2) inside 3*w(p1)."""
    _check_index(p1, p2)
    return p1.I.is_proper_subset(p2.I) and p2.w.issubset(p1.w.dilate(3))


def order_le(p1: Tile, p2: Tile) -> bool:
    _check_index(p1, p2)
    return p1 == p2 or order_lt(p1, p2)


def order_lesssim(p1: Tile, p2: Tile, dilation=DEFAULT_C * DEFAULT_C0) -> bool:
    """I(p1) inside I(p2) and w(p2) inside ``dilation * w(p1)``."""
    _check_index(p1, p2)
    return p1.I.issubset(p2.I) and p2.w.issubset(p1.w.dilate(dilation))


def order_lesssim_prime(p1: Tile, p2: Tile, dilation=DEFAULT_C * DEFAULT_C0) -> bool:
    return order_lesssim(p1, p2, dilation) and not order_le(p1, p2)


# --------------------------------------------------------------------------
# vectorised geometry of a collection


def _lcm_den(values) -> int:
    d = 1
    for v in values:
        d = d * v.denominator // math.gcd(d, v.denominator)
    return d


class TileArrays:
    """Integer coordinates of a multi-tile collection for pairwise predicates.

    Spatial endpoints are multiplied by ``sden`` and doubled frequency
    endpoints by ``fden`` so every comparison is exact integer arithmetic.
    """

    def __init__(self, collection: Sequence[MultiTile]):
        self.collection = list(collection)
        self.count = len(self.collection)
        self.n = self.collection[0].n if self.collection else 0
        ends_s = [e for P in self.collection for e in (P.I.left, P.I.right)]
        ends_f = [e for P in self.collection for c in P.cube.axes() for e in (c.left, c.right)]
        self.sden = _lcm_den(ends_s) if ends_s else 1
        self.fden = _lcm_den(ends_f) if ends_f else 1
        self.I_lo = np.array([int(P.I.left * self.sden) for P in self.collection], dtype=np.int64)
        self.I_hi = np.array([int(P.I.right * self.sden) for P in self.collection], dtype=np.int64)
        self.w_lo = np.array([[int(a.left * self.fden) for a in P.cube.axes()] for P in self.collection],
                             dtype=np.int64).reshape(self.count, self.n)
        self.w_hi = np.array([[int(a.right * self.fden) for a in P.cube.axes()] for P in self.collection],
                             dtype=np.int64).reshape(self.count, self.n)
        self.I_len = np.array([float(P.I.length) for P in self.collection])
        self.scale = np.array([P.cube.scale for P in self.collection], dtype=np.int64)

    def center2(self, i: int) -> np.ndarray:
        """Doubled frequency centres (integers) of slot ``i``."""
        return self.w_lo[:, i] + self.w_hi[:, i]

    def _w_inside_dilate(self, i: int, factor) -> np.ndarray:
        """M[p, q] = w_q inside factor*w_p (slot i)."""
        f = as_fraction(factor)
        a, b = f.numerator, f.denominator
        lo, hi = self.w_lo[:, i], self.w_hi[:, i]
        c = b * (lo + hi)
        r = a * (hi - lo)
        dl, dh = c - r, c + r
        return (2 * b * lo[None, :] >= dl[:, None]) & (2 * b * hi[None, :] <= dh[:, None])

    def I_subset(self) -> np.ndarray:
        """M[p, q] = I_p inside I_q."""
        return (self.I_lo[None, :] <= self.I_lo[:, None]) & (self.I_hi[:, None] <= self.I_hi[None, :])

    def I_equal(self) -> np.ndarray:
        return (self.I_lo[:, None] == self.I_lo[None, :]) & (self.I_hi[:, None] == self.I_hi[None, :])

    def w_equal(self, i: int) -> np.ndarray:
        return (self.w_lo[:, i][:, None] == self.w_lo[:, i][None, :]) & (self.w_hi[:, i][:, None] == self.w_hi[:, i][None, :])

    def relations(self, i: int, dilation) -> dict:
        """Pairwise order matrices for slot ``i`` (row = smaller tile)."""
        sub = self.I_subset()
        eq_I = self.I_equal()
        eq = eq_I & self.w_equal(i)
        lt = sub & ~eq_I & self._w_inside_dilate(i, 3)
        le = lt | eq
        ls = sub & self._w_inside_dilate(i, dilation)
        return {"lt": lt, "le": le, "eq": eq, "lesssim": ls, "lesssim_prime": ls & ~le}


# --------------------------------------------------------------------------
# enumeration and rank


def enumerate_multitiles(sub: SingularSubspace, c0=DEFAULT_C0, scales=(-3, 0), spatial=(0, 8), mesh: int = 0,
                         along: Optional[float] = 1.0, window=None) -> list[MultiTile]:
    """Multi-tiles over the Whitney cubes (one mesh) that meet Gamma.

    Each cube of side ``2**j`` is paired with every dyadic ``I`` of length
    ``2**-j`` inside the spatial window ``[spatial[0], spatial[1])``.
    """
    cubes = whitney_cubes(sub, c0, scales, window=window, meshes=[mesh], meet_gamma=True, along=along)
    return multitiles_from_cubes(cubes, spatial)


def multitiles_from_cubes(cubes: CubeSet, spatial=(0, 8)) -> list[MultiTile]:
    a, b = as_fraction(spatial[0]), as_fraction(spatial[1])
    out = []
    for cube in cubes:
        length = pow2(-cube.scale)
        k0 = math.ceil(a / length)
        k1 = math.floor(b / length)
        for k in range(k0, k1):
            out.append(MultiTile(DyadicInterval(-cube.scale, k), cube))
    return out


def rank_check(collection: Sequence[MultiTile], sub: SingularSubspace, c0=DEFAULT_C0, c=DEFAULT_C,
               gap: int = DEFAULT_GAP, examples: int = 5) -> dict:
    """Exhaustive check of both rank implications over ordered pairs.

    For every set S of ``k`` slots and pair (P', P) with ``P'_s <= P_s`` for
    s in S: (a) ``P'_i <~ P_i`` for all i; (b) when ``|I_P| >= 2**gap * |I_P'|``,
    ``P'_i <~' P_i`` for at least two i.  The dilation in ``<~`` is ``c*c0``.
    """
    import itertools

    dilation = as_fraction(c) * as_fraction(c0)
    report = {"pairs": 0, "hypothesis_pairs": 0, "violations_a": 0, "violations_b": 0,
              "dilation": float(dilation), "gap": gap, "k": sub.k, "examples": []}
    if len(collection) < 2 or sub.k == 0:
        report["pairs"] = len(collection) ** 2
        report["vacuous"] = True
        report["passed"] = True
        return report
    arr = TileArrays(collection)
    rel = [arr.relations(i, dilation) for i in range(arr.n)]
    all_ls = np.logical_and.reduce([r["lesssim"] for r in rel])
    count_lsp = np.sum([r["lesssim_prime"] for r in rel], axis=0)
    far = arr.I_len[None, :] >= (2.0 ** gap) * arr.I_len[:, None]
    report["pairs"] = arr.count ** 2
    hyp_any = np.zeros((arr.count, arr.count), dtype=bool)
    for S in itertools.combinations(range(arr.n), sub.k):
        hyp = np.logical_and.reduce([rel[s]["le"] for s in S])
        hyp_any |= hyp
        va = hyp & ~all_ls
        vb = hyp & far & (count_lsp < 2)
        report["violations_a"] += int(va.sum())
        report["violations_b"] += int(vb.sum())
        for kind, mat in (("a", va), ("b", vb)):
            room = examples - len(report["examples"])
            if room <= 0:
                break
            rows, cols = np.nonzero(mat)
            for p, q in zip(rows[:room], cols[:room]):
                report["examples"].append({"kind": kind, "subset": list(S),
                                           "smaller": collection[p].to_json(), "larger": collection[q].to_json()})
    report["hypothesis_pairs"] = int(hyp_any.sum())
    report["passed"] = report["violations_a"] == 0 and report["violations_b"] == 0
    return report


def smallest_passing_c(collection: Sequence[MultiTile], sub: SingularSubspace, c0=DEFAULT_C0,
                       candidates=(1, 2, 4, 8, 16, 32, 64), gap: int = DEFAULT_GAP) -> Optional[float]:
    """Smallest dilation factor ``c`` (so ``<~`` uses ``c*c0``) passing :func:`rank_check`."""
    for c in candidates:
        if rank_check(collection, sub, c0, c, gap, examples=0)["passed"]:
            return c
    return None


def smallest_passing_c0(sub: SingularSubspace, candidates=(1, 2, 4, 8, 16), **kw) -> Optional[float]:
    """Smallest Whitney constant whose desk collection passes :func:`rank_check`."""
    c = kw.pop("c", DEFAULT_C)
    gap = kw.pop("gap", DEFAULT_GAP)
    for c0 in candidates:
        coll = enumerate_multitiles(sub, c0, **kw)
        if rank_check(coll, sub, c0, c, gap)["passed"]:
            return c0
    return None


# --------------------------------------------------------------------------
# tile norms


class TileNorms:
    """``||f||_P = (1/|I|) * || (Delta_w f) * chi_I**exponent ||_1`` with a per-``w`` filter cache.

    ``Delta_w`` multiplies the spectrum by the smoothstep bump adapted to
    ``w`` (1 on ``0.9*w``, 0 off ``w``).  The cutoff exponent defaults to
    ``2*N``.
    """

    def __init__(self, f: GridFunction, N: int = DEFAULT_N, exponent: Optional[float] = None):
        self.f = f
        self.N = N
        self.exponent = 2 * N if exponent is None else exponent
        self._filtered: dict = {}
        self._lock = threading.Lock()

    def filtered(self, w: DyadicInterval) -> np.ndarray:
        spec = self.f.spec
        nyq = spec.size / (2 * spec.length)
        if float(w.left) < -nyq or float(w.right) > nyq:
            raise BandLimitViolated(f"frequency interval [{float(w.left)}, {float(w.right)}) exceeds the grid band")
        key = (w.scale, w.offset, w.shift)
        got = self._filtered.get(key)
        if got is None:
            psi = bump_1d((spec.frequencies - float(w.left)) / float(w.length))
            got = np.abs(self.f.apply_multiplier(psi).samples)
            with self._lock:
                self._filtered.setdefault(key, got)
        return got

    def __call__(self, tile: Tile) -> float:
        spec = self.f.spec
        g = self.filtered(tile.w)
        wt = CutoffWeight(tile.I, self.exponent).on_grid(spec)
        return float(spec.spacing * np.sum(g * wt) / float(tile.I.length))


def tile_norm(f: GridFunction, tile: Tile, N: int = DEFAULT_N) -> float:
    return TileNorms(f, N)(tile)


def norm_matrix(collection: Sequence[MultiTile], fs: Sequence, N: int = DEFAULT_N) -> np.ndarray:
    """``||f_i||_{P_i}`` for every multi-tile (rows) and slot (columns).

    ``fs`` holds GridFunctions or ready :class:`TileNorms` tables.
    """
    tables = [f if isinstance(f, TileNorms) else TileNorms(f, N) for f in fs]
    out = np.zeros((len(collection), len(tables)))
    for r, P in enumerate(collection):
        for i, t in enumerate(tables):
            out[r, i] = t(P.tile(i))
    return out


# --------------------------------------------------------------------------
# trees


@dataclass
class Tree:
    """A ``j``-tree: every member satisfies ``P_j <= top_j``; the top need not be a member."""

    top: MultiTile
    members: list
    j: int
    kind: str = ""

    @property
    def I_T(self) -> DyadicInterval:
        return self.top.I

    def is_valid(self) -> bool:
        return all(order_le(P.tile(self.j), self.top.tile(self.j)) for P in self.members)

    def to_json(self):
        return {"top": self.top.to_json(), "j": self.j, "kind": self.kind,
                "members": [P.to_json() for P in self.members]}


def tree_size(T: Tree, i: int, f, N: int = DEFAULT_N, dilation=DEFAULT_C * DEFAULT_C0) -> float:
    """``size_i(T)``: the square-sum over members with ``P_i <~' top_i`` plus the sup over members."""
    table = f if isinstance(f, TileNorms) else TileNorms(f, N)
    if not T.members:
        return 0.0
    top_i = T.top.tile(i)
    sq = 0.0
    sup = 0.0
    for P in T.members:
        v = table(P.tile(i))
        sup = max(sup, v)
        if order_lesssim_prime(P.tile(i), top_i, dilation):
            sq += float(P.I.length) * v * v
    return math.sqrt(sq / float(T.I_T.length)) + sup


def _rect_disjoint(p: Tile, q: Tile) -> bool:
    return not p.I.intersects(q.I) or not p.w.intersects(q.w)


def strongly_disjoint(T1: Tree, T2: Tree, i: int) -> bool:
    """Strong ``i``-disjointness of two trees (exact).

    When the predicate holds, the consequence that all pairs of ``i``-tiles
    are disjoint rectangles is verified as well.
    """
    for P in T1.members:
        for Q in T2.members:
            if P.tile(i) == Q.tile(i):
                return False
    for A, B in ((T1, T2), (T2, T1)):
        for P in A.members:
            for Q in B.members:
                wp, wq = P.tile(i).w, Q.tile(i).w
                if wp.is_proper_subset(wq) and Q.I.intersects(A.I_T):
                    return False
    for P in T1.members:
        for Q in T2.members:
            if not _rect_disjoint(P.tile(i), Q.tile(i)):
                raise AssertionError("strongly disjoint trees with overlapping tiles")
    return True


# --------------------------------------------------------------------------
# refinement and selection


def refine(collection: Sequence[MultiTile], i: int, c1: int = 4) -> list[MultiTile]:
    """Deterministic refinement for tree selection.

    Keeps spatial scales on the lattice ``s_max - c1*Z``; for each ``w_i``
    keeps only the multi-tiles with the lexicographically smallest cube; then
    keeps one multi-tile per spatial interval (smallest cube).
    """
    if not collection:
        return []
    smax = max(P.I.scale for P in collection)
    kept = [P for P in collection if (smax - P.I.scale) % c1 == 0]
    best_for_w: dict = {}
    for P in kept:
        key = P.tile(i).w
        if key not in best_for_w or P.cube.offsets < best_for_w[key]:
            best_for_w[key] = P.cube.offsets
    kept = [P for P in kept if P.cube.offsets == best_for_w[P.tile(i).w]]
    best_for_I: dict = {}
    for P in kept:
        if P.I not in best_for_I or P.cube.offsets < best_for_I[P.I].cube.offsets:
            best_for_I[P.I] = P
    return sorted(best_for_I.values(), key=MultiTile.sort_key)


def check_refined(collection: Sequence[MultiTile], i: int, c1: int) -> list[str]:
    problems = []
    if not collection:
        return problems
    if len({P.I for P in collection}) != len(collection):
        problems.append("more than one multi-tile per spatial interval")
    scales = {P.I.scale for P in collection}
    smax = max(scales)
    if any((smax - s) % c1 for s in scales):
        problems.append(f"spatial scale ratios are not powers of 2**{c1}")
    seen: dict = {}
    for P in collection:
        w = P.tile(i).w
        if seen.setdefault(w, P.cube) != P.cube:
            problems.append("w_i does not determine the frequency cube")
            break
    return problems


@dataclass
class SelectionOutcome:
    trees: list
    residual: list
    m: int
    i: int
    sum_I_T: float
    hypothesis_max_size: float
    trace: list = field(default_factory=list)

    def selected_members(self) -> list:
        return [P for T in self.trees for P in T.members]


class _SelectionState:
    """Relation matrices and norms shared by selection and its verification."""

    def __init__(self, collection, i, norms, dilation):
        self.coll = list(collection)
        self.i = i
        self.arr = TileArrays(self.coll)
        self.norms = np.asarray(norms, dtype=float)
        self.rel_i = self.arr.relations(i, dilation)
        self.le = [self.arr.relations(j, dilation)["le"] if j != i else self.rel_i["le"] for j in range(self.arr.n)]
        xi2 = self.arr.center2(i)
        lsp = self.rel_i["lesssim_prime"]
        self.plus = lsp & (xi2[:, None] > xi2[None, :])
        self.minus = lsp & (xi2[:, None] < xi2[None, :])
        self.xi2 = xi2
        self.weight = self.arr.I_len * self.norms ** 2

    def tie_key(self, t: int, j: int):
        P = self.coll[t]
        return (P.I.left, P.I.length, P.cube.offsets, j)

    def max_tree_size(self, alive: np.ndarray, tops=None) -> float:
        """Largest size_i over all trees (any top from the full collection, any j) inside ``alive``."""
        if not alive.any():
            return 0.0
        tops = np.arange(self.arr.count) if tops is None else tops
        a = np.where(alive, self.norms, 0.0)
        w = np.where(alive, self.weight, 0.0)
        lsp = self.rel_i["lesssim_prime"]
        best = 0.0
        for j in range(self.arr.n):
            mem = self.le[j][:, tops] & alive[:, None]
            sq = (mem & lsp[:, tops]).astype(float).T @ w
            sup = np.max(np.where(mem, a[:, None], 0.0), axis=0)
            size = np.sqrt(sq / self.arr.I_len[tops]) + sup
            best = max(best, float(size.max()))
        return best


def select_trees(collection: Sequence[MultiTile], i: int, m: int, f, c1: int = 4, N: int = DEFAULT_N,
                 dilation=DEFAULT_C * DEFAULT_C0, norms=None) -> SelectionOutcome:
    """Greedy tree selection at size level ``2**-m`` for slot ``i``.

    Stages: (1) heavy multi-tiles (``||f_i||_{P_i} >= 2**(-m-2)``) grouped
    under the maximal ones; (2) trees with all members ``<~+`` the top and
    mass ``>= 2**(-2m-5) |I_T|``, chosen with largest top centre, then maximal
    under inclusion, then leftmost/smallest/lexicographic top; each choice
    also removes the ``i``-tree below its top; (3) the mirrored pass with
    ``<~-`` and smallest centre.  Candidate tops range over the whole input.

    Raises
    ------
    RefinementViolated
        If the collection is not refined (see :func:`refine`).
    """
    collection = list(collection)
    problems = check_refined(collection, i, c1)
    if problems:
        raise RefinementViolated("; ".join(problems))
    if not collection:
        return SelectionOutcome([], [], m, i, 0.0, 0.0)
    if norms is None:
        table = f if isinstance(f, TileNorms) else TileNorms(f, N)
        norms = np.array([table(P.tile(i)) for P in collection])
    st = _SelectionState(collection, i, norms, dilation)
    count = st.arr.count
    alive = np.ones(count, dtype=bool)
    hyp = st.max_tree_size(alive)
    trees, trace = [], []

    def take(mask, top, j, kind):
        members = [collection[p] for p in np.nonzero(mask)[0]]
        alive[mask] = False
        trees.append(Tree(collection[top], members, j, kind))
        trace.append({"kind": kind, "top": top, "j": j, "size": len(members)})

    # stage 1
    heavy = alive & (st.norms >= 2.0 ** (-m - 2))
    lt = st.rel_i["lt"]
    maximal = [p for p in np.nonzero(heavy)[0] if not np.any(lt[p] & heavy)]
    maximal.sort(key=lambda p: st.tie_key(p, i))
    for top in maximal:
        mask = heavy & alive & st.le[i][:, top]
        if mask.any():
            take(mask, top, i, "heavy")

    threshold = 2.0 ** (-2 * m - 5)
    for sign, rel in ((1, st.plus), (-1, st.minus)):
        kind = "plus" if sign > 0 else "minus"
        while True:
            w = np.where(alive, st.weight, 0.0)
            cands = []
            for j in range(st.arr.n):
                mem = st.le[j] & rel & alive[:, None]
                mass = mem.astype(float).T @ w
                for t in np.nonzero(mass >= threshold * st.arr.I_len)[0]:
                    cands.append((int(t), j))
            if not cands:
                break
            best_xi = max(sign * st.xi2[t] for t, _ in cands)
            cands = [(t, j) for t, j in cands if sign * st.xi2[t] == best_xi]
            cands.sort(key=lambda tj: st.tie_key(*tj))
            sets = [st.le[j][:, t] & rel[:, t] & alive for t, j in cands]
            chosen = None
            for a, sa in enumerate(sets):
                if not any(np.all(sa <= sb) and np.any(sb & ~sa) for b, sb in enumerate(sets) if b != a):
                    chosen = a
                    break
            t, j = cands[chosen]
            take(sets[chosen], t, j, kind)
            companion = alive & st.le[i][:, t]
            if companion.any():
                take(companion, t, i, kind + "-companion")

    residual = [collection[p] for p in np.nonzero(alive)[0]]
    total = float(sum(float(T.I_T.length) for T in trees))
    return SelectionOutcome(trees, residual, m, i, total, hyp, trace)


def verify_selection(outcome: SelectionOutcome, collection: Sequence[MultiTile], norms,
                     dilation=DEFAULT_C * DEFAULT_C0) -> dict:
    """Post-hoc checks: residual size bound by exhaustive tree enumeration,
    strong disjointness inside each pass, and exact conservation."""
    collection = list(collection)
    i, m = outcome.i, outcome.m
    report = {"residual_max_size": 0.0, "bound": 2.0 ** (-m - 1)}
    if not collection:
        report.update(residual_ok=True, disjoint_ok=True, conservation_ok=True, passed=True)
        return report
    st = _SelectionState(collection, i, norms, dilation)
    index = {P: r for r, P in enumerate(collection)}
    alive = np.zeros(len(collection), dtype=bool)
    for P in outcome.residual:
        alive[index[P]] = True
    report["residual_max_size"] = st.max_tree_size(alive)
    report["residual_ok"] = report["residual_max_size"] <= report["bound"] * (1 + 1e-12)
    ok = True
    for kind in ("plus", "minus"):
        group = [T for T in outcome.trees if T.kind == kind]
        for a in range(len(group)):
            for b in range(a + 1, len(group)):
                if not strongly_disjoint(group[a], group[b], i):
                    ok = False
    report["disjoint_ok"] = ok
    used = [P for T in outcome.trees for P in T.members] + list(outcome.residual)
    report["conservation_ok"] = sorted(used) == sorted(collection)
    report["trees_valid"] = all(T.is_valid() for T in outcome.trees)
    report["passed"] = all(report[k] for k in ("residual_ok", "disjoint_ok", "conservation_ok", "trees_valid"))
    return report


# --------------------------------------------------------------------------
# sums and checks


def model_sum(collection: Sequence[MultiTile], fs, N: int = DEFAULT_N) -> float:
    """``sum_P |I_P| prod_i ||f_i||_{P_i}``."""
    if not collection:
        return 0.0
    norms = norm_matrix(collection, fs, N)
    lengths = np.array([float(P.I.length) for P in collection])
    return float(np.sum(lengths * np.prod(norms, axis=1)))


def tiles_over_torus(cube: ShiftedCube, spec: GridSpec) -> list[MultiTile]:
    """All multi-tiles with frequency cube ``cube`` whose intervals tile ``[0, L)``."""
    length = pow2(-cube.scale)
    count = as_fraction(spec.length) / length
    if count.denominator != 1:
        raise ValueError("torus length must be a multiple of the spatial interval length")
    return [MultiTile(DyadicInterval(-cube.scale, k), cube) for k in range(int(count))]


def tree_square_function(T: Tree, i: int, f: GridFunction, N: int = DEFAULT_N,
                         dilation=DEFAULT_C * DEFAULT_C0, octaves: int = 12) -> tuple[GridFunction, dict]:
    """``S_T f = (sum_{P_i <~' top_i} ||f||_{P_i}**2 chi_{I_P})**(1/2)`` and its weak-L1 size.

    The weak quasinorm ``sup_t t*|{S > t}|`` is computed exactly from the
    sorted samples; the estimate over a dyadic level grid (``octaves`` around
    the median of the positive values) is reported next to it.
    """
    spec = f.spec
    table = TileNorms(f, N)
    top_i = T.top.tile(i)
    acc = np.zeros(spec.size)
    x = spec.points
    for P in T.members:
        if order_lesssim_prime(P.tile(i), top_i, dilation):
            v = table(P.tile(i))
            lo, hi = float(P.I.left), float(P.I.right)
            y = (x - lo) % spec.length
            acc[y < hi - lo] += v * v
    S = np.sqrt(acc)
    vals = np.sort(S)[::-1]
    counts = np.arange(1, vals.size + 1)
    weak_exact = float(np.max(vals * counts) * spec.spacing) if vals.size else 0.0
    pos = vals[vals > 0]
    weak_grid = 0.0
    if pos.size:
        med = float(np.median(pos))
        for e in range(-octaves // 2, octaves // 2 + 1):
            t = med * 2.0 ** e
            weak_grid = max(weak_grid, t * spec.spacing * float(np.sum(S > t)))
    rhs = weighted_l1(f, CutoffWeight(T.I_T, N))
    report = {"weak_exact": weak_exact, "weak_grid": weak_grid, "rhs": rhs,
              "ratio": weak_exact / rhs if rhs > 0 else 0.0}
    return GridFunction(spec, S), report


def tree_cauchy_schwarz_check(T: Tree, fs, N: int = DEFAULT_N, dilation=DEFAULT_C * DEFAULT_C0) -> dict:
    """Both sides of the tree estimate and their ratio."""
    tables = [f if isinstance(f, TileNorms) else TileNorms(f, N) for f in fs]
    n = len(tables)
    if not T.members:
        return {"lhs": 0.0, "rhs": 0.0, "ratio": 0.0}
    norms = norm_matrix(T.members, tables, N)
    lengths = np.array([float(P.I.length) for P in T.members])
    lhs = float(np.sum(lengths * np.prod(norms, axis=1)))
    sizes = [tree_size(T, i, tables[i], N, dilation) for i in range(n)]
    sups = norms.max(axis=0)
    best = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            rest = np.prod([sups[c] for c in range(n) if c not in (a, b)])
            best = max(best, sizes[a] * sizes[b] * rest)
    rhs = float(T.I_T.length) * best
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else 0.0}


def random_packets(spec: GridSpec, collection: Sequence[MultiTile], i: int, count: int,
                   rng: np.random.Generator, amplitude: float = 1.0) -> GridFunction:
    """Sum of Gaussian wave packets placed on randomly chosen ``i``-tiles."""
    x = spec.points
    acc = np.zeros(spec.size, dtype=np.complex128)
    if not collection:
        return GridFunction(spec, acc)
    for r in rng.choice(len(collection), size=min(count, len(collection)), replace=False):
        P = collection[int(r)].tile(i)
        c, width, xi = float(P.I.center), float(P.I.length), float(P.w.center)
        y = (x - c + spec.length / 2) % spec.length - spec.length / 2
        amp = amplitude * rng.uniform(0.5, 1.5) * np.exp(2j * np.pi * rng.uniform())
        acc += amp * np.exp(-np.pi * (2 * y / width) ** 2) * np.exp(2j * np.pi * xi * x)
    return GridFunction(spec, acc)


def lambda_constants(f: GridFunction, intervals, N: int = DEFAULT_N) -> tuple[float, float]:
    """Smallest ``(a, lam)`` with ``||f chi_I^(N/2)||_2**2 <= lam |I|`` and
    ``||f chi_I^N||_1 <= a lam |I|`` for every interval given."""
    from .grid import weighted_l2

    intervals = list(intervals)
    if not intervals:
        return 0.0, 0.0
    lam = max(weighted_l2(f, CutoffWeight(I, N / 2)) ** 2 / float(I.length) for I in intervals)
    if lam == 0:
        return 0.0, 0.0
    a = max(weighted_l1(f, CutoffWeight(I, N)) / (lam * float(I.length)) for I in intervals)
    return a, lam


def iterate_selection(collection: Sequence[MultiTile], i: int, f, m_start: int, m_stop: int, c1: int = 4,
                      N: int = DEFAULT_N, dilation=DEFAULT_C * DEFAULT_C0, norms=None) -> list:
    """Run :func:`select_trees` at levels ``m_start..m_stop``, each on the previous residual."""
    collection = list(collection)
    if norms is None:
        table = f if isinstance(f, TileNorms) else TileNorms(f, N)
        norms = np.array([table(P.tile(i)) for P in collection])
    lookup = dict(zip(collection, np.asarray(norms, dtype=float)))
    outcomes = []
    current = collection
    for m in range(m_start, m_stop + 1):
        a = np.array([lookup[P] for P in current])
        out = select_trees(current, i, m, None, c1, N, dilation, norms=a)
        outcomes.append(out)
        current = out.residual
    return outcomes


def random_instance(sub: SingularSubspace, rng: np.random.Generator, i: int = 0, c0=DEFAULT_C0, scales=(-4, 0),
                    spatial=(0, 16), c1: int = 2, keep: float = 0.9, max_tiles: int = 300,
                    cubes: Optional[CubeSet] = None) -> list[MultiTile]:
    """A random refined collection.

    For every spatial interval on the scale lattice, with probability ``keep``
    one Whitney cube of the matching scale is drawn uniformly and paired with
    the interval; :func:`refine` then enforces the remaining rules.
    """
    if cubes is None:
        cubes = whitney_cubes(sub, c0, scales, meshes=[0], meet_gamma=True, along=1.0)
    a, b = as_fraction(spatial[0]), as_fraction(spatial[1])
    present = sorted({int(j) for j in cubes.scales})
    if not present:
        return []
    jmin = min(present)
    chosen = []
    for j in present:
        if (j - jmin) % c1:
            continue
        rows = np.flatnonzero(cubes.scales == j)
        length = pow2(-j)
        for k in range(math.ceil(a / length), math.floor(b / length)):
            if rows.size and rng.uniform() < keep:
                chosen.append(MultiTile(DyadicInterval(-j, k), cubes.cube(int(rng.choice(rows)))))
    out = refine(chosen, i, c1)
    if len(out) > max_tiles:
        pick = np.sort(rng.choice(len(out), size=max_tiles, replace=False))
        out = [out[r] for r in pick]
    return out


def planted_instance(sub: SingularSubspace, rng: np.random.Generator, i: int = 0, j: Optional[int] = None,
                     c0=DEFAULT_C0, scales=(-4, 0), spatial=(0, 16), c1: int = 2, keep: float = 0.9,
                     cubes: Optional[CubeSet] = None) -> tuple[list[MultiTile], MultiTile, int]:
    """A random collection with a ``j``-tree planted under a random coarse top.

    Below the top's interval every lattice-scale interval receives a cube
    whose ``j``-tile lies below the top's (when one exists); elsewhere cubes
    are drawn as in :func:`random_instance`.  When ``j`` is None the first
    slot admitting such cubes at every lattice scale is used.  Returns the
    refined collection, the top and ``j``.
    """
    if cubes is None:
        cubes = whitney_cubes(sub, c0, scales, meshes=[0], meet_gamma=True, along=1.0)
    a, b = as_fraction(spatial[0]), as_fraction(spatial[1])
    present = sorted({int(s) for s in cubes.scales})
    jmin = min(present)
    lattice = [s for s in present if (s - jmin) % c1 == 0]
    top_scale = lattice[0]
    length = pow2(-top_scale)
    slots = list(range(math.ceil(a / length), math.floor(b / length)))
    top_rows = np.flatnonzero(cubes.scales == top_scale)
    top = MultiTile(DyadicInterval(-top_scale, int(rng.choice(slots))), cubes.cube(int(rng.choice(top_rows))))

    def below(s, slot):
        rows = np.flatnonzero(cubes.scales == s)
        w_top = top.cube.axes()[slot]
        return [int(r) for r in rows if w_top.issubset(cubes.cube(int(r)).axes()[slot].dilate(3))]

    finer = lattice[1:]
    if j is None:
        j = next((slot for slot in range(sub.n) if all(below(s, slot) for s in finer)), 0)
    chosen = [top]
    for s in lattice:
        rows = np.flatnonzero(cubes.scales == s)
        under = below(s, j) if s != top_scale else []
        length = pow2(-s)
        for k in range(math.ceil(a / length), math.floor(b / length)):
            I = DyadicInterval(-s, k)
            if I == top.I:
                continue
            if I.issubset(top.I) and under:
                chosen.append(MultiTile(I, cubes.cube(int(rng.choice(under)))))
            elif rows.size and rng.uniform() < keep:
                chosen.append(MultiTile(I, cubes.cube(int(rng.choice(rows)))))
    return refine(chosen, i, c1), top, j
