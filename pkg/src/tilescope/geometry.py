"""Frequency-space geometry: the hyperplane sum(xi) = 0, singular subspaces,
shifted dyadic cubes, covering cubes and Whitney collections.

Cube geometry is exact (``Fraction``); distance filtering is vectorised in
floating point and every decision that lands within a relative ``1e-9`` of a
band edge is re-decided in exact rational arithmetic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .dyadic import DyadicInterval, Interval, SHIFTS, as_fraction, frac_to_json, pow2
from .errors import EmptyWindow, NotOnGamma, SearchExhausted

GAMMA_TOL = 1e-9
_BORDER = 1e-9


def mesh_shifts(n: int, index: int) -> tuple[Fraction, ...]:
    """Shift tuple of mesh ``index`` (base-3 digits, axis 0 most significant)."""
    digits = []
    for _ in range(n):
        digits.append(index % 3)
        index //= 3
    return tuple(SHIFTS[d] for d in reversed(digits))


def mesh_index(shifts: Sequence[Fraction]) -> int:
    idx = 0
    for s in shifts:
        idx = 3 * idx + SHIFTS.index(as_fraction(s))
    return idx


def _signed(shift: Fraction, scale: int) -> Fraction:
    return shift if scale % 2 == 0 else -shift


# --------------------------------------------------------------------------
# singular subspaces


class SingularSubspace:
    """A subspace Gamma' of the hyperplane Gamma = {sum(xi) = 0}, given by a basis.

    Parameters
    ----------
    basis : array_like, shape (k, n)
        Spanning vectors; each must sum to zero.  ``k = 0`` is allowed
        (``basis`` of shape ``(0, n)``) and means Gamma' = {0}.
    """

    def __init__(self, basis, n: Optional[int] = None):
        b = np.asarray(basis, dtype=float)
        if b.size == 0:
            if n is None:
                raise ValueError("n is required for the zero subspace")
            b = np.zeros((0, n))
        b = np.atleast_2d(b)
        self.n = b.shape[1]
        self.k = b.shape[0]
        if self.n < 2:
            raise ValueError("n must be at least 2")
        for v in b:
            if abs(v.sum()) > GAMMA_TOL * max(1.0, np.abs(v).max()):
                raise NotOnGamma(f"basis vector {v} does not sum to zero")
        self.basis = b
        self.basis.setflags(write=False)
        if self.k:
            q, r = np.linalg.qr(b.T)
            if np.min(np.abs(np.diag(r))) < 1e-12 * np.abs(r).max():
                raise ValueError("basis vectors are linearly dependent")
            self.orthonormal = q  # (n, k)
        else:
            self.orthonormal = np.zeros((self.n, 0))
        self.graph_maps, self.conditions = self._graph_maps()

    def _graph_maps(self):
        maps, conds = {}, {}
        if self.k == 0:
            return maps, conds
        for subset in itertools.combinations(range(self.n), self.k):
            block = self.basis[:, subset].T  # (k, k): coordinates S of the basis
            cond = float(np.linalg.cond(block))
            conds[subset] = cond
            if np.isfinite(cond) and cond < 1e12:
                # xi = basis.T @ c, xi_S = block @ c  =>  xi = basis.T @ block^{-1} @ xi_S
                maps[subset] = self.basis.T @ np.linalg.inv(block)
        return maps, conds

    @property
    def nondegenerate(self) -> bool:
        """Gamma' is a graph over every set of k coordinates."""
        return self.k == 0 or len(self.graph_maps) == math.comb(self.n, self.k)

    @property
    def dimension_ok(self) -> bool:
        """The constraint ``0 <= k < n/2``; reported, never enforced."""
        return 2 * self.k < self.n

    def from_coordinates(self, subset: tuple[int, ...], values) -> np.ndarray:
        """Point of Gamma' whose coordinates in ``subset`` equal ``values``."""
        return self.graph_maps[tuple(subset)] @ np.asarray(values, dtype=float)

    def project(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        q = self.orthonormal
        return (xi @ q) @ q.T

    def distance(self, xi) -> np.ndarray:
        """Distance of (rows of) ``xi`` to Gamma' without the on-Gamma check."""
        xi = np.asarray(xi, dtype=float)
        return np.linalg.norm(xi - self.project(xi), axis=-1)

    def to_json(self):
        return {"n": self.n, "k": self.k, "basis": self.basis.tolist(),
                "nondegenerate": self.nondegenerate, "dimension_ok": self.dimension_ok,
                "max_condition": max(self.conditions.values(), default=1.0)}


def dist_to_subspace(xi, sub: SingularSubspace) -> float:
    """Euclidean distance from a point of Gamma to Gamma'."""
    xi = np.asarray(xi, dtype=float)
    if abs(xi.sum()) > GAMMA_TOL * max(np.linalg.norm(xi), 1e-300) and np.any(xi):
        raise NotOnGamma(f"sum of coordinates is {xi.sum():.3g}")
    return float(sub.distance(xi))


# --------------------------------------------------------------------------
# shifted cubes


@dataclass(frozen=True, order=True)
class ShiftedCube:
    """Product of shifted dyadic intervals at a common scale."""

    scale: int
    offsets: tuple[int, ...]
    shifts: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(int(k) for k in self.offsets))
        object.__setattr__(self, "shifts", tuple(as_fraction(s) for s in self.shifts))
        if len(self.offsets) != len(self.shifts):
            raise ValueError("offsets and shifts differ in length")

    @property
    def n(self) -> int:
        return len(self.offsets)

    @property
    def side(self) -> Fraction:
        return pow2(self.scale)

    @property
    def diam2(self) -> Fraction:
        return self.n * pow2(2 * self.scale)

    @property
    def mesh(self) -> int:
        return mesh_index(self.shifts)

    def axes(self) -> tuple[DyadicInterval, ...]:
        return tuple(DyadicInterval(self.scale, k, s) for k, s in zip(self.offsets, self.shifts))

    @property
    def lows(self) -> tuple[Fraction, ...]:
        return tuple(a.left for a in self.axes())

    @property
    def highs(self) -> tuple[Fraction, ...]:
        return tuple(a.right for a in self.axes())

    def contains(self, point) -> bool:
        return all(a.contains(x) for a, x in zip(self.axes(), point))

    def dilate(self, factor) -> tuple[Interval, ...]:
        return tuple(a.dilate(factor) for a in self.axes())

    def meets_gamma(self) -> bool:
        """The open cube meets the hyperplane sum(xi) = 0."""
        return sum(self.lows) < 0 < sum(self.highs)

    def to_json(self):
        return {"scale": self.scale, "offsets": list(self.offsets),
                "shifts": [frac_to_json(s) for s in self.shifts]}

    @classmethod
    def from_json(cls, d) -> "ShiftedCube":
        return cls(d["scale"], tuple(d["offsets"]), tuple(Fraction(a, b) for a, b in d["shifts"]))


def box_inside(inner_lo, inner_hi, outer: Sequence[Interval]) -> bool:
    """Closed box [inner_lo, inner_hi] lies inside the closed box ``outer``."""
    return all(o.left <= a and b <= o.right for a, b, o in zip(inner_lo, inner_hi, outer))


# --------------------------------------------------------------------------
# covering cubes

_LOW_MARGIN = Fraction(1, 20)
_HIGH_MARGIN = Fraction(19, 20)


def _cover_axis(a: Fraction, b: Fraction, scale: int) -> Optional[tuple[int, Fraction]]:
    """Offset and shift of an interval at ``scale`` whose 9/10 dilate contains [a, b]."""
    side = pow2(scale)
    for s in SHIFTS:
        sg = _signed(s, scale)
        k = math.floor(a / side - sg - _LOW_MARGIN)
        if k >= b / side - sg - _HIGH_MARGIN:
            return k, s
    return None


def covering_cube(lows, highs, octaves: int = 4) -> ShiftedCube:
    """A shifted dyadic cube whose 9/10 dilate contains the closed box [lows, highs].

    Scales are scanned upward from ``floor(log2(side))`` over ``octaves + 1``
    values; the first scale at which every axis can be covered wins and on
    each axis the first shift (in the order 0, 1/3, 2/3) that works is used.
    """
    lo = [as_fraction(x) for x in lows]
    hi = [as_fraction(x) for x in highs]
    if any(b < a for a, b in zip(lo, hi)):
        raise ValueError("empty box")
    side = max(b - a for a, b in zip(lo, hi))
    if side == 0:
        j0 = -60
    else:
        j0 = math.floor(math.log2(side))
        if pow2(j0 + 1) <= side:
            j0 += 1
        elif pow2(j0) > side:
            j0 -= 1
    for j in range(j0, j0 + octaves + 1):
        picks = [_cover_axis(a, b, j) for a, b in zip(lo, hi)]
        if all(p is not None for p in picks):
            return ShiftedCube(j, tuple(p[0] for p in picks), tuple(p[1] for p in picks))
    raise SearchExhausted(f"no covering cube for side {float(side):.4g} within {octaves} octaves")


# --------------------------------------------------------------------------
# distance from boxes to the singular subspace


def _box_line_dist2(lo: np.ndarray, hi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """min over t of |dist(t*u, box)|**2 for each row box (float, vectorised)."""
    nz = np.nonzero(u != 0)[0]
    zero = np.nonzero(u == 0)[0]
    const = np.zeros(lo.shape[0])
    if zero.size:
        d = np.maximum(lo[:, zero], 0) + np.maximum(-hi[:, zero], 0)
        const = (d * d).sum(axis=1)
    if nz.size == 0:
        return const
    uu = u[nz]
    l, h = lo[:, nz], hi[:, nz]
    b1, b2 = l / uu, h / uu
    bps = np.sort(np.concatenate([np.minimum(b1, b2), np.maximum(b1, b2)], axis=1), axis=1)

    def g(t):
        tu = t[:, None] * uu
        d = np.maximum(l - tu, 0) + np.maximum(tu - h, 0)
        return (d * d).sum(axis=1)

    best = np.full(lo.shape[0], np.inf)
    edges = np.concatenate([np.full((lo.shape[0], 1), -np.inf), bps,
                            np.full((lo.shape[0], 1), np.inf)], axis=1)
    for p in range(edges.shape[1] - 1):
        left, right = edges[:, p], edges[:, p + 1]
        mid = np.where(np.isfinite(left) & np.isfinite(right), (left + right) / 2,
                       np.where(np.isfinite(left), left + 1, np.where(np.isfinite(right), right - 1, 0.0)))
        tu = mid[:, None] * uu
        below = l > tu
        above = tu > h
        target = np.where(below, l, np.where(above, h, 0.0))
        act = below | above
        den = (act * uu * uu).sum(axis=1)
        num = (act * uu * target).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(den > 0, num / np.where(den > 0, den, 1), mid)
        t = np.clip(t, left, right)
        t = np.where(np.isfinite(t), t, mid)
        best = np.minimum(best, g(t))
    for p in range(bps.shape[1]):
        best = np.minimum(best, g(bps[:, p]))
    return best + const


def _box_line_dist2_exact(lo, hi, u) -> Fraction:
    """Exact rational version of :func:`_box_line_dist2` for one box."""
    lo = [as_fraction(x) for x in lo]
    hi = [as_fraction(x) for x in hi]
    u = [as_fraction(x) for x in u]

    def g(t):
        tot = Fraction(0)
        for a, b, c in zip(lo, hi, u):
            x = t * c
            d = a - x if x < a else (x - b if x > b else 0)
            tot += d * d
        return tot

    bps = sorted({a / c for a, c in zip(lo, u) if c} | {b / c for b, c in zip(hi, u) if c})
    if not bps:
        return g(Fraction(0))
    cands = list(bps)
    edges = [None] + bps + [None]
    for p in range(len(edges) - 1):
        left, right = edges[p], edges[p + 1]
        if left is None and right is None:
            mid = Fraction(0)
        elif left is None:
            mid = right - 1
        elif right is None:
            mid = left + 1
        else:
            mid = (left + right) / 2
        num = den = Fraction(0)
        for a, b, c in zip(lo, hi, u):
            x = mid * c
            if x < a:
                num += c * a
                den += c * c
            elif x > b:
                num += c * b
                den += c * c
        if den == 0:
            continue
        t = num / den
        if left is not None and t < left:
            t = left
        if right is not None and t > right:
            t = right
        cands.append(t)
    return min(g(t) for t in cands)


def box_distance2(lo: np.ndarray, hi: np.ndarray, sub: SingularSubspace) -> np.ndarray:
    """Squared distance from closed boxes (rows) to Gamma', in floating point.

    Exact up to round-off for ``k <= 1``; for ``k >= 2`` a bounded
    least-squares solve is used.
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    if sub.k == 0:
        d = np.maximum(lo, 0) + np.maximum(-hi, 0)
        return (d * d).sum(axis=1)
    if sub.k == 1:
        return _box_line_dist2(lo, hi, sub.basis[0])
    q = sub.orthonormal
    perp = np.eye(sub.n) - q @ q.T
    out = np.empty(lo.shape[0])
    for r in range(lo.shape[0]):
        res = lsq_linear(perp, np.zeros(sub.n), bounds=(lo[r], hi[r]))
        out[r] = float(np.sum((perp @ res.x) ** 2))
    return out


def cube_distance2_exact(cube: ShiftedCube, sub: SingularSubspace) -> Fraction:
    """Exact squared distance from the closed cube to Gamma' (k = 0 or 1)."""
    lo, hi = cube.lows, cube.highs
    if sub.k == 0:
        tot = Fraction(0)
        for a, b in zip(lo, hi):
            d = a if a > 0 else (-b if b < 0 else 0)
            tot += d * d
        return tot
    if sub.k == 1:
        return _box_line_dist2_exact(lo, hi, sub.basis[0])
    raise NotImplementedError("exact cube distance is available for k <= 1")


def in_band_exact(cube: ShiftedCube, sub: SingularSubspace, c0) -> bool:
    """C0*diam(Q) <= dist(Q, Gamma') <= 2*C0*diam(Q), decided exactly via squares."""
    c0 = as_fraction(c0)
    d2 = cube_distance2_exact(cube, sub)
    return c0 * c0 * cube.diam2 <= d2 <= 4 * c0 * c0 * cube.diam2


# --------------------------------------------------------------------------
# Whitney collections


class CubeSet:
    """Shifted cubes stored as integer arrays, sorted by (scale, mesh, offsets)."""

    def __init__(self, n: int, scales, meshes, offsets):
        self.n = n
        scales = np.asarray(scales, dtype=np.int64).reshape(-1)
        meshes = np.asarray(meshes, dtype=np.int64).reshape(-1)
        offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, n)
        order = np.lexsort(tuple(offsets[:, a] for a in reversed(range(n))) + (meshes, scales))
        self.scales = scales[order]
        self.meshes = meshes[order]
        self.offsets = offsets[order]
        self._shift_table = np.array([[float(s) for s in mesh_shifts(n, m)] for m in range(3 ** n)])
        self._index = None

    def __len__(self):
        return int(self.scales.size)

    def cube(self, r: int) -> ShiftedCube:
        return ShiftedCube(int(self.scales[r]), tuple(self.offsets[r]), mesh_shifts(self.n, int(self.meshes[r])))

    def __iter__(self) -> Iterator[ShiftedCube]:
        for r in range(len(self)):
            yield self.cube(r)

    def cubes(self) -> list[ShiftedCube]:
        return list(self)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Float lower corners and sides (exact for moderate scales: dyadic times thirds)."""
        side = np.ldexp(1.0, self.scales)
        sign = np.where(self.scales % 2 == 0, 1.0, -1.0)
        lo = side[:, None] * (self.offsets + sign[:, None] * self._shift_table[self.meshes])
        return lo, side

    def subset(self, mask) -> "CubeSet":
        return CubeSet(self.n, self.scales[mask], self.meshes[mask], self.offsets[mask])

    def lookup(self, scale: int, mesh: int, offsets) -> Optional[int]:
        if self._index is None:
            self._index = {(int(j), int(m), tuple(int(v) for v in o)): r
                           for r, (j, m, o) in enumerate(zip(self.scales, self.meshes, self.offsets))}
        return self._index.get((int(scale), int(mesh), tuple(int(v) for v in offsets)))

    def _groups(self):
        if getattr(self, "_group_cache", None) is None:
            groups = {}
            if len(self):
                pair = self.scales * (3 ** self.n) + self.meshes
                starts = np.concatenate([[0], np.nonzero(np.diff(pair))[0] + 1, [len(self)]])
                for a, b in zip(starts[:-1], starts[1:]):
                    offs = self.offsets[a:b]
                    omin = offs.min(axis=0)
                    radix = offs.max(axis=0) - omin + 1
                    keys = self._encode(offs, omin, radix)
                    groups[(int(self.scales[a]), int(self.meshes[a]))] = (a, omin, radix, keys)
            self._group_cache = groups
        return self._group_cache

    @staticmethod
    def _encode(offs, omin, radix):
        key = np.zeros(offs.shape[0], dtype=np.int64)
        for a in range(offs.shape[1]):
            key = key * radix[a] + (offs[:, a] - omin[a])
        return key

    def find_rows(self, scale: int, mesh: int, offsets) -> np.ndarray:
        """Vectorised :meth:`lookup`: row index per offset row, ``-1`` when absent."""
        offsets = np.atleast_2d(np.asarray(offsets, dtype=np.int64))
        out = np.full(offsets.shape[0], -1, dtype=np.int64)
        g = self._groups().get((int(scale), int(mesh)))
        if g is None:
            return out
        start, omin, radix, keys = g
        rel = offsets - omin
        ok = np.all((rel >= 0) & (rel < radix), axis=1)
        if not ok.any():
            return out
        q = self._encode(offsets[ok], omin, radix)
        pos = np.searchsorted(keys, q)
        pos_c = np.minimum(pos, keys.size - 1)
        hit = keys[pos_c] == q
        idx = np.nonzero(ok)[0]
        out[idx[hit]] = start + pos_c[hit]
        return out

    def group_keys(self):
        return list(self._groups().keys())

    def incidence(self, points, factor: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Pairs (point index, row) such that ``factor*Q_row`` contains the point.

        ``factor <= 1``: at each (scale, mesh) only the mesh cell holding the
        point can qualify.  Half-open cells for ``factor == 1``; closed dilates
        otherwise.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        pi, rows = [], []
        margin = (1.0 - factor) / 2
        for j, m in self.group_keys():
            side = math.ldexp(1.0, j)
            sh = self._shift_table[m] * (1.0 if j % 2 == 0 else -1.0)
            rel = pts / side - sh
            k = np.floor(rel).astype(np.int64)
            r = self.find_rows(j, m, k)
            hit = r >= 0
            if factor < 1.0:
                frac = rel - k
                hit &= np.all((frac >= margin) & (frac <= 1 - margin), axis=1)
            idx = np.nonzero(hit)[0]
            pi.append(idx)
            rows.append(r[idx])
        if not pi:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(pi), np.concatenate(rows)

    def containing(self, xi, factor: float = 1.0) -> list[int]:
        """Rows whose cube dilated by ``factor`` (about its centre) contains ``xi``."""
        _, rows = self.incidence(np.asarray(xi, dtype=float)[None, :], factor)
        return sorted(int(r) for r in rows)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("j,mesh," + ",".join(f"k{a}" for a in range(self.n)) + "\n")
            for j, m, o in zip(self.scales, self.meshes, self.offsets):
                fh.write(f"{j},{m}," + ",".join(str(v) for v in o) + "\n")

    def to_json(self):
        return {"n": self.n, "cubes": [[int(j), int(m)] + [int(v) for v in o]
                                       for j, m, o in zip(self.scales, self.meshes, self.offsets)]}

    @classmethod
    def from_json(cls, d) -> "CubeSet":
        n = d["n"]
        rows = np.asarray(d["cubes"], dtype=np.int64).reshape(-1, n + 2)
        return cls(n, rows[:, 0], rows[:, 1], rows[:, 2:])

    @classmethod
    def from_cubes(cls, n: int, cubes: Iterable[ShiftedCube]) -> "CubeSet":
        cubes = list(cubes)
        return cls(n, [c.scale for c in cubes], [c.mesh for c in cubes], [c.offsets for c in cubes])


def _candidate_offsets(sub, j, shifts, window_lo, window_hi, reach, t_limit=None):
    """Integer offsets of mesh cubes inside the window whose centre may lie within ``reach`` of Gamma'."""
    n = sub.n
    side = math.ldexp(1.0, j)
    sg = np.array([float(_signed(s, j)) for s in shifts])
    # cubes [side*(k+sg), side*(k+sg+1)] inside the window
    kmin = np.ceil(window_lo / side - sg - 1e-12).astype(np.int64)
    kmax = (np.floor(window_hi / side - sg + 1e-12) - 1).astype(np.int64)
    if np.any(kmax < kmin):
        return np.zeros((0, n), dtype=np.int64)
    if sub.k == 0:
        klo = np.maximum(kmin, np.floor(-reach / side - sg - 1).astype(np.int64))
        khi = np.minimum(kmax, np.ceil(reach / side - sg).astype(np.int64))
        if np.any(khi < klo):
            return np.zeros((0, n), dtype=np.int64)
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(klo, khi)], indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)
    if sub.k == 1:
        u = sub.basis[0]
        a = int(np.argmax(np.abs(u)))
        others = [i for i in range(n) if i != a]
        chunks = []
        for ka in range(kmin[a], kmax[a] + 1):
            c = side * (ka + sg[a] + 0.5)
            t0, t1 = sorted(((c - reach) / u[a], (c + reach) / u[a]))
            if t_limit is not None:
                t0, t1 = max(t0, -t_limit), min(t1, t_limit)
                if t1 < t0:
                    continue
            ranges = []
            for i in others:
                lo_c, hi_c = sorted((t0 * u[i], t1 * u[i]))
                lo_c -= reach
                hi_c += reach
                klo = max(kmin[i], math.floor(lo_c / side - sg[i] - 0.5))
                khi = min(kmax[i], math.ceil(hi_c / side - sg[i] - 0.5))
                if khi < klo:
                    break
                ranges.append(np.arange(klo, khi + 1))
            else:
                grids = np.meshgrid(*ranges, indexing="ij")
                block = np.empty((grids[0].size, n), dtype=np.int64)
                block[:, a] = ka
                for col, g in zip(others, grids):
                    block[:, col] = g.reshape(-1)
                chunks.append(block)
        if not chunks:
            return np.zeros((0, n), dtype=np.int64)
        return np.concatenate(chunks)
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(kmin, kmax)], indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def whitney_cubes(sub: SingularSubspace, c0: float = 8, scales: Sequence[int] = (-3, 0),
                  window=None, meshes: Optional[Iterable[int]] = None,
                  meet_gamma: bool = False, along: Optional[float] = None) -> CubeSet:
    """Shifted dyadic cubes inside ``window`` with C0*diam <= dist(Q, Gamma') <= 2*C0*diam.

    Parameters
    ----------
    sub : SingularSubspace
    c0 : float
        Whitney constant; the band is [C0, 2*C0] times the diameter.
    scales : (jmin, jmax)
        Inclusive range of scales ``j`` (cube side ``2**j``).
    window : (lows, highs)
        Closed bounding box; only cubes inside it are listed.
    meshes : iterable of int, optional
        Restrict to these mesh indices (default: all ``3**n``).
    meet_gamma : bool
        Keep only cubes whose interior meets the hyperplane sum(xi) = 0.
    along : float, optional
        Keep only cubes whose centre projects onto Gamma' with all
        orthonormal coordinates in ``[-along, along]``.  When ``window`` is
        omitted it defaults to the box that can hold such cubes.

    Returns
    -------
    CubeSet
        Sorted by (scale, mesh, offsets).  Band membership is decided in
        floating point with an exact rational recheck near the band edges.
    """
    n = sub.n
    jmin, jmax = int(scales[0]), int(scales[1])
    if window is None:
        if along is None:
            raise EmptyWindow("a bounding window or an along-radius is required")
        big = math.ldexp(1.0, jmax) * math.sqrt(n) * (2 * float(c0) + 1) * 1.01
        half = float(along) * math.sqrt(max(sub.k, 1)) + big
        window = ([-half] * n, [half] * n)
    wlo = np.asarray(window[0], dtype=float).reshape(-1) * np.ones(n)
    whi = np.asarray(window[1], dtype=float).reshape(-1) * np.ones(n)
    if jmax < jmin or np.any(whi <= wlo):
        raise EmptyWindow("empty window or scale range")
    mesh_list = sorted(set(range(3 ** n) if meshes is None else meshes))
    c0f = float(c0)
    out_s, out_m, out_o = [], [], []
    for j in range(jmin, jmax + 1):
        side = math.ldexp(1.0, j)
        diam = side * math.sqrt(n)
        reach = 2 * c0f * diam + diam
        for m in mesh_list:
            shifts = mesh_shifts(n, m)
            t_limit = None
            if along is not None and sub.k == 1:
                t_limit = (float(along) + reach) / float(np.linalg.norm(sub.basis[0]))
            offs = _candidate_offsets(sub, j, shifts, wlo, whi, reach, t_limit)
            if offs.size == 0:
                continue
            sg = np.array([float(_signed(s, j)) for s in shifts])
            lo = side * (offs + sg)
            hi = lo + side
            cdist = sub.distance(lo + side / 2)
            keep = (cdist >= c0f * diam * (1 - _BORDER)) & (cdist <= (2 * c0f + 0.5) * diam * (1 + _BORDER))
            if along is not None and sub.k:
                coords = (lo + side / 2) @ sub.orthonormal
                keep &= np.all(np.abs(coords) <= float(along), axis=1)
            if meet_gamma:
                keep &= (lo.sum(axis=1) < side * 1e-9) & (hi.sum(axis=1) > -side * 1e-9)
            offs, lo, hi = offs[keep], lo[keep], hi[keep]
            if offs.size == 0:
                continue
            d2 = box_distance2(lo, hi, sub)
            low_edge = c0f * c0f * diam * diam
            high_edge = 4 * low_edge
            inside = (d2 >= low_edge) & (d2 <= high_edge)
            near = (np.abs(d2 - low_edge) <= _BORDER * low_edge) | (np.abs(d2 - high_edge) <= _BORDER * high_edge)
            if sub.k <= 1:
                for r in np.nonzero(near)[0]:
                    inside[r] = in_band_exact(ShiftedCube(j, tuple(offs[r]), shifts), sub, c0)
            if meet_gamma:
                on_edge = (np.abs(lo.sum(axis=1)) <= 1e-9 * side) | (np.abs(hi.sum(axis=1)) <= 1e-9 * side)
                inside &= (lo.sum(axis=1) < 0) & (hi.sum(axis=1) > 0) | on_edge
                for r in np.nonzero(on_edge & inside)[0]:
                    inside[r] = ShiftedCube(j, tuple(offs[r]), shifts).meets_gamma()
            out_s.append(np.full(int(inside.sum()), j))
            out_m.append(np.full(int(inside.sum()), m))
            out_o.append(offs[inside])
    if not out_s:
        return CubeSet(n, [], [], np.zeros((0, n)))
    return CubeSet(n, np.concatenate(out_s), np.concatenate(out_m), np.concatenate(out_o))


def coverage_counts(cubes: CubeSet, points, factor: float = 0.9) -> np.ndarray:
    """Number of dilated cubes ``factor*Q`` containing each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    idx, _ = cubes.incidence(pts, factor)
    return np.bincount(idx, minlength=pts.shape[0])


def covered_band(sub: SingularSubspace, c0: float, scales: Sequence[int]) -> tuple[float, float]:
    """Distances to Gamma' at which every needed Whitney scale lies in ``scales``.

    A cube containing a point at distance ``d`` can only be in the band when
    ``d/(2*C0+1) <= diam <= d/C0``; both ends must be available.
    """
    n = sub.n
    dmin = math.ldexp(1.0, int(scales[0])) * math.sqrt(n) * (2 * c0 + 1)
    dmax = math.ldexp(1.0, int(scales[1])) * math.sqrt(n) * c0
    return dmin, dmax
