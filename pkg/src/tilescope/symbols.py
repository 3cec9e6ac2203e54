"""Multiplier symbols on the hyperplane sum(xi) = 0 and their Whitney partitions."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import NotTensorFactorizable, UncoveredPoint, UnknownSymbol
from .geometry import CubeSet, ShiftedCube, SingularSubspace

PLATEAU = 0.9


def project_to_gamma(xi) -> np.ndarray:
    """Orthogonal projection onto sum(xi) = 0 (acts on the last axis)."""
    xi = np.asarray(xi, dtype=float)
    return xi - xi.mean(axis=-1, keepdims=True)


def gamma_tangent_basis(n: int) -> np.ndarray:
    """Orthonormal basis (rows) of the hyperplane sum(xi) = 0."""
    m = np.eye(n)[:, : n - 1] - np.eye(n)[:, 1:]
    q, _ = np.linalg.qr(m)
    return q.T


class Symbol:
    """A multiplier on Gamma.

    Parameters
    ----------
    n : int
        Number of frequency variables.
    func : callable
        Maps an array of shape (P, n) of points of Gamma to P complex values.
    singular : SingularSubspace, optional
        Where the symbol may be singular.
    name : str
    sup_bound : float, optional
        Known bound for |m|.
    order : int
        Number of derivatives for which the symbol estimates are claimed.
    degree : float, optional
        Homogeneity degree (``m(t*xi) = t**degree * m(xi)``, ``t > 0``).
    """

    def __init__(self, n: int, func: Callable[[np.ndarray], np.ndarray], singular: Optional[SingularSubspace] = None,
                 name: str = "custom", sup_bound: Optional[float] = None, order: int = 4,
                 degree: Optional[float] = None):
        self.n = n
        self.func = func
        self.singular = singular
        self.name = name
        self.sup_bound = sup_bound
        self.order = order
        self.degree = degree

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        pts = project_to_gamma(np.atleast_2d(xi))
        out = np.asarray(self.func(pts), dtype=np.complex128)
        return out[0] if single else out

    def __repr__(self):
        return f"Symbol({self.name!r}, n={self.n})"

    @classmethod
    def from_table(cls, path, n: int, singular: Optional[SingularSubspace] = None, name: str = "table") -> "Symbol":
        """Lookup-table symbol from CSV rows ``xi_1, ..., xi_{n-1}, re, im``.

        The first ``n-1`` coordinates must form a full rectangular grid; values
        in between are interpolated multilinearly and points outside the grid
        evaluate to 0.
        """
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        if data.shape[1] != n + 1:
            # tolerate a header row
            data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
        coords = data[:, : n - 1]
        axes = [np.unique(coords[:, a]) for a in range(n - 1)]
        shape = tuple(len(a) for a in axes)
        if np.prod(shape) != data.shape[0]:
            raise ValueError("table coordinates do not form a full grid")
        order = np.lexsort(tuple(coords[:, a] for a in reversed(range(n - 1))))
        vals = (data[order, n - 1] + 1j * data[order, n]).reshape(shape)
        interp = RegularGridInterpolator(axes, vals, method="linear", bounds_error=False, fill_value=0.0)
        return cls(n, lambda xi: interp(xi[:, : n - 1]), singular, name=name,
                   sup_bound=float(np.abs(vals).max()), order=1)


def _bht(xi):
    return np.pi * 1j * np.sign(xi[:, 1] - xi[:, 0])


def _tht(xi):
    return np.pi * 1j * np.sign(-xi[:, 0] + xi[:, 1] + 2 * xi[:, 2])


def _smooth0(xi):
    r2 = np.einsum("ij,ij->i", xi, xi)
    num = xi[:, 0] ** 2 - xi[:, 1] ** 2
    out = np.zeros(xi.shape[0])
    nz = r2 > 0
    out[nz] = num[nz] / r2[nz]
    return out


BUILTINS = ("one", "bht", "tht", "smooth0")


def builtin(name: str, n: Optional[int] = None) -> Symbol:
    """Registry of built-in symbols.

    ``one``: the constant 1 (pointwise product), any ``n``.
    ``bht``: ``pi*i*sgn(xi_2 - xi_1)``, ``n = 3``, singular on span{(1,1,-2)}.
    ``tht``: ``pi*i*sgn(-xi_1 + xi_2 + 2*xi_3)``, ``n = 4``, the symbol of
    ``int f1(x-t) f2(x+t) f3(x+2t) dt/t``; singular on a plane.
    ``smooth0``: ``(xi_1**2 - xi_2**2)/|xi|**2``, smooth away from the origin.
    """
    if name == "one":
        n = 3 if n is None else n
        return Symbol(n, lambda xi: np.ones(xi.shape[0]), SingularSubspace([], n=n), "one", 1.0, 8, 0.0)
    if name == "bht":
        if n not in (None, 3):
            raise UnknownSymbol("bht is trilinear (n = 3)")
        return Symbol(3, _bht, SingularSubspace([[1, 1, -2]]), "bht", math.pi, 8, 0.0)
    if name == "tht":
        if n not in (None, 4):
            raise UnknownSymbol("tht is a 4-linear form (n = 4)")
        return Symbol(4, _tht, SingularSubspace([[1, 1, 0, -2], [0, -2, 1, 1]]), "tht", math.pi, 8, 0.0)
    if name == "smooth0":
        n = 3 if n is None else n
        return Symbol(n, _smooth0, SingularSubspace([], n=n), "smooth0", 1.0, 4, 0.0)
    raise UnknownSymbol(f"unknown symbol {name!r}; known: {', '.join(BUILTINS)}")


# --------------------------------------------------------------------------
# finite-difference checks


def _mixed_difference(fn, points: np.ndarray, dirs: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Nested central differences of ``fn`` along the rows of ``dirs``.

    ``step`` is one step length per point.
    """
    a = dirs.shape[0]
    total = np.zeros(points.shape[0], dtype=np.complex128)
    for signs in itertools.product((1.0, -1.0), repeat=a):
        disp = np.asarray(signs) @ dirs if a else np.zeros(points.shape[1])
        total += np.prod(signs) * fn(points + step[:, None] * disp)
    return total / (2 * step) ** a


def _sample_off_subspace(sub: SingularSubspace, dist: float, count: int, rng, spread: float = 4.0) -> np.ndarray:
    """Points of Gamma at distance exactly ``dist`` from Gamma'."""
    n = sub.n
    g = rng.standard_normal((count, n))
    g = project_to_gamma(g)
    g = g - sub.project(g)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    base = np.zeros((count, n))
    if sub.k:
        base = rng.uniform(-spread, spread, (count, sub.k)) @ sub.orthonormal.T
    return base + dist * g


def check_symbol_estimates(m: Symbol, order: int = 2, samples: int = 64, octaves: int = 8,
                           seed: int = 0) -> dict:
    """Scaled finite-difference bounds ``sup |D^a m| * dist(xi, Gamma')**|a|``.

    Points are drawn at distances ``d = 2**o / 16`` (``o = 0 .. octaves-1``);
    derivatives are nested central differences with step ``d/16`` along an
    orthonormal basis of Gamma.  For each order the per-octave sup is
    reported together with a growth flag (last octave above four times the
    first).
    """
    if order > 4:
        raise ValueError("order must be at most 4")
    rng = np.random.default_rng(seed)
    sub = m.singular if m.singular is not None else SingularSubspace([], n=m.n)
    tangent = gamma_tangent_basis(m.n)
    dists = [2.0 ** o / 16 for o in range(octaves)]
    per_order = {a: [] for a in range(order + 1)}
    for d in dists:
        pts = _sample_off_subspace(sub, d, samples, rng)
        step = np.full(samples, d / 16)
        for a in range(order + 1):
            best = 0.0
            for combo in itertools.combinations_with_replacement(range(m.n - 1), a):
                diff = _mixed_difference(m, pts, tangent[list(combo)], step)
                best = max(best, float(np.abs(diff).max()) * d ** a)
            per_order[a].append(best)
    growth = {}
    for a, vals in per_order.items():
        first, last = vals[0], vals[-1]
        growth[a] = bool(last > 4 * first) if first > 1e-12 else bool(last > 1e-9)
    return {
        "symbol": m.name,
        "distances": dists,
        "per_octave": {str(a): v for a, v in per_order.items()},
        "constants": {str(a): max(v) for a, v in per_order.items()},
        "growth": {str(a): g for a, g in growth.items()},
    }


def check_homogeneity(m: Symbol, samples: int = 200, seed: int = 0) -> float:
    """Max |m(t*xi) - t**degree * m(xi)| over random xi and dyadic/random t > 0."""
    if m.degree is None:
        raise ValueError("symbol declares no homogeneity degree")
    rng = np.random.default_rng(seed)
    xi = project_to_gamma(rng.standard_normal((samples, m.n)))
    worst = 0.0
    for t in (0.25, 0.5, 2.0, 8.0, float(rng.uniform(0.1, 10))):
        worst = max(worst, float(np.abs(m(t * xi) - t ** m.degree * m(xi)).max()))
    return worst


# --------------------------------------------------------------------------
# partition of unity over Whitney cubes


def smoothstep(x, order: int = 4) -> np.ndarray:
    """Generalised smoothstep of degree ``2*order+1``: 0 for x<=0, 1 for x>=1,
    ``order`` derivatives vanishing at both ends."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    acc = np.zeros_like(x)
    for k in range(order + 1):
        acc += math.comb(order + k, k) * math.comb(2 * order + 1, order - k) * (-x) ** k
    return x ** (order + 1) * acc


def bump_1d(t, plateau: float = PLATEAU, order: int = 4) -> np.ndarray:
    """Bump on [0, 1] in relative coordinate ``t``: 1 on the centred ``plateau``
    fraction, 0 outside the open unit interval."""
    t = np.asarray(t, dtype=float)
    ramp = (1.0 - plateau) / 2
    up = smoothstep(t / ramp, order)
    down = smoothstep((1.0 - t) / ramp, order)
    out = np.minimum(up, down)
    return np.where((t > 0) & (t < 1), out, 0.0)


@dataclass
class SymbolPiece:
    """``m_Q = m * b_Q / sum_Q' b_Q'`` for one cube of a :class:`Partition`."""

    partition: "Partition"
    row: int
    cube: ShiftedCube = field(init=False)

    def __post_init__(self):
        self.cube = self.partition.cubes.cube(self.row)

    @property
    def symbol(self) -> Symbol:
        return self.partition.symbol

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        pts = project_to_gamma(np.atleast_2d(xi))
        out = self.symbol(pts) * self.partition.weight(pts, self.row)
        return out[0] if single else out

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([float(v) for v in self.cube.lows])
        return lo, lo + float(self.cube.side)

    def factors(self) -> list[Callable[[np.ndarray], np.ndarray]]:
        """One-dimensional bumps whose product is ``b_Q``."""
        lo, hi = self.box()
        side = hi[0] - lo[0]
        p = self.partition
        return [lambda x, a=a: bump_1d((np.asarray(x) - lo[a]) / side, p.plateau, p.order) for a in range(len(lo))]

    def residual(self, xi) -> np.ndarray:
        """``m / sum b`` on the cube, the non-tensor part of the piece."""
        pts = project_to_gamma(np.atleast_2d(np.asarray(xi, dtype=float)))
        total = self.partition.bump_total(pts)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, self.symbol(pts) / np.where(total > 0, total, 1), 0.0)

    def tensor_constant(self, points, rtol: float = 1e-12) -> complex:
        """The residual's value if it is constant on ``points`` (inside the cube).

        Raises
        ------
        NotTensorFactorizable
            If the residual varies over the given points.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size:
            # the residual is irrelevant where this piece's own bump vanishes
            own = np.prod([phi(pts[:, a]) for a, phi in enumerate(self.factors())], axis=0)
            pts = pts[own > 0]
        r = self.residual(pts) if pts.size else np.zeros(0)
        if r.size == 0:
            return 0.0
        c = r[0]
        if np.max(np.abs(r - c)) > rtol * max(1.0, abs(c)):
            raise NotTensorFactorizable(f"residual varies by {np.max(np.abs(r - c)):.3g} on the cube")
        return complex(c)

    def local_constants(self, order: int = 2, samples: int = 64, seed: int = 0) -> dict:
        """``sup |D^a m_Q| * diam(Q)**|a|`` over random points of Q on Gamma."""
        rng = np.random.default_rng(seed)
        lo, hi = self.box()
        side = hi[0] - lo[0]
        diam = side * math.sqrt(len(lo))
        pts = []
        tries = 0
        while len(pts) < samples and tries < 200:
            cand = project_to_gamma(rng.uniform(lo, hi, (4 * samples, len(lo))))
            inside = np.all((cand > lo) & (cand < hi), axis=1)
            pts.extend(cand[inside])
            tries += 1
        if not pts:
            return {str(a): 0.0 for a in range(order + 1)}
        pts = np.array(pts[:samples])
        tangent = gamma_tangent_basis(len(lo))
        step = np.full(len(pts), side / 256)
        out = {}
        for a in range(order + 1):
            best = 0.0
            for combo in itertools.combinations_with_replacement(range(len(lo) - 1), a):
                best = max(best, float(np.abs(_mixed_difference(self, pts, tangent[list(combo)], step)).max()) * diam ** a)
            out[str(a)] = best
        return out


class Partition:
    """Normalised bump partition ``phi_Q = b_Q / sum b`` over a cube collection.

    ``b_Q`` is a tensor product of smoothstep bumps equal to 1 on the
    ``plateau`` dilate of Q and vanishing off Q.  Points are projected to
    Gamma before evaluation.
    """

    def __init__(self, symbol: Symbol, cubes: CubeSet, plateau: float = PLATEAU, order: int = 4):
        self.symbol = symbol
        self.cubes = cubes
        self.plateau = plateau
        self.order = order
        lo, side = cubes.bounds()
        self._lo = lo
        self._side = side

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        for r in range(len(self.cubes)):
            yield SymbolPiece(self, r)

    def piece(self, row: int) -> SymbolPiece:
        return SymbolPiece(self, row)

    def _bumps(self, pts):
        idx, rows = self.cubes.incidence(pts, 1.0)
        rel = (pts[idx] - self._lo[rows]) / self._side[rows, None]
        vals = np.prod(bump_1d(rel, self.plateau, self.order), axis=1)
        return idx, rows, vals

    def bump_total(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        idx, _, vals = self._bumps(pts)
        return np.bincount(idx, weights=vals, minlength=pts.shape[0])

    def weight(self, pts, row: int) -> np.ndarray:
        """``phi_row`` at projected points."""
        pts = np.atleast_2d(pts)
        idx, rows, vals = self._bumps(pts)
        total = np.bincount(idx, weights=vals, minlength=pts.shape[0])
        mine = np.bincount(idx[rows == row], weights=vals[rows == row], minlength=pts.shape[0])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, mine / np.where(total > 0, total, 1), 0.0)

    def weights(self, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sparse ``phi``: arrays (point index, row, value) with nonzero values."""
        pts = project_to_gamma(np.atleast_2d(np.asarray(xi, dtype=float)))
        idx, rows, vals = self._bumps(pts)
        total = np.bincount(idx, weights=vals, minlength=pts.shape[0])
        nz = vals > 0
        return idx[nz], rows[nz], vals[nz] / total[idx[nz]]

    def covered(self, xi) -> np.ndarray:
        pts = project_to_gamma(np.atleast_2d(np.asarray(xi, dtype=float)))
        return self.bump_total(pts) > 0

    def reconstruct(self, xi, strict: bool = False) -> np.ndarray:
        """``sum_Q m_Q`` at the given points."""
        pts = project_to_gamma(np.atleast_2d(np.asarray(xi, dtype=float)))
        idx, rows, phi = self.weights(pts)
        total_phi = np.bincount(idx, weights=phi, minlength=pts.shape[0])
        if strict and np.any(total_phi == 0):
            raise UncoveredPoint(f"{int(np.sum(total_phi == 0))} points not covered")
        return self.symbol(pts) * total_phi


def partition_multiplier(m: Symbol, cubes: CubeSet, plateau: float = PLATEAU, order: int = 4) -> Partition:
    """Pieces ``m_Q`` (lazily, by iteration) of ``m`` over the cube collection."""
    return Partition(m, cubes, plateau, order)
