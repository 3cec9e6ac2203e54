"""Multilinear forms and operators given by multipliers on Gamma.

For band-limited grid functions the form is the finite sum

    Lambda_m(f_1, ..., f_n) = (1/L)**(n-1) * sum_{k_1+...+k_n=0} m(k/L) prod fhat_i(k_i/L)

and the operator ``T_m`` is its dual in the last slot:
``h * sum_j T(x_j) f_n(x_j) = Lambda_m(f_1, ..., f_n)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BandLimitViolated, GridMismatch, NotTensorFactorizable
from .grid import GridFunction, GridSpec

BAND_TOL = 1e-12


def thread_count() -> int:
    """Worker cap from ``TILESCOPE_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("TILESCOPE_THREADS", "1")))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    items = list(items)
    workers = thread_count()
    if workers == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class FormInstance:
    """A symbol, a grid and the band limit ``B`` shared by all inputs."""

    symbol: Callable
    n: int
    grid: GridSpec
    band: int

    def __post_init__(self):
        if self.n * self.band >= self.grid.size // 2:
            raise BandLimitViolated(f"n*B = {self.n * self.band} must be below M/2 = {self.grid.size // 2}")

    @classmethod
    def build(cls, symbol, grid: GridSpec, band: int) -> "FormInstance":
        return cls(symbol, _arity(symbol), grid, band)


def _arity(symbol) -> int:
    n = getattr(symbol, "n", None)
    if n is None:
        n = symbol.symbol.n
    return int(n)


def _coefficients(F: FormInstance, fs: Sequence[GridFunction], count: int) -> list[np.ndarray]:
    """Spectral values at k = -B..B (index k + B) after band and grid checks."""
    if len(fs) != count:
        raise ValueError(f"expected {count} functions, got {len(fs)}")
    B = F.band
    ks = np.arange(-B, B + 1)
    out = []
    for f in fs:
        if f.spec != F.grid:
            raise GridMismatch(f"{f.spec} vs {F.grid}")
        excess = f.band_excess(B)
        if excess > BAND_TOL:
            raise BandLimitViolated(f"spectral mass outside |k| <= {B}: relative {excess:.3g}")
        out.append(f.spectrum[ks % F.grid.size])
    return out


def _axis_ranges(F: FormInstance, count: int, box=None) -> list[np.ndarray]:
    """Integer wavenumbers per axis, optionally restricted to a frequency box."""
    B, L = F.band, F.grid.length
    ranges = []
    for a in range(count):
        lo, hi = -B, B
        if box is not None:
            lo = max(lo, math.ceil(box[0][a] * L))
            hi = min(hi, math.floor(box[1][a] * L))
        ranges.append(np.arange(lo, hi + 1))
    return ranges


def _support_box(symbol):
    box = getattr(symbol, "box", None)
    return box() if callable(box) else None


def _tuple_terms(F: FormInstance, coeffs, ranges, k1: int, last_box=None, kappa_max=None):
    """For fixed k_1: (kappa, value) arrays with kappa = k_1 + ... + k_{n-1}.

    ``value`` is ``m(k_1/L, ..., k_{n-1}/L, -kappa/L) * prod fhat_i(k_i)``.
    """
    n, B, L = F.n, F.band, F.grid.length
    rest = ranges[1:]
    if rest:
        grids = np.meshgrid(*rest, indexing="ij")
        ks = np.stack([np.full(grids[0].size, k1)] + [g.reshape(-1) for g in grids], axis=1)
    else:
        ks = np.array([[k1]])
    kappa = ks.sum(axis=1)
    keep = np.abs(kappa) <= (B if kappa_max is None else kappa_max)
    if last_box is not None:
        keep &= (-kappa >= last_box[0]) & (-kappa <= last_box[1])
    ks, kappa = ks[keep], kappa[keep]
    if ks.shape[0] == 0:
        return kappa, np.zeros(0, dtype=np.complex128)
    prod = np.ones(ks.shape[0], dtype=np.complex128)
    for a in range(n - 1):
        prod = prod * coeffs[a][ks[:, a] + B]
    nz = prod != 0
    ks, kappa, prod = ks[nz], kappa[nz], prod[nz]
    if ks.shape[0] == 0:
        return kappa, prod
    pts = np.concatenate([ks, -kappa[:, None]], axis=1) / L
    return kappa, F.symbol(pts) * prod


def eval_form(F: FormInstance, *fs: GridFunction, method: str = "direct", restrict: bool = True) -> complex:
    """The n-linear form on band-limited inputs.

    Parameters
    ----------
    method : {"direct", "spectral"}
        ``direct`` sums over all admissible frequency tuples (cost
        ``O((2B+1)**(n-1))``).  ``spectral`` computes ``T_m(f_1, ..., f_{n-1})``
        and pairs it with ``f_n`` on the grid.
    restrict : bool
        Restrict the tuple sweep to the symbol's support box when it has one.
    """
    if method == "spectral":
        T = apply_operator(F, *fs[:-1], restrict=restrict)
        if fs[-1].spec != F.grid:
            raise GridMismatch("last argument on a different grid")
        _coefficients(F, fs[-1:], 1)
        return complex(F.grid.spacing * np.sum(T.samples * fs[-1].samples))
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    coeffs = _coefficients(F, fs, F.n)
    L, B = F.grid.length, F.band
    box = _support_box(F.symbol) if restrict else None
    ranges = _axis_ranges(F, F.n - 1, box)
    last_box = None
    if box is not None:
        last_box = (math.ceil(box[0][-1] * L), math.floor(box[1][-1] * L))

    def partial(k1):
        kappa, vals = _tuple_terms(F, coeffs, ranges, int(k1), last_box)
        if vals.size == 0:
            return 0j
        return np.sum(vals * coeffs[-1][-kappa + B])

    partials = np.array(_map_ordered(partial, ranges[0]), dtype=np.complex128)
    return complex(np.sum(partials) / L ** (F.n - 1))


def apply_operator(F: FormInstance, *fs: GridFunction, restrict: bool = True) -> GridFunction:
    """``T_m(f_1, ..., f_{n-1})`` with
    ``That(kappa/L) = (1/L)**(n-2) * sum_{k_1+...+k_{n-1}=kappa} m(k/L, -kappa/L) prod fhat_i(k_i/L)``.
    """
    coeffs = _coefficients(F, fs, F.n - 1)
    L, B, M = F.grid.length, F.band, F.grid.size
    box = _support_box(F.symbol) if restrict else None
    ranges = _axis_ranges(F, F.n - 1, box)
    last_box = None
    if box is not None:
        last_box = (math.ceil(box[0][-1] * L), math.floor(box[1][-1] * L))
    reach = (F.n - 1) * B  # output band
    width = 2 * reach + 1

    def partial(k1):
        kappa, vals = _tuple_terms(F, coeffs, ranges, int(k1), last_box, reach)
        acc = np.zeros(width, dtype=np.complex128)
        if vals.size:
            acc += np.bincount(kappa + reach, weights=vals.real, minlength=width)
            acc += 1j * np.bincount(kappa + reach, weights=vals.imag, minlength=width)
        return acc

    parts = _map_ordered(partial, ranges[0])
    total = np.sum(np.array(parts), axis=0) if parts else np.zeros(width, dtype=np.complex128)
    spectrum = np.zeros(M, dtype=np.complex128)
    spectrum[np.arange(-reach, reach + 1) % M] = total / L ** (F.n - 2)
    return GridFunction.from_spectrum(F.grid, spectrum)


# --------------------------------------------------------------------------
# tensor pieces


class TensorPiece:
    """``c * prod_i phi_i(xi_i)``: a piece in product form.

    Parameters
    ----------
    factors : list of callables
        One-dimensional frequency filters ``phi_i`` (physical frequency in,
        real values out), one per slot.
    constant : complex
    support : (lows, highs), optional
        Frequency box outside which some factor vanishes.
    """

    def __init__(self, factors, constant: complex = 1.0, support=None):
        self.factors_ = list(factors)
        self.n = len(self.factors_)
        self.constant = complex(constant)
        self.support = support

    def factors(self):
        return self.factors_

    def box(self):
        return self.support

    def __call__(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.full(xi.shape[0], self.constant, dtype=np.complex128)
        for a, phi in enumerate(self.factors_):
            out = out * phi(xi[:, a])
        return out


def _lattice_points_on_gamma(F: FormInstance, box) -> np.ndarray:
    """Integer tuples (as physical frequencies) in the box with sum zero and |k_i| <= B."""
    ranges = _axis_ranges(F, F.n - 1, box)
    L = F.grid.length
    if any(r.size == 0 for r in ranges):
        return np.zeros((0, F.n))
    grids = np.meshgrid(*ranges, indexing="ij")
    ks = np.stack([g.reshape(-1) for g in grids], axis=1)
    last = -ks.sum(axis=1)
    lo, hi = math.ceil(box[0][-1] * L), math.floor(box[1][-1] * L)
    keep = (np.abs(last) <= F.band) & (last >= lo) & (last <= hi)
    return np.concatenate([ks[keep], last[keep, None]], axis=1) / L


def apply_piece_fast(F: FormInstance, piece, *fs: GridFunction, strict: bool = False) -> GridFunction:
    """``T`` for a single piece using its product structure.

    Each input is filtered by its factor, the filtered inputs are multiplied
    pointwise and the product is filtered by the last factor at ``-kappa``.
    A Whitney piece ``m * b_Q / sum b`` qualifies when ``m / sum b`` is
    constant on the lattice points of its cube; otherwise the sum runs over
    the cube's lattice points only (or ``NotTensorFactorizable`` is raised
    when ``strict``).
    """
    _coefficients(F, fs, F.n - 1)
    if isinstance(piece, TensorPiece):
        factors, const = piece.factors(), piece.constant
    else:
        box = piece.box()
        try:
            const = piece.tensor_constant(_lattice_points_on_gamma(F, box))
        except NotTensorFactorizable:
            if strict:
                raise
            small = FormInstance(piece, F.n, F.grid, F.band)
            return apply_operator(small, *fs, restrict=True)
        factors = piece.factors()
    freqs = F.grid.frequencies
    prod = np.full(F.grid.size, const, dtype=np.complex128)
    for f, phi in zip(fs, factors[:-1]):
        prod = prod * f.apply_multiplier(phi(freqs)).samples
    out = GridFunction(F.grid, prod)
    return out.apply_multiplier(factors[-1](-freqs))


# --------------------------------------------------------------------------
# principal value quadrature


def bht_pv_quadrature(f1: GridFunction, f2: GridFunction, t_max: Optional[float] = None,
                      band: Optional[int] = None) -> GridFunction:
    """Principal-value sum for ``int f1(x-t) f2(x+t) dt/t`` on the torus.

    Uses the periodic Hilbert kernel ``(pi/L) * cot(pi*t/L)`` at grid shifts
    ``t = h, 2h, ..., t_max`` and pairs ``+t`` with ``-t`` before summing.
    Shifts are whole grid steps, so the shifted samples are exact.  The
    discrete multiplier on a plane-wave pair with ``d = b - a`` is
    ``pi*i*sgn(d)*(1 - 2|d|/M)`` when ``t_max = L/2``.
    """
    if f1.spec != f2.spec:
        raise GridMismatch("inputs on different grids")
    spec = f1.spec
    M, h, L = spec.size, spec.spacing, spec.length
    limit = M // 8 if band is None else band
    for f in (f1, f2):
        if f.band_excess(limit) > BAND_TOL:
            raise BandLimitViolated(f"inputs must be band-limited to |k| <= {limit}")
    t_max = L / 2 if t_max is None else min(float(t_max), L / 2)
    steps = int(round(t_max / h))
    a, b = f1.samples, f2.samples
    acc = np.zeros(M, dtype=np.complex128)
    for r in range(1, steps + 1):
        w = h * (np.pi / L) / np.tan(np.pi * r / M)
        # f1(x - rh) f2(x + rh) - f1(x + rh) f2(x - rh)
        pair = np.roll(a, r) * np.roll(b, -r) - np.roll(a, -r) * np.roll(b, r)
        acc += w * pair
    return GridFunction(spec, acc)


def pv_error_bound(band: int, size: int) -> float:
    """Largest relative multiplier error ``2|d|/M`` for ``|d| <= 2B``."""
    return 4.0 * band / size
