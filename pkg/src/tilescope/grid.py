"""Sampled functions on a periodic grid.

The real line is modelled by a torus of circumference ``L`` sampled at ``M``
points ``x_j = j*h`` with ``h = L/M``.  Integrals become ``h``-weighted sums
and the Fourier transform follows the convention

    fhat(k/L) = h * sum_j f(x_j) * exp(-2*pi*i*(k/L)*x_j),

so that ``f(x_j) = (1/L) * sum_k fhat(k/L) * exp(2*pi*i*(k/L)*x_j)``.
Spectra are stored in numpy FFT order; :attr:`GridSpec.wavenumbers` gives the
integer ``k`` of every slot.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from scipy.ndimage import maximum_filter1d

from .dyadic import DyadicInterval, Interval, as_fraction
from .errors import GridMismatch, RootAverageExceedsLevel

BINARY_MAGIC = b"TFGF"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sIQd8x")  # 32 bytes


@dataclass(frozen=True)
class GridSpec:
    length: float
    size: int

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("torus length must be positive")
        m = int(self.size)
        if m < 2 or m & (m - 1):
            raise ValueError(f"grid size must be a power of two, got {self.size}")
        object.__setattr__(self, "size", m)
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.size

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.size) * self.spacing

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.fft.fftfreq(self.size, d=1.0 / self.size).astype(np.int64)

    @property
    def frequencies(self) -> np.ndarray:
        return self.wavenumbers / self.length

    def dilate(self, factor: float) -> "GridSpec":
        return GridSpec(self.length * factor, self.size)


class GridFunction:
    """Immutable complex samples with a lazily computed, cached spectrum."""

    __slots__ = ("spec", "_samples", "_spectrum", "_lock")

    def __init__(self, spec: GridSpec, samples):
        arr = np.array(samples, dtype=np.complex128)
        if arr.shape != (spec.size,):
            raise ValueError(f"expected {spec.size} samples, got shape {arr.shape}")
        arr.setflags(write=False)
        self.spec = spec
        self._samples = arr
        self._spectrum: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    # construction -------------------------------------------------------
    @classmethod
    def from_callable(cls, spec: GridSpec, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return cls(spec, fn(spec.points))

    @classmethod
    def from_spectrum(cls, spec: GridSpec, spectrum) -> "GridFunction":
        """Build from spectral values.

        ``spectrum`` is either a length-``M`` array in FFT order or a mapping
        ``{k: fhat(k/L)}``.
        """
        if isinstance(spectrum, dict):
            full = np.zeros(spec.size, dtype=np.complex128)
            for k, v in spectrum.items():
                full[int(k) % spec.size] += v
            spectrum = full
        spectrum = np.asarray(spectrum, dtype=np.complex128)
        out = cls(spec, np.fft.ifft(spectrum) / spec.spacing)
        return out

    @classmethod
    def plane_wave(cls, spec: GridSpec, k: int) -> "GridFunction":
        """``exp(2*pi*i*k*x/L)``, unit modulus."""
        x = spec.points
        return cls(spec, np.exp(2j * np.pi * k * x / spec.length))

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.size))

    @classmethod
    def random_band_limited(cls, spec: GridSpec, band: int, rng: np.random.Generator,
                            real: bool = False) -> "GridFunction":
        """Random trigonometric polynomial with wavenumbers in ``[-band, band]``."""
        coeffs = rng.standard_normal(2 * band + 1) + 1j * rng.standard_normal(2 * band + 1)
        ks = np.arange(-band, band + 1)
        spec_arr = np.zeros(spec.size, dtype=np.complex128)
        spec_arr[ks % spec.size] = coeffs * spec.length / np.sqrt(2 * band + 1)
        f = cls.from_spectrum(spec, spec_arr)
        if real:
            f = cls(spec, f.samples.real)
        return f

    # data ---------------------------------------------------------------
    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            with self._lock:
                if self._spectrum is None:
                    s = np.fft.fft(self._samples) * self.spec.spacing
                    s.setflags(write=False)
                    self._spectrum = s
        return self._spectrum

    def inverse(self) -> np.ndarray:
        """Samples recomputed from the cached spectrum (round-trip check)."""
        return np.fft.ifft(self.spectrum) / self.spec.spacing

    def coefficient(self, k: int) -> complex:
        return complex(self.spectrum[int(k) % self.spec.size])

    def band_excess(self, band: int) -> float:
        """Largest |fhat| outside ``|k| <= band`` relative to the largest |fhat| overall."""
        s = np.abs(self.spectrum)
        top = s.max()
        if top == 0.0:
            return 0.0
        outside = np.abs(self.spec.wavenumbers) > band
        if not outside.any():
            return 0.0
        return float(s[outside].max() / top)

    # algebra ------------------------------------------------------------
    def _check(self, other: "GridFunction"):
        if other.spec != self.spec:
            raise GridMismatch(f"{self.spec} vs {other.spec}")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.spec, self._samples + other._samples)
        return GridFunction(self.spec, self._samples + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.spec, self._samples - other._samples)
        return GridFunction(self.spec, self._samples - other)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.spec, self._samples * other._samples)
        return GridFunction(self.spec, self._samples * other)

    __rmul__ = __mul__

    def roll(self, steps: int) -> "GridFunction":
        """Translate by ``steps`` grid cells: result(x) = f(x - steps*h)."""
        return GridFunction(self.spec, np.roll(self._samples, steps))

    def apply_multiplier(self, multiplier: np.ndarray) -> "GridFunction":
        """Fourier multiplier given as values on :attr:`GridSpec.wavenumbers`."""
        return GridFunction.from_spectrum(self.spec, self.spectrum * multiplier)

    def modulate(self, k: int) -> "GridFunction":
        return self * GridFunction.plane_wave(self.spec, k)

    def l1(self) -> float:
        return float(self.spec.spacing * np.abs(self._samples).sum())

    def l2(self) -> float:
        return float(np.sqrt(self.spec.spacing * (np.abs(self._samples) ** 2).sum()))

    def sup(self) -> float:
        return float(np.abs(self._samples).max())

    def __repr__(self):
        return f"GridFunction(L={self.spec.length}, M={self.spec.size})"


@dataclass(frozen=True)
class CutoffWeight:
    """``(1 + dist(x, I)/|I|)**(-exponent)`` with wrapped distance on the torus."""

    interval: Union[Interval, DyadicInterval]
    exponent: float

    def distance(self, x: np.ndarray, period: Optional[float] = None) -> np.ndarray:
        c = float(self.interval.center)
        r = float(self.interval.length) / 2
        y = np.asarray(x, dtype=float) - c
        if period is not None:
            if 2 * r >= period:
                return np.zeros_like(y)
            y = (y + period / 2) % period - period / 2
        return np.maximum(np.abs(y) - r, 0.0)

    def __call__(self, x, period: Optional[float] = None) -> np.ndarray:
        d = self.distance(x, period)
        return (1.0 + d / float(self.interval.length)) ** (-float(self.exponent))

    def on_grid(self, spec: GridSpec) -> np.ndarray:
        return self(spec.points, period=spec.length)


def weighted_l1(f: GridFunction, w: CutoffWeight) -> float:
    """``h * sum |f(x_j)| w(x_j)``."""
    return float(f.spec.spacing * np.sum(np.abs(f.samples) * w.on_grid(f.spec)))


def weighted_l2(f: GridFunction, w: CutoffWeight) -> float:
    """``(h * sum |f(x_j) w(x_j)|**2)**(1/2)``."""
    v = np.abs(f.samples) * w.on_grid(f.spec)
    return float(np.sqrt(f.spec.spacing * np.sum(v * v)))


# --------------------------------------------------------------------------
# maximal functions


def _window_ending_max(values: np.ndarray, width: int) -> np.ndarray:
    """out[j] = max(values[j-width+1 .. j]) cyclically."""
    centered = maximum_filter1d(values, size=width, mode="wrap")
    return np.roll(centered, width - 1 - width // 2)


def hl_maximal(f: GridFunction) -> GridFunction:
    """Uncentered Hardy-Littlewood maximal function over grid-aligned intervals.

    Exact: every cyclic window of consecutive samples is considered, so the
    cost is O(M**2).  A window of ``l`` samples has length ``l*h`` and the
    average of |f| over it is the plain mean of the samples.
    """
    a = np.abs(f.samples)
    m = a.size
    best = a.copy()
    sums = a.copy()
    for width in range(2, m + 1):
        sums = sums + np.roll(a, -(width - 1))  # sums[s] = a[s] + ... + a[s+width-1]
        np.maximum(best, _window_ending_max(sums / width, width), out=best)
    return GridFunction(f.spec, best)


class MaximalEstimate(NamedTuple):
    values: GridFunction
    approximate: bool
    undershoot_bound: float


def dyadic_maximal(f: GridFunction) -> MaximalEstimate:
    """Fast O(M log M) maximal function restricted to power-of-two window lengths.

    Approximate: any window of ``l`` samples sits inside a window of
    ``2**ceil(log2 l) < 2*l`` samples, so the result undershoots
    :func:`hl_maximal` by at most a factor 2.
    """
    a = np.abs(f.samples)
    m = a.size
    csum = np.concatenate([[0.0], np.cumsum(np.concatenate([a, a]))])
    best = a.copy()
    width = 2
    while width <= m:
        sums = csum[np.arange(m) + width] - csum[np.arange(m)]
        np.maximum(best, _window_ending_max(sums / width, width), out=best)
        width *= 2
    return MaximalEstimate(GridFunction(f.spec, best), True, 2.0)


# --------------------------------------------------------------------------
# Calderon-Zygmund decomposition


@dataclass
class CZResult:
    good: GridFunction
    bad: list  # list of (Interval, GridFunction)
    level: float
    blocks: list = field(default_factory=list)  # (start index, number of samples)
    bound_constant: float = 1.0  # sum |I| <= bound_constant * ||f||_1 / level

    def reconstruct(self) -> np.ndarray:
        total = self.good.samples.copy()
        for _, b in self.bad:
            total = total + b.samples
        return total

    @property
    def total_length(self) -> float:
        return float(sum(iv.length for iv, _ in self.bad))


def cz_decompose(f: GridFunction, level: float) -> CZResult:
    """Dyadic stopping-time decomposition of ``f`` at height ``level``.

    Selects the maximal dyadic sample blocks (dyadic tree rooted at the whole
    torus) on which the mean of |f| exceeds ``level``; ``good`` equals the
    block mean of ``f`` on selected blocks and ``f`` elsewhere.
    """
    if level <= 0:
        raise ValueError("level must be positive")
    a = np.abs(f.samples)
    m = a.size
    if a.mean() > level:
        raise RootAverageExceedsLevel(f"root average {a.mean():.6g} > level {level:.6g}")
    spec = f.spec
    h = spec.spacing
    good = f.samples.copy()
    active = np.ones(m, dtype=bool)
    blocks = []
    size = m // 2
    while size >= 1:
        means = a.reshape(-1, size).mean(axis=1)
        act = active.reshape(-1, size).all(axis=1)
        chosen = np.nonzero(act & (means > level))[0]
        for b in chosen:
            blocks.append((int(b * size), size))
            active[b * size:(b + 1) * size] = False
        size //= 2
    blocks.sort()
    bad = []
    hf = as_fraction(h)
    for start, size in blocks:
        sl = slice(start, start + size)
        avg = f.samples[sl].mean()
        good[sl] = avg
        b = np.zeros(m, dtype=np.complex128)
        b[sl] = f.samples[sl] - avg
        bad.append((Interval(start * hf, (start + size) * hf), GridFunction(spec, b)))
    return CZResult(GridFunction(spec, good), bad, float(level), blocks)


# --------------------------------------------------------------------------
# I/O


def write_csv(f: GridFunction, path) -> None:
    with open(path, "w") as fh:
        fh.write("index,re,im\n")
        for j, v in enumerate(f.samples):
            fh.write(f"{j},{float(v.real)!r},{float(v.imag)!r}\n")


def read_csv(path, length: float = 1.0) -> GridFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    spec = GridSpec(length, data.shape[0])
    return GridFunction(spec, data[:, 1] + 1j * data[:, 2])


def write_binary(f: GridFunction, path) -> None:
    header = _HEADER.pack(BINARY_MAGIC, BINARY_VERSION, f.spec.size, f.spec.length)
    Path(path).write_bytes(header + f.samples.astype("<c16").tobytes())


def read_binary(path) -> GridFunction:
    raw = Path(path).read_bytes()
    magic, version, m, length = _HEADER.unpack_from(raw, 0)
    if magic != BINARY_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise ValueError(f"unsupported version {version}")
    body = np.frombuffer(raw, dtype="<c16", count=m, offset=_HEADER.size)
    return GridFunction(GridSpec(length, m), body)


def interval_mask(spec: GridSpec, intervals) -> np.ndarray:
    """Boolean mask of grid points lying in a union of (left, right) intervals, wrapped."""
    x = spec.points
    mask = np.zeros(spec.size, dtype=bool)
    for lo, hi in intervals:
        lo, hi = float(lo), float(hi)
        width = hi - lo
        y = (x - lo) % spec.length
        mask |= y < width - 1e-12 * spec.length
    return mask
