"""Exponent arithmetic, exceptional sets, restricted weak-type sweeps and the
model-sum pipeline, plus the report type shared by the command line tools."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .dyadic import DyadicInterval, Interval, as_fraction
from .errors import EmptySet, NoMajorizingC, RegionViolation
from .forms import FormInstance, apply_operator
from .geometry import SingularSubspace
from .grid import CutoffWeight, GridFunction, GridSpec, hl_maximal, interval_mask
from .symbols import builtin

# --------------------------------------------------------------------------
# exponent tuples


@dataclass(frozen=True)
class ExponentTuple:
    """``alpha_i = 1/p_i`` as exact rationals."""

    alphas: tuple

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(as_fraction(a) for a in self.alphas))

    @classmethod
    def parse(cls, text) -> "ExponentTuple":
        """From ``"1/2,1/2,0"`` or a sequence of numbers/strings."""
        if isinstance(text, str):
            text = [t for t in text.replace(" ", "").split(",") if t]
        return cls(tuple(Fraction(str(t)) if not isinstance(t, Fraction) else t for t in text))

    @property
    def n(self) -> int:
        return len(self.alphas)

    def __iter__(self):
        return iter(self.alphas)

    def admissible(self) -> bool:
        a = self.alphas
        return all(x < 1 for x in a) and sum(a) == 1 and sum(1 for x in a if x < 0) <= 1

    def bad_index(self) -> Optional[int]:
        """0-based index of the negative entry, if any."""
        neg = [i for i, x in enumerate(self.alphas) if x < 0]
        return neg[0] if len(neg) == 1 else None

    def __str__(self):
        return ",".join(str(a) for a in self.alphas)


def tuple_classify(alpha: ExponentTuple) -> str:
    """``"good"``, ``"bad(j)"`` (1-based ``j``) or ``"inadmissible"``."""
    if not alpha.admissible():
        return "inadmissible"
    j = alpha.bad_index()
    return "good" if j is None else f"bad({j + 1})"


def _region_bound(n: int, k: int, r: int) -> Fraction:
    return Fraction(n - 2 * k + r, 2)


def region_q_member(alpha: ExponentTuple, n: Optional[int] = None, k: int = 1) -> bool:
    """Every r-subset sum is below ``(n - 2k + r)/2``; checked on sorted prefix sums."""
    n = alpha.n if n is None else n
    s = Fraction(0)
    for r, x in enumerate(sorted(alpha.alphas, reverse=True), start=1):
        s += x
        if not s < _region_bound(n, k, r):
            return False
    return True


def region_q_member_bruteforce(alpha: ExponentTuple, n: Optional[int] = None, k: int = 1) -> bool:
    n = alpha.n if n is None else n
    a = alpha.alphas
    for r in range(1, len(a) + 1):
        for sub in itertools.combinations(a, r):
            if not sum(sub, Fraction(0)) < _region_bound(n, k, r):
                return False
    return True


def hull_member(x: Sequence, a: Sequence) -> bool:
    """Is ``x`` in the convex hull of all permutations of ``a``?  (prefix-sum test)"""
    x = sorted((as_fraction(v) for v in x), reverse=True)
    a = sorted((as_fraction(v) for v in a), reverse=True)
    if len(x) != len(a) or sum(x) != sum(a):
        return False
    sx = sa = Fraction(0)
    for u, v in zip(x, a):
        sx += u
        sa += v
        if sx > sa:
            return False
    return True


def hull_member_lp(x: Sequence, a: Sequence, tol: float = 1e-9) -> bool:
    """Feasibility of ``x`` as a convex combination of the permuted vertices."""
    from scipy.optimize import linprog

    a = [float(v) for v in a]
    x = np.array([float(v) for v in x])
    verts = np.array(sorted(set(itertools.permutations(a))))
    A = np.vstack([verts.T, np.ones(len(verts))])
    b = np.concatenate([x, [1.0]])
    res = linprog(np.zeros(len(verts)), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    return bool(res.status == 0 and np.allclose(A @ res.x, b, atol=tol))


def theta_from_alpha(alpha: ExponentTuple, k: int = 1, bad: Optional[int] = None) -> list:
    """``theta_i = 2 alpha_i - 1`` except at the bad slot, which closes ``sum = n - 2k``."""
    n = alpha.n
    bad = (alpha.bad_index() if alpha.bad_index() is not None else n - 1) if bad is None else bad
    th = [2 * a - 1 for a in alpha.alphas]
    th[bad] = Fraction(n - 2 * k) - sum(t for i, t in enumerate(th) if i != bad)
    return th


# --------------------------------------------------------------------------
# exceptional sets and averages


def set_measure(spec: GridSpec, mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask) * spec.spacing)


def build_exceptional_set(spec: GridSpec, masks: Sequence[np.ndarray], bad: Optional[int] = None,
                          search=tuple(2 ** p for p in range(1, 11))) -> tuple[np.ndarray, float]:
    """Major subset ``E'`` of ``E_bad`` avoiding large maximal averages.

    ``E' = {x in E_bad : M chi_{E_i}(x) < C |E_i| / |E_bad| for all i}`` with
    the smallest ``C`` in ``search`` for which ``|E_bad \\ E'| <= |E_bad|/2``.
    """
    bad = len(masks) - 1 if bad is None else bad
    target = np.asarray(masks[bad], dtype=bool)
    size_bad = np.count_nonzero(target)
    if size_bad == 0:
        raise EmptySet("the set to be refined is empty")
    maxes = [hl_maximal(GridFunction(spec, np.asarray(m, dtype=float))).samples.real for m in masks]
    meas = [set_measure(spec, m) for m in masks]
    meas_bad = meas[bad]
    for C in search:
        keep = target.copy()
        for mx, e in zip(maxes, meas):
            keep &= mx < C * e / meas_bad
        if 2 * (size_bad - np.count_nonzero(keep)) <= size_bad:
            return keep, float(C)
    raise NoMajorizingC(f"no C in {list(search)} leaves a major subset")


def lambda_avg(I, mask: np.ndarray, spec: GridSpec, N: float) -> float:
    """``(1/(|I| |E'|)) * integral over E' of chi_I**N``."""
    count = np.count_nonzero(mask)
    if count == 0:
        raise EmptySet("lambda average over an empty set")
    w = CutoffWeight(I, N).on_grid(spec)
    return float(np.sum(w[mask]) / (float(I.length) * count))


def dyadic_intervals(window, scales) -> list[DyadicInterval]:
    lo, hi = as_fraction(window[0]), as_fraction(window[1])
    out = []
    for s in range(scales[0], scales[1] + 1):
        length = Fraction(2) ** s
        for k in range(math.ceil(lo / length), math.floor(hi / length)):
            out.append(DyadicInterval(s, k))
    return out


def decay_check(masks: Sequence[np.ndarray], spec: GridSpec, N: float, window=None, scales=(-3, 3),
                bad: Optional[int] = None) -> dict:
    """Max over dyadic ``I`` of ``lambda_bad(I) * (1 + sum_{i != bad} lambda_i(I))**(N-1)``."""
    bad = len(masks) - 1 if bad is None else bad
    window = (0, spec.length) if window is None else window
    best, arg = 0.0, None
    for I in dyadic_intervals(window, scales):
        lam = [lambda_avg(I, m, spec, N) for m in masks]
        v = lam[bad] * (1 + sum(x for i, x in enumerate(lam) if i != bad)) ** (N - 1)
        if v > best:
            best, arg = v, I
    return {"N": N, "constant": best, "worst_interval": None if arg is None else arg.to_json()}


# --------------------------------------------------------------------------
# configs and reports


@dataclass
class ExperimentConfig:
    """Parameters for the weak-type sweeps and the model-sum pipeline.

    ``sets`` lists, for every slot, intervals ``[lo, hi)`` measured in
    ``unit``; octave ``s`` of a sweep multiplies all of them by ``2**s``.
    """

    symbol: str = "bht"
    n: int = 3
    k: int = 1
    length: float = 64.0
    size: int = 4096
    band: Optional[int] = None
    alpha: str = "1/2,1/2,0"
    sets: list = field(default_factory=lambda: [[[1, 2]], [[1.5, 3]], [[0, 4]]])
    unit: float = 0.25
    octaves: int = 5
    trials: int = 20
    seed: int = 0
    N: int = 10
    c0: float = 8
    c: float = 16
    c1: int = 2
    tile_scales: tuple = (-3, 0)
    spatial: tuple = (0, 8)
    force: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.tile_scales = tuple(cfg.tile_scales)
        cfg.spatial = tuple(cfg.spatial)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tile_scales"] = list(self.tile_scales)
        d["spatial"] = list(self.spatial)
        return d

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.length, self.size)

    @property
    def exponent(self) -> ExponentTuple:
        return ExponentTuple.parse(self.alpha)

    def band_limit(self) -> int:
        return self.band if self.band is not None else self.size // (2 * self.n) - 1

    def scaled_masks(self, octave: int = 0, offset: float = 0.0) -> list[np.ndarray]:
        f = self.unit * 2.0 ** octave
        return [interval_mask(self.spec, [(lo * f + offset, hi * f + offset) for lo, hi in ivs]) for ivs in self.sets]


@dataclass
class ExperimentReport:
    name: str
    config: dict
    constants: dict = field(default_factory=dict)
    series: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    runtimes: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.flags.values())

    def to_json(self) -> dict:
        return {"name": self.name, "config": self.config, "constants": self.constants, "series": self.series,
                "flags": {k: bool(v) for k, v in self.flags.items()}, "passed": self.passed, "runtimes": self.runtimes, "seed": self.seed}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, default=_json_default)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale_octave", "ratio", "bucket"])
            for row in self.series:
                w.writerow([row.get("scale_octave", ""), row.get("ratio", ""), row.get("bucket", "")])


def _json_default(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def trend(values: Sequence[float]) -> float:
    """``last/first`` of a positive series (``inf`` when the first entry is 0)."""
    values = list(values)
    if not values:
        return 1.0
    if values[0] == 0:
        return 1.0 if values[-1] == 0 else math.inf
    return values[-1] / values[0]


# --------------------------------------------------------------------------
# weak-type experiments


def _components(mask: np.ndarray) -> np.ndarray:
    """Label of the maximal run (wrapped) each grid point belongs to; -1 off the set."""
    labels = np.full(mask.size, -1)
    if not mask.any():
        return labels
    if mask.all():
        labels[:] = 0
        return labels
    start = int(np.argmin(mask))  # a point outside the set
    order = (np.arange(mask.size) + start) % mask.size
    m = mask[order]
    run = np.cumsum(m & ~np.roll(m, 1)) - 1
    labels[order[m]] = run[m]
    return labels


def band_project(f: GridFunction, band: int) -> GridFunction:
    k = f.spec.wavenumbers
    return f.apply_multiplier((np.abs(k) <= band).astype(float))


def unimodular_draw(spec: GridSpec, mask: np.ndarray, band: int, rng: np.random.Generator) -> GridFunction:
    """Band-limited projection of a unimodular function on ``mask``.

    The phase is constant on each run of the set and carries a random
    modulation of at most ``band/8`` wavenumbers.
    """
    labels = _components(mask)
    count = int(labels.max()) + 1 if mask.any() else 0
    phases = np.exp(2j * np.pi * rng.uniform(size=max(count, 1)))
    nu = int(rng.integers(-(band // 8), band // 8 + 1))
    carrier = np.exp(2j * np.pi * nu * spec.points / spec.length)
    vals = np.where(mask, phases[np.maximum(labels, 0)], 0) * carrier
    return band_project(GridFunction(spec, vals), band)


def dual_form(F: FormInstance, fs: Sequence[GridFunction], mask: np.ndarray) -> tuple[float, GridFunction]:
    """``sup |Lambda(f_1, .., f_{n-1}, P_B G)|`` over ``|G| <= 1`` on ``mask`` and the maximiser's projection.

    ``Lambda(.., P_B G) = integral of P_B T(..) * G``, so the supremum is
    ``h * sum over mask of |P_B T|``.
    """
    T = band_project(apply_operator(F, *fs), F.band)
    vals = T.samples
    g = np.where(mask, np.conj(np.exp(1j * np.angle(vals))), 0)
    value = float(F.grid.spacing * np.sum(np.abs(vals[mask])))
    return value, band_project(GridFunction(F.grid, g), F.band)


def rwt_experiment(config: ExperimentConfig, offset: float = 0.0) -> ExperimentReport:
    """Ratios ``|Lambda(F)| / |E|**alpha`` over a dyadic rescaling sweep of the sets.

    Slots before the last get random unimodular draws; the last slot is the
    exact dual maximiser over ``X(E'_n)`` (see :func:`dual_form`).

    Raises
    ------
    RegionViolation
        If ``alpha`` is outside the admissible region and ``force`` is off.
    """
    t0 = time.perf_counter()
    alpha = config.exponent
    spec = config.spec
    n = config.n
    inside = alpha.admissible() and region_q_member(alpha, n, config.k)
    if not inside and not config.force:
        raise RegionViolation(f"alpha = ({alpha}) lies outside the admissible region for n={n}, k={config.k}")
    symbol = builtin(config.symbol, n)
    band = config.band_limit()
    F = FormInstance.build(symbol, spec, band)
    bad = alpha.bad_index()
    report = ExperimentReport("rwt-sweep", config.to_dict(), seed=config.seed)
    per_octave = []
    c_used = []
    for s in range(config.octaves):
        masks = config.scaled_masks(s, offset)
        meas = [set_measure(spec, m) for m in masks]
        primed = list(masks)
        if bad is not None:
            primed[bad], C = build_exceptional_set(spec, masks, bad)
            c_used.append(C)
        size = math.prod(e ** float(a) for e, a in zip(meas, alpha.alphas))
        rng = np.random.default_rng([config.seed, s])
        best = 0.0
        for _ in range(config.trials):
            fs = [unimodular_draw(spec, primed[i], band, rng) for i in range(n - 1)]
            value, _ = dual_form(F, fs, primed[n - 1])
            best = max(best, value)
        ratio = best / size
        per_octave.append(ratio)
        report.series.append({"scale_octave": s, "ratio": ratio, "bucket": ""})
    report.constants = {"max_ratio": max(per_octave), "trend": trend(per_octave), "region_member": inside,
                        "classification": tuple_classify(alpha), "exceptional_C": c_used, "band": band}
    report.flags = {"trend_flat": trend(per_octave) <= 2.0}
    if not inside:
        report.flags["region_member"] = False
    report.runtimes = {"total": time.perf_counter() - t0}
    return report


# --------------------------------------------------------------------------
# discretised pipeline


def normalized_inputs(config: ExperimentConfig, octave: int = 0, rng=None) -> tuple[list, list, list]:
    """``f_i = F_i chi_{E'_i} / |E'_i|**(1/2)`` (band-limited), the primed masks and ``a_i = |E_i|**(1/2)``."""
    spec = config.spec
    alpha = config.exponent
    bad = alpha.bad_index()
    masks = config.scaled_masks(octave)
    primed = list(masks)
    if bad is not None:
        primed[bad], _ = build_exceptional_set(spec, masks, bad)
    rng = np.random.default_rng([config.seed, octave]) if rng is None else rng
    band = spec.size // 2 - 1
    fs = []
    for m in primed:
        e = set_measure(spec, m)
        fs.append(GridFunction(spec, unimodular_draw(spec, m, band, rng).samples / math.sqrt(e)))
    a = [math.sqrt(set_measure(spec, m)) for m in masks]
    return fs, primed, a


def discretized_pipeline(config: ExperimentConfig, octave: int = 0, fs=None) -> ExperimentReport:
    """Model sums bucketed by dyadic ``lambda_i(I)`` against the discretised bound.

    For each bucket ``b`` (``lambda_i in [2**b_i, 2**(b_i+1))``) the right side is
    ``A**(n-2k-sum theta) min(1, |I_0|) prod (lam_i a_i)**theta_i (1 + lam_i)``
    with ``lam_i = 2**(b_i+1)`` and ``A`` the largest tile norm.
    """
    from .tilekit import enumerate_multitiles, norm_matrix

    t0 = time.perf_counter()
    spec = config.spec
    n, k = config.n, config.k
    alpha = config.exponent
    theta = [float(t) for t in theta_from_alpha(alpha, k)]
    if k not in (0, 1):
        import warnings

        warnings.warn("the pipeline is validated for k in {0, 1} only", stacklevel=2)
    report = ExperimentReport("pipeline", config.to_dict(), seed=config.seed)
    sym = builtin(config.symbol, n)
    sub = sym.singular if sym.singular is not None else SingularSubspace([], n=n)
    coll = enumerate_multitiles(sub, config.c0, config.tile_scales, config.spatial)
    if fs is None:
        fs, primed, a = normalized_inputs(config, octave)
    else:
        primed = config.scaled_masks(octave)
        a = [math.sqrt(set_measure(spec, m)) for m in primed]
    t1 = time.perf_counter()
    norms = norm_matrix(coll, fs, config.N)
    lengths = np.array([float(P.I.length) for P in coll])
    terms = lengths * np.prod(norms, axis=1)
    A = float(norms.max()) if norms.size else 0.0
    I0 = float(as_fraction(config.spatial[1]) - as_fraction(config.spatial[0]))
    lam_cache: dict = {}
    buckets: dict = {}
    for r, P in enumerate(coll):
        lam = lam_cache.get(P.I)
        if lam is None:
            lam = [lambda_avg(P.I, m, spec, config.N) if m.any() else 0.0 for m in primed]
            lam_cache[P.I] = lam
        key = tuple(int(math.floor(math.log2(x))) if x > 0 else -1074 for x in lam)
        buckets[key] = buckets.get(key, 0.0) + terms[r]
    expo = n - 2 * k - sum(theta)
    worst = 0.0
    for key, lhs in sorted(buckets.items()):
        rhs = (A ** expo if A > 0 else float(expo == 0)) * min(1.0, I0)
        for b, ai, th in zip(key, a, theta):
            lam = 2.0 ** (b + 1)
            rhs *= (lam * ai) ** th * (1 + lam)
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        worst = max(worst, ratio)
        report.series.append({"scale_octave": octave, "ratio": ratio, "bucket": "/".join(map(str, key))})
    total = float(np.sum(terms))
    bound = math.prod(x ** th for x, th in zip(a, theta))
    report.constants = {"multitiles": len(coll), "buckets": len(buckets), "A": A, "theta": theta,
                        "model_sum": total, "bucket_sum": float(sum(buckets.values())),
                        "max_bucket_ratio": worst, "total_ratio": total / bound if bound > 0 else 0.0}
    report.flags = {"finite": math.isfinite(worst) and math.isfinite(report.constants["total_ratio"])}
    report.runtimes = {"norms": time.perf_counter() - t1, "total": time.perf_counter() - t0}
    return report


# --------------------------------------------------------------------------
# check suites behind the command line


def forms_checks(size: int = 4096, length: float = 1.0, seed: int = 0, product_trials: int = 50,
                 product_band: int = 64, pairs: int = 20, pv_band: int = 8, pv_sizes=None,
                 duality_trials: int = 50, duality_band: int = 16) -> ExperimentReport:
    """Pointwise product recovery, BHT on plane waves, spectral vs principal
    value evaluation (with its convergence in ``h``) and the duality identity."""
    from .forms import bht_pv_quadrature, eval_form

    rng = np.random.default_rng(seed)
    spec = GridSpec(length, size)
    report = ExperimentReport("bht-check", {"size": size, "length": length, "seed": seed}, seed=seed)

    t0 = time.perf_counter()
    F1 = FormInstance.build(builtin("one", 3), spec, product_band)
    worst = 0.0
    for _ in range(product_trials):
        f1 = GridFunction.random_band_limited(spec, product_band, rng)
        f2 = GridFunction.random_band_limited(spec, product_band, rng)
        prod = f1 * f2
        worst = max(worst, (apply_operator(F1, f1, f2) - prod).sup() / prod.sup())
    report.constants["product_rel_error"] = worst
    report.runtimes["product"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    bht = builtin("bht")
    band = 32
    Fb = FormInstance.build(bht, spec, band)
    ab = [(0, 0), (3, 3), (-5, -5)] + [tuple(int(v) for v in rng.integers(-band, band + 1, 2)) for _ in range(pairs - 3)]
    worst = 0.0
    for a, b in ab:
        out = apply_operator(Fb, GridFunction.plane_wave(spec, a), GridFunction.plane_wave(spec, b))
        want = np.pi * 1j * np.sign(b - a) * GridFunction.plane_wave(spec, a + b).samples
        worst = max(worst, float(np.max(np.abs(out.samples - want))))
    report.constants["plane_wave_error"] = worst
    report.runtimes["plane_waves"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    Fp = FormInstance.build(bht, spec, pv_band)
    worst = 0.0
    for _ in range(pairs):
        f1 = GridFunction.random_band_limited(spec, pv_band, rng)
        f2 = GridFunction.random_band_limited(spec, pv_band, rng)
        spectral = apply_operator(Fp, f1, f2)
        pv = bht_pv_quadrature(f1, f2, t_max=length / 2, band=pv_band)
        worst = max(worst, (pv - spectral).l2() / spectral.l2())
    report.constants["pv_rel_discrepancy"] = worst
    if pv_sizes is None:
        # four doublings starting at the first admissible power of two
        start = max(1024, 1 << int(math.ceil(math.log2(6 * pv_band + 1))))
        pv_sizes = [start << r for r in range(4)]
    conv = []
    g1 = GridFunction.random_band_limited(GridSpec(length, pv_sizes[0]), pv_band, rng)
    g2 = GridFunction.random_band_limited(GridSpec(length, pv_sizes[0]), pv_band, rng)
    for M in pv_sizes:
        sp = GridSpec(length, M)
        h1 = GridFunction.from_spectrum(sp, _resample_spectrum(g1, M))
        h2 = GridFunction.from_spectrum(sp, _resample_spectrum(g2, M))
        spectral = apply_operator(FormInstance.build(bht, sp, pv_band), h1, h2)
        pv = bht_pv_quadrature(h1, h2, t_max=length / 2, band=pv_band)
        conv.append((pv - spectral).l2() / spectral.l2())
    factors = [conv[r] / conv[r + 1] for r in range(len(conv) - 1)]
    report.constants["pv_convergence"] = conv
    report.constants["pv_halving_factors"] = factors
    for M, e in zip(pv_sizes, conv):
        report.series.append({"scale_octave": int(round(math.log2(M))), "ratio": e, "bucket": "pv"})
    report.runtimes["pv"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    Fd = FormInstance.build(bht, spec, duality_band)
    worst = 0.0
    for _ in range(duality_trials):
        fs = [GridFunction.random_band_limited(spec, duality_band, rng) for _ in range(3)]
        lam = eval_form(Fd, *fs)
        dual = spec.spacing * np.sum(apply_operator(Fd, fs[0], fs[1]).samples * fs[2].samples)
        worst = max(worst, abs(lam - dual) / abs(lam))
    report.constants["duality_rel_error"] = worst
    report.runtimes["duality"] = time.perf_counter() - t0

    report.constants["max_rel_err_spectral_vs_pv"] = report.constants["pv_rel_discrepancy"]
    report.constants["duality_err"] = report.constants["duality_rel_error"]
    report.constants["runtime_ms"] = 1000.0 * sum(report.runtimes.values())
    report.flags = {
        "product": report.constants["product_rel_error"] <= 1e-10,
        "plane_waves": report.constants["plane_wave_error"] <= 1e-10,
        "pv_discrepancy": report.constants["pv_rel_discrepancy"] <= 1e-2,
        # the discrepancy halves exactly per doubling of M; allow round-off only
        "pv_convergence": all(f >= 2.0 * (1 - 1e-9) for f in factors),
        "duality": report.constants["duality_rel_error"] <= 1e-10,
    }
    return report


def _resample_spectrum(f: GridFunction, size: int) -> np.ndarray:
    """Spectrum of the same trigonometric polynomial on a grid of ``size`` points."""
    M = f.spec.size
    k = f.spec.wavenumbers
    out = np.zeros(size, dtype=np.complex128)
    keep = np.abs(k) < M // 2
    out[k[keep] % size] = f.spectrum[keep]
    return out


def whitney_checks(covers: int = 10_000, seed: int = 0, c0: float = 8, scales=(-4, -1), window: float = 3.0,
                   points: int = 1000) -> ExperimentReport:
    """Covering cubes, exact Whitney distance bands and partition reconstruction for BHT."""
    from .geometry import box_inside, covering_cube, in_band_exact, whitney_cubes
    from .symbols import partition_multiplier

    rng = np.random.default_rng(seed)
    report = ExperimentReport("whitney-check", {"c0": c0, "scales": list(scales), "window": window}, seed=seed)
    t0 = time.perf_counter()
    ratios, inside = [], True
    for _ in range(covers):
        lo = rng.uniform(-10, 10, 3)
        s = 2.0 ** rng.uniform(-8, 8)
        lo_f = [Fraction(float(x)) for x in lo]
        hi_f = [x + Fraction(s) for x in lo_f]
        Q = covering_cube(lo_f, hi_f)
        inside &= box_inside(lo_f, hi_f, Q.dilate(Fraction(9, 10)))
        ratios.append(float(Q.side) / s)
    report.constants["cover_side_ratio_max"] = max(ratios)
    report.runtimes["covering"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    bht = builtin("bht")
    sub = bht.singular
    cubes = whitney_cubes(sub, c0, scales, ([-window] * 3, [window] * 3), meshes=[0], meet_gamma=True)
    band_ok = all(in_band_exact(Q, sub, c0) for Q in cubes)
    report.constants["whitney_cubes"] = len(cubes)
    report.runtimes["whitney"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    part = partition_multiplier(bht, cubes)
    basis = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, -2.0]])
    pts = []
    while len(pts) < points:
        cand = rng.uniform(-2, 2, (4 * points, 2)) @ basis
        pts.extend(cand[part.covered(cand)])
    pts = np.array(pts[:points])
    err = float(np.max(np.abs(part.reconstruct(pts) - bht(pts))))
    report.constants["reconstruction_error"] = err
    report.runtimes["partition"] = time.perf_counter() - t0
    report.flags = {"covering": bool(inside), "cover_ratio_bounded": max(ratios) <= 2 ** 5,
                    "whitney_band": bool(band_ok), "reconstruction": err <= 1e-8}
    return report


# --------------------------------------------------------------------------
# tree experiments


TREE_SPEC = GridSpec(64, 8192)


def _bht_cubes(c0=8, scales=(-4, 0)):
    from .geometry import whitney_cubes

    return whitney_cubes(builtin("bht").singular, c0, scales, meshes=[0], meet_gamma=True, along=1.0)


def normalized_packets(coll, i: int, rng, level: int, packets: int = 10, spec: GridSpec = TREE_SPEC):
    """Random wave packets scaled so the largest tree size equals ``2**-level``."""
    from .tilekit import TileNorms, _SelectionState, random_packets

    f = random_packets(spec, coll, i, packets, rng)
    norms = np.array([TileNorms(f)(P.tile(i)) for P in coll])
    top = _SelectionState(coll, i, norms, 16 * 8).max_tree_size(np.ones(len(coll), dtype=bool))
    c = 2.0 ** (-level) / top if top > 0 else 1.0
    return GridFunction(spec, f.samples * c), norms * c


def tree_demo(m: int = 4, seed: int = 7, i: int = 0, c1: int = 2, window: float = 32.0) -> ExperimentReport:
    """One random refined instance, one selection at level ``m``, verified exhaustively."""
    from .tilekit import random_instance, select_trees, verify_selection

    rng = np.random.default_rng(seed)
    coll = random_instance(builtin("bht").singular, rng, i, c1=c1, spatial=(0, window), cubes=_bht_cubes())
    f, norms = normalized_packets(coll, i, rng, m)
    t0 = time.perf_counter()
    out = select_trees(coll, i, m, None, c1=c1, norms=norms)
    ver = verify_selection(out, coll, norms)
    report = ExperimentReport("tree-demo", {"m": m, "seed": seed, "i": i, "c1": c1, "window": window}, seed=seed)
    report.constants = {"multitiles": len(coll), "trees": len(out.trees), "residual": len(out.residual),
                        "sum_I_T": out.sum_I_T, "hypothesis_max_size": out.hypothesis_max_size,
                        "residual_max_size": ver["residual_max_size"], "bound": ver["bound"], "trace": out.trace}
    report.flags = {k: bool(ver[k]) for k in ("residual_ok", "disjoint_ok", "conservation_ok", "trees_valid")}
    report.runtimes = {"selection": time.perf_counter() - t0}
    return report


def _selection_instance(rng, r: int, i: int, c1: int, window: float, levels, cubes):
    """Even ``r``: random collection with wave-packet norms normalised to the
    hypothesis.  Odd ``r``: planted tree with norms just below the heavy
    threshold, which exercises the ``+`` and ``-`` passes."""
    from .tilekit import planted_instance, random_instance

    sub = builtin("bht").singular
    m = int(rng.integers(levels[0], levels[1] + 1))
    if r % 2 == 0:
        coll = random_instance(sub, rng, i, c1=c1, spatial=(0, window), cubes=cubes)
        _, norms = normalized_packets(coll, i, rng, m)
    else:
        coll, _, _ = planted_instance(sub, rng, i, c1=c1, spatial=(0, window), cubes=cubes)
        norms = rng.uniform(2.0 ** (-m - 3), 2.0 ** (-m - 2), len(coll))
    return coll, norms, m


def selection_sweep(instances: int = 50, seed: int = 0, i: int = 0, c1: int = 2, window: float = 64.0,
                    levels=(2, 8), c1_candidates=(2, 3, 4, 5), probe: int = 4) -> ExperimentReport:
    """Randomised selections verified exhaustively (see :func:`_selection_instance`).

    Also reports the smallest refinement exponent among ``c1_candidates``
    for which ``probe`` instances all verify.
    """
    from .tilekit import select_trees, verify_selection

    rng = np.random.default_rng(seed)
    cubes = _bht_cubes()
    report = ExperimentReport("selection-sweep", {"instances": instances, "c1": c1, "window": window}, seed=seed)
    t0 = time.perf_counter()
    worst = 0.0
    flags = {"residual_ok": True, "disjoint_ok": True, "conservation_ok": True, "trees_valid": True}
    sizes, kinds = [], {}
    for r in range(instances):
        coll, norms, m = _selection_instance(rng, r, i, c1, window, levels, cubes)
        out = select_trees(coll, i, m, None, c1=c1, norms=norms)
        ver = verify_selection(out, coll, norms)
        for k in flags:
            flags[k] &= bool(ver[k])
        for step in out.trace:
            kinds[step["kind"]] = kinds.get(step["kind"], 0) + 1
        worst = max(worst, ver["residual_max_size"] / ver["bound"])
        sizes.append(len(coll))
        report.series.append({"scale_octave": m, "ratio": ver["residual_max_size"] / ver["bound"], "bucket": r})
    report.runtimes["sweep"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    smallest = None
    for cand in c1_candidates:
        ok = True
        for r in range(probe):
            coll, norms, m = _selection_instance(rng, r, i, cand, window, levels, cubes)
            ok &= bool(verify_selection(select_trees(coll, i, m, None, c1=cand, norms=norms), coll, norms)["passed"])
        if ok:
            smallest = cand
            break
    report.runtimes["c1_probe"] = time.perf_counter() - t0
    report.constants = {"worst_residual_over_bound": worst, "max_multitiles": max(sizes),
                        "min_multitiles": min(sizes), "trees_by_kind": kinds, "smallest_c1": smallest}
    report.flags = flags
    return report


def counting_sweep(instances: int = 6, seed: int = 0, i: int = 0, c1: int = 2, windows=(16.0, 32.0, 64.0),
                   levels=(2, 8), N: int = 10) -> ExperimentReport:
    """Counting and size constants across selection levels and instance scales.

    Each instance is normalised so the largest tree size is ``2**-levels[0]``
    and selected level by level.  Constants: ``sum |I_T| / (2**(2m) min(1, lam |I_0|))``
    and ``size_i(T) / (a lam)`` with ``(a, lam)`` from :func:`tilekit.lambda_constants`.
    """
    from .tilekit import iterate_selection, lambda_constants, random_instance, tree_size, TileNorms

    rng = np.random.default_rng(seed)
    cubes = _bht_cubes()
    sub = builtin("bht").singular
    report = ExperimentReport("counting-sweep", {"instances": instances, "windows": list(windows)}, seed=seed)
    t0 = time.perf_counter()
    ms = list(range(levels[0], levels[1] + 1))
    count_by_m = {m: 0.0 for m in ms}
    size_by_m = {m: 0.0 for m in ms}
    count_by_scale, size_by_scale = [], []
    for window in windows:
        cmax = smax = 0.0
        for _ in range(instances):
            coll = random_instance(sub, rng, i, c1=c1, spatial=(0, window), cubes=cubes)
            f, norms = normalized_packets(coll, i, rng, levels[0])
            I0 = Interval(Fraction(0), as_fraction(window))
            a, lam = lambda_constants(f, [P.I for P in coll] + [I0], N)
            outs = iterate_selection(coll, i, None, levels[0], levels[1], c1=c1, norms=norms)
            table = TileNorms(f, N)
            for m, out in zip(ms, outs):
                cr = out.sum_I_T / (2.0 ** (2 * m) * min(1.0, lam * float(I0.length)))
                sr = max((tree_size(T, i, table, N) for T in out.trees), default=0.0) / (a * lam)
                count_by_m[m] = max(count_by_m[m], cr)
                size_by_m[m] = max(size_by_m[m], sr)
                cmax, smax = max(cmax, cr), max(smax, sr)
                report.series.append({"scale_octave": int(math.log2(window)), "ratio": cr, "bucket": f"m={m}"})
        count_by_scale.append(cmax)
        size_by_scale.append(smax)
    report.constants = {"counting_by_m": count_by_m, "size_by_m": size_by_m,
                        "counting_by_scale": count_by_scale, "size_by_scale": size_by_scale,
                        "counting_trend_m": trend([count_by_m[m] for m in ms]),
                        "size_trend_m": trend([size_by_m[m] for m in ms]),
                        "counting_trend_scale": trend(count_by_scale), "size_trend_scale": trend(size_by_scale)}
    report.flags = {k: report.constants[k] <= 2.0 for k in
                    ("counting_trend_m", "size_trend_m", "counting_trend_scale", "size_trend_scale")}
    report.runtimes = {"total": time.perf_counter() - t0}
    return report


def maximal_tree(coll, top: int, j: int):
    """All members of ``coll`` below ``coll[top]`` in coordinate ``j``."""
    from .tilekit import Tree, order_le

    T = coll[top]
    members = [P for P in coll if order_le(P.tile(j), T.tile(j))]
    return Tree(T, members, j, "maximal")


def tree_bound_checks(trees: int = 20, cubes: int = 20, seed: int = 0, window: float = 32.0,
                      N: int = 10) -> ExperimentReport:
    """Tree Cauchy-Schwarz ratios over random maximal trees and the spatial
    domination ratio ``|Lambda_{m_Q}| / sum_{Q_P = Q} |I_P| prod ||f_i||_{P_i}`` over random cubes."""
    from .forms import eval_form
    from .symbols import partition_multiplier
    from .tilekit import TileNorms, random_instance, random_packets, tiles_over_torus, tree_cauchy_schwarz_check

    rng = np.random.default_rng(seed)
    spec = TREE_SPEC
    bht = builtin("bht")
    allcubes = _bht_cubes()
    report = ExperimentReport("tree-bounds", {"trees": trees, "cubes": cubes, "window": window}, seed=seed)
    t0 = time.perf_counter()
    cs = {}
    done = 0
    while done < trees:
        coll = random_instance(bht.singular, rng, 0, c1=2, spatial=(0, window), cubes=allcubes)
        fs = [random_packets(spec, coll, i, 8, rng) for i in range(3)]
        tables = [TileNorms(f, N) for f in fs]
        top = int(rng.integers(len(coll)))
        T = maximal_tree(coll, top, int(rng.integers(3)))
        if len(T.members) < 2:
            continue
        r = tree_cauchy_schwarz_check(T, tables, N)
        octave = int(T.I_T.scale)
        cs.setdefault(octave, []).append(r["ratio"])
        report.series.append({"scale_octave": octave, "ratio": r["ratio"], "bucket": "tree"})
        done += 1
    report.runtimes["trees"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    part = partition_multiplier(bht, allcubes)
    band = spec.size // 6 - 1
    dom = {}
    for row in rng.choice(len(allcubes), size=cubes, replace=False):
        Q = allcubes.cube(int(row))
        piece = part.piece(int(row))
        F = FormInstance.build(piece, spec, band)
        slots = tiles_over_torus(Q, spec)
        fs = [band_project(random_packets(spec, slots, i, 3, rng), band) for i in range(3)]
        lhs = abs(eval_form(F, *fs))
        tables = [TileNorms(f, N) for f in fs]
        rhs = sum(float(P.I.length) * math.prod(t(P.tile(i)) for i, t in enumerate(tables)) for P in slots)
        ratio = lhs / rhs if rhs > 0 else 0.0
        dom.setdefault(Q.scale, []).append(ratio)
        report.series.append({"scale_octave": Q.scale, "ratio": ratio, "bucket": "cube"})
    report.runtimes["cubes"] = time.perf_counter() - t0
    cs_series = [max(cs[k]) for k in sorted(cs)]
    dom_series = [max(dom[k]) for k in sorted(dom)]
    report.constants = {"cs_max": max(cs_series), "cs_by_octave": {k: max(v) for k, v in sorted(cs.items())},
                        "domination_max": max(dom_series),
                        "domination_by_scale": {k: max(v) for k, v in sorted(dom.items())},
                        "cs_trend": trend(cs_series), "domination_trend": trend(dom_series)}
    report.flags = {"cs_finite": math.isfinite(max(cs_series)), "domination_finite": math.isfinite(max(dom_series)),
                    "cs_trend": trend(cs_series) <= 2.0, "domination_trend": trend(dom_series) <= 2.0}
    return report
