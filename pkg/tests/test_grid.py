"""Tests for sampled torus functions, cutoff weights, maximal functions and CZ."""

import threading
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tilescope.dyadic import DyadicInterval, Interval
from tilescope.errors import GridMismatch, RootAverageExceedsLevel
from tilescope.grid import (
    CutoffWeight,
    GridFunction,
    GridSpec,
    cz_decompose,
    dyadic_maximal,
    hl_maximal,
    interval_mask,
    read_binary,
    read_csv,
    weighted_l1,
    weighted_l2,
    write_binary,
    write_csv,
)


def indicator(spec, lo, hi):
    return GridFunction(spec, interval_mask(spec, [(lo, hi)]).astype(float))


def brute_maximal(a):
    """Every cyclic window containing each point, via prefix sums."""
    m = a.size
    c = np.concatenate([[0.0], np.cumsum(np.concatenate([a, a]))])
    out = np.zeros(m)
    for s in range(m):
        for w in range(1, m + 1):
            avg = (c[s + w] - c[s]) / w
            idx = (s + np.arange(w)) % m
            out[idx] = np.maximum(out[idx], avg)
    return out


class TestGridSpec:
    def test_spacing(self):
        spec = GridSpec(2.0, 8)
        assert spec.spacing * spec.size == spec.length
        np.testing.assert_array_equal(spec.wavenumbers, [0, 1, 2, 3, -4, -3, -2, -1])

    @pytest.mark.parametrize("size", [0, 3, 12, 1000])
    def test_rejects_non_power_of_two(self, size):
        with pytest.raises(ValueError):
            GridSpec(1.0, size)

    def test_rejects_nonpositive_length(self):
        with pytest.raises(ValueError):
            GridSpec(0.0, 8)


class TestGridFunction:
    @pytest.mark.parametrize("size", [2 ** 8, 2 ** 12, 2 ** 14])
    def test_round_trip(self, size):
        rng = np.random.default_rng(1)
        spec = GridSpec(1.0, size)
        for _ in range(100):
            f = GridFunction(spec, rng.standard_normal(size) + 1j * rng.standard_normal(size))
            err = np.linalg.norm(f.inverse() - f.samples) / np.linalg.norm(f.samples)
            assert err <= 1e-12

    def test_plancherel(self):
        rng = np.random.default_rng(2)
        spec = GridSpec(3.0, 1024)
        f = GridFunction(spec, rng.standard_normal(1024) + 1j * rng.standard_normal(1024))
        lhs = spec.spacing * np.sum(np.abs(f.samples) ** 2)
        rhs = np.sum(np.abs(f.spectrum) ** 2) / spec.length
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10)

    def test_spectrum_convention(self):
        spec = GridSpec(2.0, 64)
        f = GridFunction.plane_wave(spec, 5)
        # fhat(k/L) = h * sum f(x_j) exp(-2 pi i k x_j / L) = L at k = 5
        np.testing.assert_allclose(f.coefficient(5), 2.0, atol=1e-12)
        np.testing.assert_allclose(abs(f.coefficient(4)), 0.0, atol=1e-12)

    def test_from_spectrum_dict(self):
        spec = GridSpec(1.0, 32)
        f = GridFunction.from_spectrum(spec, {3: 1.0})
        np.testing.assert_allclose(f.samples, GridFunction.plane_wave(spec, 3).samples, atol=1e-12)

    def test_random_band_limited(self):
        spec = GridSpec(1.0, 256)
        f = GridFunction.random_band_limited(spec, 10, np.random.default_rng(0))
        assert f.band_excess(10) < 1e-12
        assert f.band_excess(5) > 0.0

    def test_immutable(self):
        f = GridFunction.zeros(GridSpec(1.0, 8))
        with pytest.raises(ValueError):
            f.samples[0] = 1.0

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            GridFunction.zeros(GridSpec(1.0, 8)) + GridFunction.zeros(GridSpec(1.0, 16))

    def test_roll_translates(self):
        spec = GridSpec(1.0, 16)
        f = GridFunction(spec, np.arange(16))
        assert f.roll(3).samples[3] == 0

    def test_concurrent_spectrum_is_computed_once(self):
        spec = GridSpec(1.0, 4096)
        f = GridFunction.random_band_limited(spec, 50, np.random.default_rng(3))
        f = GridFunction(spec, f.samples)
        seen = []
        threads = [threading.Thread(target=lambda: seen.append(f.spectrum)) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(s is seen[0] for s in seen)


class TestIO:
    def test_binary_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        spec = GridSpec(2.5, 128)
        f = GridFunction(spec, rng.standard_normal(128) + 1j * rng.standard_normal(128))
        write_binary(f, tmp_path / "f.bin")
        raw = (tmp_path / "f.bin").read_bytes()
        assert raw[:4] == b"TFGF" and len(raw) == 32 + 16 * 128
        g = read_binary(tmp_path / "f.bin")
        assert g.spec == spec
        assert g.samples.tobytes() == f.samples.tobytes()

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        spec = GridSpec(1.0, 64)
        f = GridFunction(spec, rng.standard_normal(64) + 1j * rng.standard_normal(64))
        write_csv(f, tmp_path / "f.csv")
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "index,re,im"
        np.testing.assert_array_equal(read_csv(tmp_path / "f.csv").samples, f.samples)


class TestCutoffWeight:
    def test_whole_torus_constant(self):
        spec = GridSpec(1.0, 256)
        for N in (1, 2, 10):
            w = CutoffWeight(Interval(Fraction(0), Fraction(1)), N)
            assert weighted_l1(GridFunction(spec, np.ones(256)), w) == pytest.approx(1.0, abs=1e-14)

    def test_zero_function(self):
        spec = GridSpec(1.0, 64)
        w = CutoffWeight(Interval(Fraction(0), Fraction(1, 4)), 3)
        assert weighted_l1(GridFunction.zeros(spec), w) == 0.0
        assert weighted_l2(GridFunction.zeros(spec), w) == 0.0

    def test_indicator_against_refined_sum(self):
        # refined-grid oracle at M = 2**16, a direct numpy sum
        fine = GridSpec(1.0, 2 ** 16)
        x = fine.points
        x = x[x < 0.25]
        d = np.where(x < 0.125, x + 0.25, 0.5 - x)
        oracle = fine.spacing * np.sum((1 + d / 0.25) ** -2.0)
        assert oracle == pytest.approx(0.05, rel=1e-4)  # closed form 1/40 + 1/40
        spec = GridSpec(1.0, 1024)
        w = CutoffWeight(Interval(Fraction(1, 2), Fraction(3, 4)), 2)
        got = weighted_l1(indicator(spec, 0.0, 0.25), w)
        assert abs(got - oracle) / oracle <= 1e-3

    def test_one_on_interval(self):
        iv = DyadicInterval(-2, 1, 0)
        w = CutoffWeight(iv, 7)
        x = np.linspace(0.25, 0.5, 50, endpoint=False)
        assert np.all(w(x) == 1.0)

    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=20), st.integers(1, 12))
    def test_monotone_in_distance(self, xs, N):
        w = CutoffWeight(Interval(Fraction(0), Fraction(1, 2)), N)
        xs = np.array(xs)
        order = np.argsort(w.distance(xs))
        vals = w(xs)[order]
        assert np.all(np.diff(vals) <= 1e-15)


class TestMaximal:
    def test_constant(self):
        spec = GridSpec(1.0, 64)
        np.testing.assert_allclose(hl_maximal(GridFunction(spec, np.ones(64))).samples, 1.0)

    def test_indicator_inside_and_at_half(self):
        spec = GridSpec(1.0, 2 ** 12)
        Mf = hl_maximal(indicator(spec, 0.0, 0.25)).samples.real
        assert Mf[100] == pytest.approx(1.0)
        # best window runs from 0 to the sample at 1/2: 1024 ones among 2049 samples
        assert Mf[2048] == pytest.approx(1024 / 2049, rel=1e-12)

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(6)
        spec = GridSpec(1.0, 2 ** 8)
        f = GridFunction(spec, rng.standard_normal(256))
        np.testing.assert_allclose(hl_maximal(f).samples.real, brute_maximal(np.abs(f.samples)), rtol=1e-12)

    def test_dominates_every_window_average(self):
        rng = np.random.default_rng(7)
        m = 2 ** 8
        a = np.abs(rng.standard_normal(m))
        Mf = hl_maximal(GridFunction(GridSpec(1.0, m), a)).samples.real
        c = np.concatenate([[0.0], np.cumsum(np.concatenate([a, a]))])
        for s in range(m):
            for w in range(1, m + 1):
                idx = (s + np.arange(w)) % m
                assert np.all(Mf[idx] >= (c[s + w] - c[s]) / w - 1e-12)

    def test_dyadic_fast_path_is_flagged_and_bounded(self):
        rng = np.random.default_rng(8)
        f = GridFunction(GridSpec(1.0, 512), rng.standard_normal(512))
        est = dyadic_maximal(f)
        exact = hl_maximal(f).samples.real
        fast = est.values.samples.real
        assert est.approximate
        assert np.all(fast <= exact + 1e-12)
        assert np.all(fast * est.undershoot_bound >= exact - 1e-12)


class TestCZ:
    def test_zero(self):
        cz = cz_decompose(GridFunction.zeros(GridSpec(1.0, 64)), 1.0)
        assert cz.bad == []
        assert np.all(cz.good.samples == 0)

    def test_half_indicator(self):
        spec = GridSpec(1.0, 64)
        f = GridFunction(spec, 2.0 * interval_mask(spec, [(0, 0.5)]))
        cz = cz_decompose(f, 1.0)
        assert len(cz.bad) == 1
        iv, b = cz.bad[0]
        assert (iv.left, iv.right) == (Fraction(0), Fraction(1, 2))
        assert np.all(b.samples == 0)
        np.testing.assert_array_equal(cz.good.samples, f.samples)

    def test_root_average_too_large(self):
        with pytest.raises(RootAverageExceedsLevel):
            cz_decompose(GridFunction(GridSpec(1.0, 8), np.full(8, 3.0)), 1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_invariants(self, seed):
        rng = np.random.default_rng(seed)
        spec = GridSpec(1.0, 1024)
        raw = rng.standard_normal(1024) * (rng.random(1024) < 0.05)
        f = GridFunction(spec, raw / (spec.spacing * np.abs(raw).sum()))
        alpha = 4.0
        cz = cz_decompose(f, alpha)
        # avg + (f - avg) may differ from f in the last bit
        np.testing.assert_allclose(cz.reconstruct(), f.samples, rtol=0, atol=8 * np.finfo(float).eps * f.sup())
        assert cz.total_length <= f.l1() / alpha + 1e-12
        assert cz.good.sup() <= 2 * alpha + 1e-12
        x = spec.points
        for iv, b in cz.bad:
            assert abs(spec.spacing * b.samples.sum()) <= 1e-12
            inside = (x >= float(iv.left)) & (x < float(iv.right))
            assert np.all(b.samples[~inside] == 0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=64, max_size=64), st.floats(0.5, 20))
    def test_reconstruction_property(self, vals, alpha):
        spec = GridSpec(1.0, 64)
        f = GridFunction(spec, vals)
        if np.abs(f.samples).mean() > alpha:
            return
        cz = cz_decompose(f, alpha)
        np.testing.assert_allclose(cz.reconstruct(), f.samples, atol=1e-12)
