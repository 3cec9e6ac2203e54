"""Tests for the n-linear form, the operator, tensor pieces and the principal value sum."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tilescope.errors import BandLimitViolated, GridMismatch, NotTensorFactorizable
from tilescope.forms import (
    FormInstance,
    TensorPiece,
    apply_operator,
    apply_piece_fast,
    bht_pv_quadrature,
    eval_form,
    pv_error_bound,
)
from tilescope.geometry import whitney_cubes
from tilescope.grid import GridFunction, GridSpec
from tilescope.symbols import builtin, partition_multiplier

SPEC = GridSpec(1.0, 256)


def rand(spec, band, rng, count):
    return [GridFunction.random_band_limited(spec, band, rng) for _ in range(count)]


def brute_form(symbol, fs, band):
    """Plain triple loop over frequency tuples with zero sum."""
    L = fs[0].spec.length
    total = 0j
    for k1 in range(-band, band + 1):
        for k2 in range(-band, band + 1):
            k3 = -k1 - k2
            if abs(k3) > band:
                continue
            m = symbol(np.array([k1, k2, k3]) / L)
            total += m * fs[0].coefficient(k1) * fs[1].coefficient(k2) * fs[2].coefficient(k3)
    return total / L ** 2


class TestEvalForm:
    def test_constants(self):
        F = FormInstance.build(builtin("one", 3), SPEC, 4)
        one = GridFunction(SPEC, np.ones(SPEC.size))
        assert eval_form(F, one, one, one) == pytest.approx(1.0)

    def test_bht_plane_waves(self):
        F = FormInstance.build(builtin("bht"), SPEC, 4)
        e = [GridFunction.plane_wave(SPEC, k) for k in (1, 2, -3)]
        assert eval_form(F, *e) == pytest.approx(np.pi * 1j)

    def test_product_oracle(self):
        rng = np.random.default_rng(0)
        spec = GridSpec(2.0, 512)
        F = FormInstance.build(builtin("one", 3), spec, 20)
        for _ in range(10):
            fs = rand(spec, 20, rng, 3)
            want = spec.spacing * np.sum(fs[0].samples * fs[1].samples * fs[2].samples)
            assert abs(eval_form(F, *fs) - want) <= 1e-10 * abs(want)

    def test_against_plain_loop(self):
        rng = np.random.default_rng(1)
        spec = GridSpec(3.0, 128)
        m = builtin("bht")
        F = FormInstance.build(m, spec, 6)
        fs = rand(spec, 6, rng, 3)
        np.testing.assert_allclose(eval_form(F, *fs), brute_form(m, fs, 6), rtol=1e-12)

    def test_spectral_path_agrees(self):
        rng = np.random.default_rng(2)
        F = FormInstance.build(builtin("bht"), SPEC, 16)
        for _ in range(5):
            fs = rand(SPEC, 16, rng, 3)
            direct = eval_form(F, *fs)
            assert abs(eval_form(F, *fs, method="spectral") - direct) <= 1e-10 * abs(direct)

    def test_four_linear(self):
        rng = np.random.default_rng(3)
        spec = GridSpec(1.0, 64)
        F = FormInstance.build(builtin("one", 4), spec, 4)
        fs = rand(spec, 4, rng, 4)
        want = spec.spacing * np.sum(np.prod([f.samples for f in fs], axis=0))
        np.testing.assert_allclose(eval_form(F, *fs), want, rtol=1e-10)

    def test_band_limit_guards(self):
        with pytest.raises(BandLimitViolated):
            FormInstance.build(builtin("bht"), GridSpec(1.0, 64), 11)
        F = FormInstance.build(builtin("bht"), SPEC, 4)
        wide = GridFunction.plane_wave(SPEC, 9)
        one = GridFunction.plane_wave(SPEC, 0)
        with pytest.raises(BandLimitViolated):
            eval_form(F, wide, one, one)

    def test_grid_mismatch(self):
        F = FormInstance.build(builtin("bht"), SPEC, 4)
        other = GridFunction.plane_wave(GridSpec(1.0, 128), 0)
        one = GridFunction.plane_wave(SPEC, 0)
        with pytest.raises(GridMismatch):
            eval_form(F, other, one, one)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 255), st.integers(0, 2 ** 31))
    def test_translation_invariance(self, s, seed):
        rng = np.random.default_rng(seed)
        F = FormInstance.build(builtin("bht"), SPEC, 8)
        fs = rand(SPEC, 8, rng, 3)
        a = eval_form(F, *fs)
        b = eval_form(F, *[f.roll(s) for f in fs])
        assert abs(a - b) <= 1e-10 * max(abs(a), 1e-300)

    def test_modulation_along_singular_line(self):
        rng = np.random.default_rng(4)
        F = FormInstance.build(builtin("bht"), SPEC, 12)
        fs = rand(SPEC, 8, rng, 3)
        a = eval_form(F, *fs)
        b = eval_form(F, fs[0].modulate(1), fs[1].modulate(1), fs[2].modulate(-2))
        np.testing.assert_allclose(b, a, rtol=1e-10)

    def test_multilinearity(self):
        rng = np.random.default_rng(5)
        F = FormInstance.build(builtin("bht"), SPEC, 8)
        f, g, h1, h2 = rand(SPEC, 8, rng, 4)
        a, b = 0.3 - 1.2j, 2.0 + 0.5j
        for slot in range(3):
            args = [f, g, h1]
            lhs_args = list(args)
            lhs_args[slot] = args[slot] * a + h2 * b
            alt = list(args)
            alt[slot] = h2
            lhs = eval_form(F, *lhs_args)
            rhs = a * eval_form(F, *args) + b * eval_form(F, *alt)
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_decomposition_over_pieces(self):
        """The form splits over Whitney pieces up to the uncovered lattice tuples."""
        rng = np.random.default_rng(6)
        spec = GridSpec(1.0, 64)
        B = 6
        m = builtin("bht")
        cubes = whitney_cubes(m.singular, 2, (0, 1), ([-7] * 3, [7] * 3), meet_gamma=True)
        part = partition_multiplier(m, cubes)
        fs = rand(spec, B, rng, 3)
        pieces = sum(eval_form(FormInstance(p, 3, spec, B), *fs) for p in part)
        # remainder oracle: the same tuple sum weighted by the uncovered share
        rem = 0j
        for k1 in range(-B, B + 1):
            for k2 in range(-B, B + 1):
                k3 = -k1 - k2
                if abs(k3) > B:
                    continue
                xi = np.array([k1, k2, k3], dtype=float)
                share = 1.0 - part.reconstruct(xi[None])[0] / m(xi) if m(xi) != 0 else 0.0
                rem += share * m(xi) * fs[0].coefficient(k1) * fs[1].coefficient(k2) * fs[2].coefficient(k3)
        total = eval_form(FormInstance.build(m, spec, B), *fs)
        np.testing.assert_allclose(pieces + rem, total, rtol=1e-10, atol=1e-12)


class TestOperator:
    def test_bht_plane_waves(self):
        F = FormInstance.build(builtin("bht"), SPEC, 4)
        T = apply_operator(F, GridFunction.plane_wave(SPEC, 1), GridFunction.plane_wave(SPEC, 2))
        np.testing.assert_allclose(T.samples, np.pi * 1j * GridFunction.plane_wave(SPEC, 3).samples, atol=1e-10)

    def test_product(self):
        rng = np.random.default_rng(7)
        F = FormInstance.build(builtin("one", 3), SPEC, 30)
        f1, f2 = rand(SPEC, 30, rng, 2)
        np.testing.assert_allclose(apply_operator(F, f1, f2).samples, (f1 * f2).samples, atol=1e-10 * (f1 * f2).sup())

    def test_duality(self):
        rng = np.random.default_rng(8)
        spec = GridSpec(2.0, 256)
        F = FormInstance.build(builtin("bht"), spec, 10)
        for _ in range(10):
            fs = rand(spec, 10, rng, 3)
            lam = eval_form(F, *fs)
            dual = spec.spacing * np.sum(apply_operator(F, fs[0], fs[1]).samples * fs[2].samples)
            assert abs(lam - dual) <= 1e-10 * abs(lam)

    def test_four_linear_product(self):
        rng = np.random.default_rng(9)
        spec = GridSpec(1.0, 64)
        F = FormInstance.build(builtin("one", 4), spec, 4)
        fs = rand(spec, 4, rng, 3)
        want = fs[0].samples * fs[1].samples * fs[2].samples
        np.testing.assert_allclose(apply_operator(F, *fs).samples, want, atol=1e-10 * np.abs(want).max())


class TestFastPiece:
    def test_unit_factors_reduce_to_product(self):
        rng = np.random.default_rng(10)
        F = FormInstance.build(builtin("one", 3), SPEC, 12)
        f1, f2 = rand(SPEC, 12, rng, 2)
        ones = [lambda x: np.ones_like(x)] * 3
        out = apply_piece_fast(F, TensorPiece(ones), f1, f2)
        np.testing.assert_allclose(out.samples, (f1 * f2).samples, atol=1e-12 * (f1 * f2).sup())

    def test_tensor_piece_against_slow_path(self):
        rng = np.random.default_rng(11)
        F = FormInstance.build(builtin("one", 3), SPEC, 12)
        f1, f2 = rand(SPEC, 12, rng, 2)
        piece = TensorPiece([lambda x: np.exp(-x ** 2 / 20), lambda x: (x > 0).astype(float),
                             lambda x: 1.0 / (1 + x ** 2)], constant=0.5j)
        fast = apply_piece_fast(F, piece, f1, f2)
        slow = apply_operator(FormInstance(piece, 3, SPEC, 12), f1, f2)
        np.testing.assert_allclose(fast.samples, slow.samples, atol=1e-8 * slow.sup())

    def test_disjoint_support(self):
        rng = np.random.default_rng(12)
        F = FormInstance.build(builtin("one", 3), SPEC, 12)
        f1, f2 = rand(SPEC, 12, rng, 2)
        far = [lambda x: (np.abs(x) > 50).astype(float)] * 3
        assert apply_piece_fast(F, TensorPiece(far), f1, f2).sup() <= 1e-14 * (f1 * f2).sup()

    def test_whitney_pieces_against_slow_path(self):
        rng = np.random.default_rng(13)
        spec = GridSpec(1.0, 256)
        B = 20
        m = builtin("bht")
        cubes = whitney_cubes(m.singular, 2, (2, 3), ([-B] * 3, [B] * 3), meshes=[0], meet_gamma=True)
        part = partition_multiplier(m, cubes)
        f1, f2 = rand(spec, B, rng, 2)
        F = FormInstance.build(m, spec, B)
        tensor = 0
        for p in list(part)[:12]:
            fast = apply_piece_fast(F, p, f1, f2)
            slow = apply_operator(FormInstance(p, 3, spec, B), f1, f2, restrict=False)
            scale = max(slow.sup(), 1e-300)
            np.testing.assert_allclose(fast.samples, slow.samples, atol=1e-8 * scale)
            try:
                apply_piece_fast(F, p, f1, f2, strict=True)
                tensor += 1
            except NotTensorFactorizable:
                pass
        assert tensor > 0


class TestPrincipalValue:
    def test_constants_cancel(self):
        one = GridFunction(GridSpec(1.0, 1024), np.ones(1024))
        assert bht_pv_quadrature(one, one).sup() <= 1e-12

    def test_plane_waves(self):
        spec = GridSpec(1.0, 4096)
        pv = bht_pv_quadrature(GridFunction.plane_wave(spec, 1), GridFunction.plane_wave(spec, 2))
        want = np.pi * 1j * GridFunction.plane_wave(spec, 3)
        err = (pv - want).l2() / want.l2()
        assert err <= 1e-3
        assert err <= pv_error_bound(1, 4096)

    def test_random_pair(self):
        rng = np.random.default_rng(14)
        spec = GridSpec(1.0, 4096)
        F = FormInstance.build(builtin("bht"), spec, 8)
        f1, f2 = rand(spec, 8, rng, 2)
        T = apply_operator(F, f1, f2)
        assert (bht_pv_quadrature(f1, f2) - T).l2() / T.l2() <= 1e-2

    def test_band_guard(self):
        spec = GridSpec(1.0, 64)
        with pytest.raises(BandLimitViolated):
            bht_pv_quadrature(GridFunction.plane_wave(spec, 20), GridFunction.plane_wave(spec, 0))
