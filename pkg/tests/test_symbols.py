"""Tests for built-in symbols, symbol estimates and the bump partition of unity."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tilescope.errors import UncoveredPoint, UnknownSymbol
from tilescope.geometry import CubeSet, ShiftedCube, whitney_cubes
from tilescope.symbols import (
    Symbol,
    builtin,
    bump_1d,
    check_homogeneity,
    check_symbol_estimates,
    gamma_tangent_basis,
    partition_multiplier,
    project_to_gamma,
    smoothstep,
)


@pytest.fixture(scope="module")
def bht_partition():
    bht = builtin("bht")
    cubes = whitney_cubes(bht.singular, 8, (-4, -1), ([-3] * 3, [3] * 3), meshes=[0], meet_gamma=True)
    return partition_multiplier(bht, cubes)


def covered_points(part, rng, count):
    basis = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, -2.0]])
    pts = []
    while len(pts) < count:
        cand = rng.uniform(-2, 2, (4 * count, 2)) @ basis
        pts.extend(cand[part.covered(cand)])
    return np.array(pts[:count])


class TestBuiltins:
    def test_one(self):
        m = builtin("one", 4)
        assert m.n == 4 and m.singular.k == 0
        np.testing.assert_allclose(m([[1.0, 2.0, -0.5, -2.5], [0.0, 0.0, 0.0, 0.0]]), 1.0)

    def test_bht_values(self):
        m = builtin("bht")
        assert m((1.0, 2.0, -3.0)) == pytest.approx(np.pi * 1j)
        assert m((2.0, 1.0, -3.0)) == pytest.approx(-np.pi * 1j)
        assert m((2.0, 2.0, -4.0)) == 0
        np.testing.assert_allclose(m.singular.basis, [[1.0, 1.0, -2.0]])

    def test_tht_singular_plane(self):
        m = builtin("tht")
        assert m.singular.k == 2 and m.singular.nondegenerate
        for v in m.singular.basis:
            assert m(v) == 0

    def test_unknown(self):
        with pytest.raises(UnknownSymbol):
            builtin("nope")
        with pytest.raises(UnknownSymbol):
            builtin("bht", 4)

    @pytest.mark.parametrize("name", ["one", "bht", "tht", "smooth0"])
    def test_homogeneity(self, name):
        assert check_homogeneity(builtin(name)) <= 1e-12

    @pytest.mark.parametrize("name", ["one", "bht", "tht", "smooth0"])
    def test_sup_bound(self, name):
        m = builtin(name)
        xi = project_to_gamma(np.random.default_rng(0).standard_normal((500, m.n)))
        assert np.abs(m(xi)).max() <= m.sup_bound + 1e-12

    def test_from_table(self, tmp_path):
        xs = np.linspace(-1, 1, 5)
        rows = [(a, b, a + 2 * b, 0.0) for a in xs for b in xs]
        path = tmp_path / "table.csv"
        np.savetxt(path, rows, delimiter=",", header="xi1,xi2,re,im")
        m = Symbol.from_table(path, 3)
        # linear data is reproduced exactly by multilinear interpolation
        assert m((0.3, -0.2, -0.1)) == pytest.approx(0.3 - 0.4)
        assert m((5.0, 0.0, -5.0)) == 0


class TestSymbolEstimates:
    def test_one(self):
        rep = check_symbol_estimates(builtin("one"), order=3)
        assert rep["constants"]["0"] == pytest.approx(1.0)
        for a in ("1", "2", "3"):
            assert rep["constants"][a] == pytest.approx(0.0, abs=1e-9)

    def test_bht(self):
        rep = check_symbol_estimates(builtin("bht"), order=2)
        assert rep["constants"]["0"] == pytest.approx(math.pi)
        assert rep["constants"]["1"] == pytest.approx(0.0, abs=1e-9)
        assert rep["constants"]["2"] == pytest.approx(0.0, abs=1e-9)

    def test_smooth0_no_growth(self):
        rep = check_symbol_estimates(builtin("smooth0"), order=3)
        assert not any(rep["growth"].values())
        assert all(np.isfinite(v) for v in rep["constants"].values())

    def test_order_limit(self):
        with pytest.raises(ValueError):
            check_symbol_estimates(builtin("one"), order=5)

    def test_tangent_basis(self):
        t = gamma_tangent_basis(4)
        np.testing.assert_allclose(t @ t.T, np.eye(3), atol=1e-14)
        np.testing.assert_allclose(t.sum(axis=1), 0.0, atol=1e-14)


class TestBump:
    @given(st.floats(0.0, 1.0))
    def test_smoothstep_range(self, x):
        v = float(smoothstep(x))
        assert -1e-12 <= v <= 1 + 1e-12

    def test_smoothstep_ends(self):
        np.testing.assert_allclose(smoothstep([0.0, 0.5, 1.0]), [0.0, 0.5, 1.0], atol=1e-14)

    def test_plateau_and_support(self):
        t = np.linspace(-0.5, 1.5, 4001)
        b = bump_1d(t)
        assert np.all(b[(t >= 0.05) & (t <= 0.95)] == 1.0)
        assert np.all(b[(t <= 0) | (t >= 1)] == 0.0)


class TestPartition:
    def test_single_cube(self):
        bht = builtin("bht")
        Q = ShiftedCube(0, (1, -1, -1), (0, 0, 0))
        part = partition_multiplier(bht, CubeSet.from_cubes(3, [Q]))
        xi = np.array([1.5, -0.6, -0.9])
        assert part.piece(0)(xi) == pytest.approx(bht(xi))

    def test_reconstruction(self, bht_partition):
        pts = covered_points(bht_partition, np.random.default_rng(1), 1000)
        err = np.abs(bht_partition.reconstruct(pts) - builtin("bht")(pts))
        assert err.max() <= 1e-8

    def test_partition_of_unity(self, bht_partition):
        pts = covered_points(bht_partition, np.random.default_rng(2), 500)
        idx, _, phi = bht_partition.weights(pts)
        np.testing.assert_allclose(np.bincount(idx, weights=phi, minlength=len(pts)), 1.0, atol=1e-10)

    def test_support(self, bht_partition):
        rng = np.random.default_rng(3)
        for r in rng.choice(len(bht_partition), 20, replace=False):
            piece = bht_partition.piece(int(r))
            lo, hi = piece.box()
            xi = project_to_gamma(rng.uniform(lo - 2 * (hi - lo), hi + 2 * (hi - lo), (500, 3)))
            outside = ~np.all((xi > lo) & (xi < hi), axis=1)
            assert np.all(piece(xi)[outside] == 0)

    def test_uncovered_strict(self, bht_partition):
        far = np.array([[30.0, -30.0, 0.0]])
        assert not bht_partition.covered(far)[0]
        with pytest.raises(UncoveredPoint):
            bht_partition.reconstruct(far, strict=True)

    def test_local_constants_bounded(self, bht_partition):
        consts = [bht_partition.piece(r).local_constants(order=2, samples=16) for r in range(0, len(bht_partition), 40)]
        worst = {a: max(c[a] for c in consts) for a in ("0", "1", "2")}
        assert worst["0"] <= math.pi + 1e-9
        assert all(np.isfinite(v) for v in worst.values())

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.1, 10.0))
    def test_bht_scale_invariance(self, lam):
        m = builtin("bht")
        xi = project_to_gamma(np.random.default_rng(4).standard_normal((50, 3)))
        np.testing.assert_array_equal(m(lam * xi), m(xi))
