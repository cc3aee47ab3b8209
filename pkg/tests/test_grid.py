"""Lattice, field, and discrete-calculus tests.

The finite-difference path is the independent oracle for the spectral path
and vice versa; integration identities are checked against closed forms.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusflow import (
    GridMismatchError,
    ScalarField,
    SpectralWorkspace,
    field_from_fn,
    grad_inner,
    integrate,
    laplacian_fd,
    laplacian_spectral,
    make_grid,
)

from conftest import band_field

seeds = st.integers(min_value=0, max_value=10_000)


class TestMakeGrid:
    def test_unit_3torus(self):
        g = make_grid(3, 32, [1, 1, 1])
        assert g.size == 32768
        assert g.spacing == (1 / 32,) * 3
        assert g.volume == 1.0

    def test_anisotropic_spacing(self):
        g = make_grid(3, 8, [2, 1, 1])
        assert g.spacing == (0.25, 0.125, 0.125)

    def test_low_dimension_rejected(self):
        with pytest.raises(ValueError, match="dimension must satisfy n > 2"):
            make_grid(2, 32, [1, 1])

    def test_high_dimension_rejected(self):
        with pytest.raises(ValueError, match="at most 4"):
            make_grid(5, 8, [1] * 5)

    @pytest.mark.parametrize("m", [20, 4, 7])
    def test_bad_points_per_axis(self, m):
        with pytest.raises(ValueError, match="power of two"):
            make_grid(3, m, [1, 1, 1])

    def test_nonpositive_length_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            make_grid(3, 8, [1, -1, 1])

    def test_length_count_mismatch(self):
        with pytest.raises(ValueError, match="side lengths"):
            make_grid(3, 8, [1, 1])


class TestScalarField:
    def test_flat_values_reshaped(self, grid16):
        f = ScalarField(grid16, np.arange(grid16.size, dtype=float))
        assert f.values.shape == grid16.shape
        assert f.values[0, 0, 1] == 1.0  # row-major order

    def test_wrong_size_rejected(self, grid16):
        with pytest.raises(ValueError, match="values"):
            ScalarField(grid16, np.ones(7))

    def test_values_read_only(self, grid16):
        f = ScalarField(grid16, np.ones(grid16.shape))
        with pytest.raises(ValueError):
            f.values[0, 0, 0] = 2.0

    def test_source_mutation_does_not_leak(self, grid16):
        src = np.ones(grid16.shape)
        f = ScalarField(grid16, src)
        src[0, 0, 0] = 99.0
        assert f.values[0, 0, 0] == 1.0

    def test_nonfinite_named_index(self, grid16):
        vals = np.ones(grid16.shape)
        vals[2, 3, 4] = np.nan
        with pytest.raises(ValueError, match=r"\(2, 3, 4\)"):
            ScalarField(grid16, vals)


class TestFieldFromFn:
    def test_constant(self, grid16):
        f = field_from_fn(grid16, lambda x, y, z: 1.0)
        assert np.all(f.values == 1.0)

    def test_cosine_max_at_origin(self, grid32):
        f = field_from_fn(grid32, lambda x, y, z: np.cos(2 * np.pi * x))
        assert f.values[0, 0, 0] == 1.0
        assert f.max() == 1.0

    def test_singular_sample_rejected(self, grid16):
        with pytest.raises(ValueError, match=r"\(0, 0, 0\)"):
            field_from_fn(grid16, lambda x, y, z: 1.0 / (x + y + z))


class TestLaplacianSpectral:
    def test_constant_is_harmonic(self, grid16):
        ws = SpectralWorkspace(grid16)
        f = ScalarField(grid16, np.full(grid16.shape, 3.7))
        lap = laplacian_spectral(f, ws)
        assert np.all(lap.values == 0.0)

    def test_single_mode_eigenvalue(self, grid32):
        ws = SpectralWorkspace(grid32)
        f = field_from_fn(grid32, lambda x, y, z: np.cos(2 * np.pi * x))
        lap = laplacian_spectral(f, ws)
        expected = -((2 * np.pi) ** 2) * f.values
        assert np.abs(lap.values - expected).max() < 1e-10

    def test_two_mode_eigenvalue_vs_fd_oracle(self, grid32):
        # sum of squared wavenumbers: -(4 pi^2 + 16 pi^2) f
        ws = SpectralWorkspace(grid32)
        f = field_from_fn(
            grid32, lambda x, y, z: np.sin(2 * np.pi * x) * np.cos(4 * np.pi * y)
        )
        lap = laplacian_spectral(f, ws)
        expected = -(4 * np.pi**2 + 16 * np.pi**2) * f.values
        assert np.abs(lap.values - expected).max() < 1e-9
        # independent second-order oracle agrees within its truncation bound
        fd = laplacian_fd(f)
        h = grid32.spacing[0]
        bound = (h**2 / 12) * ((2 * np.pi) ** 4 + (4 * np.pi) ** 4) * 1.2
        assert np.abs(fd.values - lap.values).max() < bound

    def test_workspace_grid_mismatch(self, grid16, grid32):
        ws = SpectralWorkspace(grid16)
        f = ScalarField(grid32, np.ones(grid32.shape))
        with pytest.raises(GridMismatchError):
            laplacian_spectral(f, ws)

    @settings(max_examples=10, deadline=None)
    @given(seed=seeds)
    def test_zero_mean(self, grid16, seed):
        ws = SpectralWorkspace(grid16)
        f = band_field(grid16, seed, 3)
        lap = laplacian_spectral(f, ws)
        assert abs(integrate(lap)) <= 1e-10 * f.sup_norm() * grid16.volume

    def test_workspace_multipliers(self, grid16):
        ws = SpectralWorkspace(grid16)
        assert ws.minus_k2.flat[0] == 0.0
        assert np.all(ws.minus_k2 <= 0.0)
        assert np.isrealobj(ws.minus_k2)


class TestLaplacianFd:
    def test_constant_exactly_zero(self, grid16):
        f = ScalarField(grid16, np.full(grid16.shape, 2.5))
        assert np.all(laplacian_fd(f).values == 0.0)

    def test_single_mode_symbol(self, grid32):
        # the stencil acts on cos(2 pi x) by its exact discrete symbol
        f = field_from_fn(grid32, lambda x, y, z: np.cos(2 * np.pi * x))
        h = grid32.spacing[0]
        symbol = -4.0 / h**2 * np.sin(np.pi * h) ** 2
        fd = laplacian_fd(f)
        assert np.abs(fd.values - symbol * f.values).max() < 1e-10
        # and the symbol sits within the Taylor remainder of -4 pi^2
        assert abs(symbol + 4 * np.pi**2) < (2 * np.pi) ** 4 * h**2 / 12 * 1.01

    @pytest.mark.parametrize("seed", [1, 2])
    def test_agreement_with_spectral_second_order(self, seed):
        # band-limited content below m/4: error bounded by the stencil's
        # fourth-derivative remainder, observed order 2.0 +- 0.1 under m -> 2m
        errs = {}
        for m in (32, 64):
            g = make_grid(3, m, [1, 1, 1])
            ws = SpectralWorkspace(g)
            f = band_field(g, seed, 4)
            diff = laplacian_fd(f).values - laplacian_spectral(f, ws).values
            errs[m] = np.abs(diff).max()
            kmax_phys = 2 * np.pi * 4
            bound = 3 * (g.spacing[0] ** 2 / 12) * kmax_phys**4 * f.sup_norm() * 1.2
            assert errs[m] < bound
        order = np.log2(errs[32] / errs[64])
        assert abs(order - 2.0) < 0.1

    def test_translation_equivariance_bitwise(self, grid16):
        f = band_field(grid16, 9, 3)
        for axis in range(3):
            shifted = ScalarField(grid16, np.roll(f.values, 1, axis=axis))
            a = laplacian_fd(shifted).values
            b = np.roll(laplacian_fd(f).values, 1, axis=axis)
            assert np.array_equal(a, b)


class TestGradInner:
    def test_single_mode_identity(self, grid32):
        ws = SpectralWorkspace(grid32)
        f = field_from_fn(grid32, lambda x, y, z: np.cos(2 * np.pi * x))
        gi = grad_inner(f, f, ws)
        expected = (2 * np.pi) ** 2 * np.sin(
            2 * np.pi * grid32.axes()[0]
        ).reshape(-1, 1, 1) ** 2 * np.ones(grid32.shape)
        assert np.abs(gi.values - expected).max() < 1e-9

    def test_constant_gives_zero(self, grid16):
        ws = SpectralWorkspace(grid16)
        f = ScalarField(grid16, np.full(grid16.shape, 4.0))
        g = band_field(grid16, 3, 3)
        assert np.abs(grad_inner(f, g, ws).values).max() < 1e-12

    def test_orthogonal_gradients(self, grid32):
        ws = SpectralWorkspace(grid32)
        f = field_from_fn(grid32, lambda x, y, z: np.cos(2 * np.pi * x))
        g = field_from_fn(grid32, lambda x, y, z: np.cos(2 * np.pi * y))
        assert np.abs(grad_inner(f, g, ws).values).max() < 1e-9


class TestIntegrate:
    def test_unit_volume(self, grid32):
        f = ScalarField(grid32, np.ones(grid32.shape))
        assert integrate(f) == 1.0

    def test_zero_mean_mode(self, grid32):
        f = field_from_fn(grid32, lambda x, y, z: np.cos(2 * np.pi * x))
        assert abs(integrate(f)) < 1e-14

    def test_squared_cosine_oracle(self, grid32):
        # (1 + 0.5 cos)^2 integrates to 1 + 0.25/2 = 1.125 (cross term drops)
        f = field_from_fn(grid32, lambda x, y, z: (1 + 0.5 * np.cos(2 * np.pi * x)) ** 2)
        assert abs(integrate(f) - 1.125) < 1e-13

    def test_weight_grid_mismatch(self, grid16, grid32):
        f = ScalarField(grid16, np.ones(grid16.shape))
        w = ScalarField(grid32, np.ones(grid32.shape))
        with pytest.raises(GridMismatchError):
            integrate(f, w)


class TestOperatorInvariants:
    @settings(max_examples=10, deadline=None)
    @given(seed=seeds)
    def test_integration_by_parts(self, grid16, seed):
        ws = SpectralWorkspace(grid16)
        f = band_field(grid16, seed, 3)
        g = band_field(grid16, seed + 77, 3)
        lhs = integrate(laplacian_spectral(f, ws), g)
        rhs = -integrate(grad_inner(f, g, ws))
        scale = max(abs(lhs), abs(rhs), 1e-30)
        assert abs(lhs - rhs) / scale < 1e-9

    @settings(max_examples=8, deadline=None)
    @given(seed=seeds, axis=st.integers(0, 2))
    def test_spectral_translation_equivariance(self, grid16, seed, axis):
        ws = SpectralWorkspace(grid16)
        f = band_field(grid16, seed, 3)
        shifted = ScalarField(grid16, np.roll(f.values, 1, axis=axis))
        a = laplacian_spectral(shifted, ws).values
        b = np.roll(laplacian_spectral(f, ws).values, 1, axis=axis)
        assert np.abs(a - b).max() <= 1e-12 * max(np.abs(b).max(), 1.0)

    def test_4d_operators(self, grid8_4d):
        ws = SpectralWorkspace(grid8_4d)
        f = field_from_fn(grid8_4d, lambda x, y, z, w: np.cos(2 * np.pi * (x + w)))
        lap = laplacian_spectral(f, ws)
        assert np.abs(lap.values + 2 * (2 * np.pi) ** 2 * f.values).max() < 1e-10
        fd = laplacian_fd(f)
        taylor = 2 * (2 * np.pi) ** 4 * grid8_4d.spacing[0] ** 2 / 12
        assert np.abs(fd.values - lap.values).max() < taylor * 1.05
