"""Shared fixtures and an independent band-limited field builder.

The builder here deliberately does not reuse the package's generator: grid
operator tests need test fields whose construction is independent of the
code under test.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from torusflow import Background, ConformalMetric, ScalarField, make_grid


def band_field_values(grid, seed, kmax, scale=1.0):
    """Random band-limited field with modes max|k_j| <= kmax (cos and sin)."""
    rng = np.random.default_rng(seed)
    mesh = grid.mesh()
    s = np.zeros(grid.shape)
    zero = (0,) * grid.n
    for k in itertools.product(range(-kmax, kmax + 1), repeat=grid.n):
        if k <= zero:
            continue
        phase = np.zeros(grid.shape)
        for kj, xj, lj in zip(k, mesh, grid.lengths):
            if kj:
                phase = phase + (2.0 * np.pi * kj / lj) * xj
        a, b = rng.standard_normal(2) / (1.0 + sum(kj * kj for kj in k))
        s += a * np.cos(phase) + b * np.sin(phase)
    sup = np.abs(s).max()
    return scale * s / sup if sup > 0 else s


def band_field(grid, seed, kmax, scale=1.0):
    return ScalarField(grid, band_field_values(grid, seed, kmax, scale))


def positive_band_field(grid, seed, kmax, amplitude):
    """exp of a band-limited exponent: strictly positive, detached from the
    package generator."""
    return ScalarField(grid, np.exp(band_field_values(grid, seed, kmax, amplitude)))


@pytest.fixture(scope="session")
def grid16():
    return make_grid(3, 16, [1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def grid32():
    return make_grid(3, 32, [1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def grid8_4d():
    return make_grid(4, 8, [1.0, 1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def flat16(grid16):
    return Background.flat(grid16)


@pytest.fixture(scope="session")
def flat32(grid32):
    return Background.flat(grid32)


def metric(background, values):
    return ConformalMetric(background, ScalarField(background.grid, values))
