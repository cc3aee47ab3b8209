"""Periodic lattices, scalar fields, and discrete calculus on flat n-tori.

The spatial model is a uniform tensor-product lattice on
[0, L_1) x ... x [0, L_n) with periodic wraparound.  Differential operators
come in two independent flavors:

* trigonometric (pseudo-spectral) differentiation, exact for the
  trigonometric interpolant of the sampled field, and
* second-order centered finite differences, kept deliberately separate so
  the two paths can cross-check each other.

Grids are restricted to dimensions 3 and 4 (the conformal exponents
4/(n-2), (n+2)/(n-2), ... are then integers) and to power-of-two points per
axis, which keeps transform sizes predictable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as _fft

__all__ = [
    "GridMismatchError",
    "PeriodicGrid",
    "ScalarField",
    "SpectralWorkspace",
    "make_grid",
    "field_from_fn",
    "laplacian_spectral",
    "laplacian_fd",
    "grad_inner",
    "integrate",
]

# Hard cap on addressable field size (~1 GiB of float64).
MAX_POINTS = 2**27


class GridMismatchError(ValueError):
    """An operation mixed fields (or a workspace) from different grids."""


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic lattice on an n-torus with per-axis side lengths."""

    n: int
    m: int
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.n <= 2:
            raise ValueError("dimension must satisfy n > 2")
        if self.n > 4:
            raise ValueError(f"dimension must be at most 4, got n = {self.n}")
        if self.m < 8 or (self.m & (self.m - 1)) != 0:
            raise ValueError(f"points per axis must be a power of two >= 8, got m = {self.m}")
        lengths = tuple(float(L) for L in self.lengths)
        if len(lengths) != self.n:
            raise ValueError(f"expected {self.n} side lengths, got {len(lengths)}")
        if any(not np.isfinite(L) or L <= 0.0 for L in lengths):
            raise ValueError(f"side lengths must be positive and finite, got {lengths}")
        if self.m**self.n > MAX_POINTS:
            raise ValueError(f"grid too large: m**n = {self.m**self.n} exceeds {MAX_POINTS}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.n

    @property
    def size(self) -> int:
        return self.m**self.n

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / self.m for L in self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axes(self) -> list[np.ndarray]:
        """1-D coordinate arrays, one per axis; points at k * L/m."""
        return [np.arange(self.m) * h for h in self.spacing]

    def mesh(self) -> list[np.ndarray]:
        """Sparse (broadcastable) coordinate mesh in ij indexing."""
        return list(np.meshgrid(*self.axes(), indexing="ij", sparse=True))


def make_grid(n: int, m: int, lengths: Sequence[float]) -> PeriodicGrid:
    """Build a periodic grid; rejects n outside {3, 4} and non-power-of-two m."""
    return PeriodicGrid(int(n), int(m), tuple(float(L) for L in lengths))


def _first_nonfinite_index(values: np.ndarray) -> tuple[int, ...]:
    flat_ok = np.isfinite(values).ravel()
    pos = int(np.argmin(flat_ok))  # first False
    return tuple(int(i) for i in np.unravel_index(pos, values.shape))


@dataclass(frozen=True)
class ScalarField:
    """Real scalar function sampled on a PeriodicGrid.

    Values are stored C-ordered with shape (m,)*n (a flat array of length
    m**n in row-major axis order is accepted and reshaped).  The array is
    copied and frozen read-only, and every entry must be finite.
    """

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size != self.grid.size:
            raise ValueError(
                f"field has {vals.size} values, grid needs m**n = {self.grid.size}"
            )
        vals = vals.reshape(self.grid.shape)
        # An already-frozen contiguous array is immutable and can be adopted
        # as-is; anything else gets copied so later caller writes cannot leak in.
        if vals.flags.writeable or not vals.flags.c_contiguous:
            vals = np.array(vals, order="C")
            vals.setflags(write=False)
        if not np.isfinite(vals).all():
            idx = _first_nonfinite_index(vals)
            raise ValueError(f"non-finite field value {vals[idx]!r} at grid index {idx}")
        object.__setattr__(self, "values", vals)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


def field_from_fn(grid: PeriodicGrid, f: Callable[..., np.ndarray]) -> ScalarField:
    """Sample a pointwise function of the coordinates onto the lattice.

    ``f`` receives one (broadcastable) coordinate array per axis and must
    evaluate elementwise, numpy-ufunc style.  A non-finite sample raises,
    naming the offending index.
    """
    with np.errstate(all="ignore"):
        raw = np.asarray(f(*grid.mesh()), dtype=np.float64)
    vals = np.broadcast_to(raw, grid.shape)
    return ScalarField(grid, vals)


class SpectralWorkspace:
    """Precomputed Fourier multipliers for one grid.

    Holds the wavenumber arrays used by the trigonometric derivatives: the
    Laplacian multiplier -|k|^2 per retained rfft mode (exactly 0 at the
    zero mode, real and non-positive elsewhere) and per-axis first-derivative
    multipliers i*k with the Nyquist mode zeroed, the standard convention
    that keeps odd derivatives of real data real.  The arrays are frozen at
    construction; transform scratch is managed by the FFT backend, so a
    workspace is safe to share between concurrent reads.
    """

    def __init__(self, grid: PeriodicGrid):
        self.grid = grid
        m, n = grid.m, grid.n
        axes_k = []
        for j in range(n):
            if j < n - 1:
                k = 2.0 * np.pi * np.fft.fftfreq(m, d=grid.spacing[j])
            else:
                k = 2.0 * np.pi * np.fft.rfftfreq(m, d=grid.spacing[j])
            shape = [1] * n
            shape[j] = k.size
            axes_k.append(k.reshape(shape))

        minus_k2 = np.zeros(tuple(a.size for a in axes_k))
        for k in axes_k:
            minus_k2 = minus_k2 - k * k
        minus_k2.setflags(write=False)
        self.minus_k2 = minus_k2

        ik = []
        for j, k in enumerate(axes_k):
            kg = k.copy()
            # Zero the Nyquist mode for first derivatives.
            nyq = m // 2
            sl = [slice(None)] * n
            sl[j] = nyq if j < n - 1 else -1
            kg[tuple(sl)] = 0.0
            mult = 1j * kg
            mult.setflags(write=False)
            ik.append(mult)
        self.ik = ik

    def _check(self, values: np.ndarray):
        if values.shape != self.grid.shape:
            raise GridMismatchError(
                f"field shape {values.shape} does not match workspace grid {self.grid.shape}"
            )

    def laplacian_values(self, values: np.ndarray) -> np.ndarray:
        self._check(values)
        fh = _fft.rfftn(values)
        fh *= self.minus_k2
        return _fft.irfftn(fh, s=self.grid.shape)

    def gradient_values(self, values: np.ndarray) -> list[np.ndarray]:
        self._check(values)
        fh = _fft.rfftn(values)
        return [_fft.irfftn(fh * ikj, s=self.grid.shape) for ikj in self.ik]

    def laplacian_and_gradient_values(
        self, values: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Both operators from a single forward transform."""
        self._check(values)
        fh = _fft.rfftn(values)
        lap = _fft.irfftn(fh * self.minus_k2, s=self.grid.shape)
        grad = [_fft.irfftn(fh * ikj, s=self.grid.shape) for ikj in self.ik]
        return lap, grad


def _same_grid(f: ScalarField, g: ScalarField):
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")


def laplacian_spectral(f: ScalarField, ws: SpectralWorkspace) -> ScalarField:
    """Euclidean Laplacian of the trigonometric interpolant of ``f``."""
    if f.grid != ws.grid:
        raise GridMismatchError("field and workspace grids differ")
    return ScalarField(f.grid, ws.laplacian_values(f.values))


def fd_laplacian_values(values: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """2n-point second-order centered stencil with periodic wraparound."""
    out = np.zeros_like(values)
    for j, h in enumerate(grid.spacing):
        out += (np.roll(values, -1, axis=j) - 2.0 * values + np.roll(values, 1, axis=j)) / (
            h * h
        )
    return out


def fd_gradient_values(values: np.ndarray, grid: PeriodicGrid) -> list[np.ndarray]:
    """Centered first differences, periodic."""
    return [
        (np.roll(values, -1, axis=j) - np.roll(values, 1, axis=j)) / (2.0 * h)
        for j, h in enumerate(grid.spacing)
    ]


def laplacian_fd(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, fd_laplacian_values(f.values, f.grid))


def grad_inner(f: ScalarField, g: ScalarField, ws: SpectralWorkspace) -> ScalarField:
    """Pointwise Euclidean inner product of the spectral gradients of f and g."""
    _same_grid(f, g)
    if f.grid != ws.grid:
        raise GridMismatchError("field and workspace grids differ")
    gf = ws.gradient_values(f.values)
    gg = ws.gradient_values(g.values)
    acc = gf[0] * gg[0]
    for a, b in zip(gf[1:], gg[1:]):
        acc += a * b
    return ScalarField(f.grid, acc)


def integrate(f: ScalarField, weight: ScalarField | None = None) -> float:
    """Integral over the torus: mean(values * weight) * prod(L_k).

    Exact for band-limited integrands below the Nyquist frequency.  The mean
    uses the array library's pairwise reduction, so the result is
    deterministic for a fixed shape.
    """
    if weight is None:
        total = np.mean(f.values)
    else:
        _same_grid(f, weight)
        total = np.mean(f.values * weight.values)
    return float(total * f.grid.volume)
