"""Conformal-geometry formulas over flat and conformally-flat torus backgrounds.

Metrics are carried by positive factor fields.  The background h is either
the flat metric on the torus or v**(4/(n-2)) * g_euc for a positive field v,
and the working metric is g = u**(4/(n-2)) h.  Writing

    kappa = 4/(n-2),   N = (n+2)/(n-2),   c_n = 4(n-1)/(n-2)

(all integers for n in {3, 4}), the scalar curvature transforms as

    R_g = u**(-N) * (R_h * u - c_n * Lap_h u),

the background Laplacian chains through

    Lap_h f = v**(-kappa) * (Lap f + 2 grad(log v) . grad f),

and the h-volume element is dmu_h = v**(2n/(n-2)) dx.  Gradients of
logarithms are always formed as grad(v)/v so the only differentiated fields
are the factors themselves.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .grid import PeriodicGrid, ScalarField, SpectralWorkspace, GridMismatchError

__all__ = [
    "PositivityError",
    "BackgroundMismatchError",
    "Background",
    "ConformalMetric",
    "ipow",
    "scalar_curvature",
    "conformal_laplacian",
    "volume",
    "lp_norm",
    "log_mean_field",
    "moser_product",
    "diameter_estimate",
    "metric_lp_distance",
]


class PositivityError(ValueError):
    """A conformal factor failed to be strictly positive."""


class BackgroundMismatchError(ValueError):
    """Two conformal metrics do not share the same background."""


def exponent(numerator: int, n: int) -> int:
    """Integer value of numerator/(n-2); exact for n in {3, 4}."""
    q, r = divmod(numerator, n - 2)
    if r != 0:
        raise ValueError(f"{numerator}/(n-2) is not an integer for n = {n}")
    return q


def ipow(values: np.ndarray, k: int) -> np.ndarray:
    """Integer power by repeated squaring (multiplies and one reciprocal).

    Much cheaper than transcendental pow in the stepping loop, and exact
    under scaling of the base by powers of two.
    """
    if k == 0:
        return np.ones_like(values)
    e = -k if k < 0 else k
    out = None
    base = values
    while True:
        if e & 1:
            out = base if out is None else out * base
        e >>= 1
        if not e:
            break
        base = base * base
    return 1.0 / out if k < 0 else out


def _check_positive(values: np.ndarray, what: str):
    mn = float(values.min())
    if not mn > 0.0:
        idx = tuple(int(i) for i in np.unravel_index(int(values.argmin()), values.shape))
        raise PositivityError(f"{what} must be positive everywhere; min {mn!r} at {idx}")


class Background:
    """Reference metric h: flat, or conformally flat via a positive factor v.

    Caches the scalar curvature R_h, the h-volume, the h-measure weight and
    the gradient of log v, all of which every downstream formula reuses.
    Instances are immutable after construction.
    """

    def __init__(self, kind: str, grid: PeriodicGrid, v: ScalarField | None):
        if kind not in ("flat", "conformally_flat"):
            raise ValueError(f"unknown background kind {kind!r}")
        self.kind = kind
        self.grid = grid
        self.v = v
        self.workspace = SpectralWorkspace(grid)
        n = grid.n
        kap = exponent(4, n)
        big_n = exponent(n + 2, n)
        c_n = 4 * (n - 1) // (n - 2)

        if kind == "flat":
            if v is not None:
                raise ValueError("flat background takes no factor field")
            self.r_h = ScalarField(grid, np.zeros(grid.shape))
            self.vol_h = grid.volume
            self._v_neg_kappa = None
            self._grad_log_v = None
            self._weight_h = None
        else:
            if v is None:
                raise ValueError("conformally_flat background requires a factor field")
            if v.grid != grid:
                raise GridMismatchError("factor field grid does not match background grid")
            _check_positive(v.values, "background factor v")
            lap_v, grad_v = self.workspace.laplacian_and_gradient_values(v.values)
            r_h_vals = ipow(v.values, -big_n) * (-c_n * lap_v)
            self.r_h = ScalarField(grid, r_h_vals)
            self._weight_h = ipow(v.values, exponent(2 * n, n))
            self.vol_h = float(np.mean(self._weight_h) * grid.volume)
            self._v_neg_kappa = ipow(v.values, -kap)
            self._grad_log_v = [g / v.values for g in grad_v]

    @classmethod
    def flat(cls, grid: PeriodicGrid) -> "Background":
        return cls("flat", grid, None)

    @classmethod
    def conformally_flat(cls, v: ScalarField) -> "Background":
        return cls("conformally_flat", v.grid, v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Background):
            return NotImplemented
        if self.kind != other.kind or self.grid != other.grid:
            return False
        if self.v is None:
            return other.v is None
        return other.v is not None and np.array_equal(self.v.values, other.v.values)

    def __hash__(self):
        return hash((self.kind, self.grid))

    # -- measure and operators with respect to h ---------------------------

    def integrate_h(self, values: np.ndarray) -> float:
        """Integral against dmu_h."""
        if self._weight_h is None:
            return float(np.mean(values) * self.grid.volume)
        return float(np.mean(values * self._weight_h) * self.grid.volume)

    def measure_weight(self) -> np.ndarray | None:
        """dmu_h / dx as an array, or None for the flat (unit) weight."""
        return self._weight_h

    def laplacian_h_values(self, values: np.ndarray) -> np.ndarray:
        """Laplace-Beltrami operator of h applied to a sampled function."""
        if self.kind == "flat":
            return self.workspace.laplacian_values(values)
        lap, grad = self.workspace.laplacian_and_gradient_values(values)
        inner = self._grad_log_v[0] * grad[0]
        for glv, gf in zip(self._grad_log_v[1:], grad[1:]):
            inner += glv * gf
        return self._v_neg_kappa * (lap + 2.0 * inner)


@dataclass(frozen=True)
class ConformalMetric:
    """g = u**(4/(n-2)) h for a strictly positive factor u over background h."""

    background: Background
    u: ScalarField

    def __post_init__(self):
        if self.u.grid != self.background.grid:
            raise GridMismatchError("conformal factor grid does not match background grid")
        _check_positive(self.u.values, "conformal factor u")

    @property
    def grid(self) -> PeriodicGrid:
        return self.background.grid

    @property
    def n(self) -> int:
        return self.background.grid.n

    def composite_values(self) -> np.ndarray:
        """Factor of g relative to the Euclidean metric: u (flat h) or u*v."""
        if self.background.v is None:
            return self.u.values
        return self.u.values * self.background.v.values


def scalar_curvature_values(background: Background, u_values: np.ndarray) -> np.ndarray:
    """Array-level R_g = u**(-N) * (R_h u - c_n Lap_h u)."""
    n = background.grid.n
    c_n = 4 * (n - 1) // (n - 2)
    big_n = exponent(n + 2, n)
    lap_h_u = background.laplacian_h_values(u_values)
    if background.kind == "flat":
        core = -float(c_n) * lap_h_u
    else:
        core = background.r_h.values * u_values - float(c_n) * lap_h_u
    return ipow(u_values, -big_n) * core


def scalar_curvature(cm: ConformalMetric) -> ScalarField:
    """Scalar curvature of g = u**(4/(n-2)) h."""
    return ScalarField(cm.grid, scalar_curvature_values(cm.background, cm.u.values))


def conformal_laplacian(cm: ConformalMetric, f: ScalarField) -> ScalarField:
    """Laplace-Beltrami operator of g:

    Lap_g f = u**(-kappa) * (Lap_h f + 2 grad_h(log u) .h grad_h f).

    Linear in f and annihilates constants.
    """
    if f.grid != cm.grid:
        raise GridMismatchError("field grid does not match metric grid")
    bg = cm.background
    n = cm.n
    kap = exponent(4, n)
    u = cm.u.values
    lap, grad = bg.workspace.laplacian_and_gradient_values(f.values)
    # gradient of log(u) formed as grad(u)/u; log(v) term from the background cache
    grad_u = bg.workspace.gradient_values(u)
    inner_u = grad_u[0] / u * grad[0]
    for gu, gf in zip(grad_u[1:], grad[1:]):
        inner_u += gu / u * gf
    if bg.kind == "flat":
        out = ipow(u, -kap) * (lap + 2.0 * inner_u)
    else:
        glv = bg._grad_log_v
        inner_v = glv[0] * grad[0]
        for gv, gf in zip(glv[1:], grad[1:]):
            inner_v += gv * gf
        out = ipow(u, -kap) * (bg._v_neg_kappa * (lap + 2.0 * (inner_v + inner_u)))
    return ScalarField(cm.grid, out)


def volume_weight_values(cm: ConformalMetric) -> np.ndarray:
    """dmu_g / dmu_h = u**(2n/(n-2)) as an array."""
    return ipow(cm.u.values, exponent(2 * cm.n, cm.n))


def volume(cm: ConformalMetric) -> float:
    """Vol(M, g) = integral of u**(2n/(n-2)) against dmu_h."""
    return cm.background.integrate_h(volume_weight_values(cm))


def lp_norm(cm: ConformalMetric, f: ScalarField, p: float, measure: str = "h") -> float:
    """(integral |f|^p dmu)^(1/p) for measure 'h' or 'g'."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    if f.grid != cm.grid:
        raise GridMismatchError("field grid does not match metric grid")
    if measure not in ("h", "g"):
        raise ValueError(f"measure must be 'h' or 'g', got {measure!r}")
    integrand = np.abs(f.values) ** p
    if measure == "g":
        integrand = integrand * volume_weight_values(cm)
    return float(cm.background.integrate_h(integrand) ** (1.0 / p))


def log_mean_field(cm: ConformalMetric) -> ScalarField:
    """log u recentered to zero h-mean: w = log u - (1/Vol_h) int log u dmu_h."""
    logu = np.log(cm.u.values)
    mean = cm.background.integrate_h(logu) / cm.background.vol_h
    return ScalarField(cm.grid, logu - mean)


def moser_product(cm: ConformalMetric, eps: float = 0.5) -> float:
    """(int u**eps dmu_h) * (int u**(-eps) dmu_h).

    Bounded below by vol_h**2 (Jensen), with equality exactly at constant u.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    bg = cm.background
    up = np.power(cm.u.values, eps)
    return float(bg.integrate_h(up) * bg.integrate_h(1.0 / up))


def _half_offsets(n: int) -> list[tuple[int, ...]]:
    """One representative per +-pair of the 3**n - 1 neighbor stencil."""
    zero = (0,) * n
    return [d for d in itertools.product((-1, 0, 1), repeat=n) if d > zero]


def _diameter_sources(grid: PeriodicGrid) -> np.ndarray:
    """Flat indices of up to 8 well-separated source points (half-period corners)."""
    corners = list(itertools.product((0, grid.m // 2), repeat=grid.n))[:8]
    strides = np.array([grid.m ** (grid.n - 1 - j) for j in range(grid.n)])
    return np.array([int(np.dot(c, strides)) for c in corners])


def diameter_estimate(cm: ConformalMetric) -> float:
    """Shortest-path diameter estimate of (M, g) on the lattice graph.

    Edges connect each point to its 3**n - 1 neighbors; an edge weighs the
    Euclidean step length times the conformal stretch (u*v)**(2/(n-2))
    averaged over its two endpoints (the midpoint is not a lattice site).
    Returns the max graph distance from a fixed set of up to 8 half-period
    corner sources: an estimate biased slightly high by stencil anisotropy,
    not the exact diameter.
    """
    grid = cm.grid
    stretch = ipow(cm.composite_values(), exponent(2, cm.n))
    size = grid.size
    idx = np.arange(size).reshape(grid.shape)
    rows, cols, data = [], [], []
    all_axes = tuple(range(grid.n))
    for d in _half_offsets(grid.n):
        step_len = float(np.sqrt(sum((dj * h) ** 2 for dj, h in zip(d, grid.spacing))))
        shift = tuple(-dj for dj in d)
        neighbor = np.roll(idx, shift=shift, axis=all_axes)
        w = 0.5 * (stretch + np.roll(stretch, shift=shift, axis=all_axes)) * step_len
        rows.append(idx.ravel())
        cols.append(neighbor.ravel())
        data.append(w.ravel())
    graph = coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    ).tocsr()
    dist = dijkstra(graph, directed=False, indices=_diameter_sources(grid))
    return float(dist.max())


def metric_lp_distance(cm1: ConformalMetric, cm2: ConformalMetric, p: float) -> float:
    """(int |g1 - g2|_h^p dmu_h)^(1/p) over a common background.

    For conformal metrics g_i = u_i**(4/(n-2)) h the pointwise norm has the
    closed form |g1 - g2|_h = sqrt(n) * |u1**(4/(n-2)) - u2**(4/(n-2))|.
    """
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    if cm1.background != cm2.background:
        raise BackgroundMismatchError("metrics live over different backgrounds")
    n = cm1.n
    kap = exponent(4, n)
    diff = np.sqrt(n) * np.abs(ipow(cm1.u.values, kap) - ipow(cm2.u.values, kap))
    return float(cm1.background.integrate_h(diff**p) ** (1.0 / p))
