"""Typed field containers and pointwise tensor algebra.

Metrics are covariant symmetric 2-tensors, momenta contravariant symmetric
2-tensor densities carrying one factor of the relative volume element.  On
the flat torus the background metric is the identity, so relative and
absolute densities coincide and index placement only matters against the
evolving metric ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, GridSpec


class NonEllipticMetricError(ValueError):
    """Raised when a metric fails uniform positivity at some lattice point."""

    def __init__(self, message, point=None, value=None):
        super().__init__(message)
        self.point = point
        self.value = value


def _check_rank2(grid: Grid, comp: np.ndarray, what: str) -> np.ndarray:
    n = grid.spec.n
    if comp.shape != (n, n) + grid.shape:
        raise ValueError(f"{what} must have shape {(n, n) + grid.shape}, "
                         f"got {comp.shape}")
    # exact symmetrization; a+b == b+a bitwise, so the result is exactly symmetric
    return 0.5 * (comp + np.swapaxes(comp, 0, 1))


@dataclass
class MetricField:
    """Covariant symmetric rank-2 field, uniformly positive-definite."""

    grid: Grid
    comp: np.ndarray

    def __post_init__(self):
        self.comp = _check_rank2(self.grid, np.asarray(self.comp, float), "metric")

    def ellipticity_bounds(self):
        """Pointwise eigenvalue extremes ``(min, argmin point, max)``."""
        mats = np.moveaxis(np.moveaxis(self.comp, 0, -1), 0, -1)
        eigs = np.linalg.eigvalsh(mats)
        lo = eigs[..., 0]
        idx = np.unravel_index(np.argmin(lo), lo.shape)
        return float(lo[idx]), idx, float(np.max(eigs[..., -1]))

    def ellipticity_constant(self) -> float:
        """Largest lam with lam*id < g < id/lam pointwise; errors if none exists."""
        lo, idx, hi = self.ellipticity_bounds()
        if not lo > 0.0:
            raise NonEllipticMetricError(
                f"metric not positive-definite: eigenvalue {lo:.3e} at grid "
                f"point {idx}", point=idx, value=lo)
        return min(lo, 1.0 / hi)


@dataclass
class MomentumField:
    """Contravariant symmetric rank-2 density (one relative-volume weight)."""

    grid: Grid
    comp: np.ndarray

    def __post_init__(self):
        self.comp = _check_rank2(self.grid, np.asarray(self.comp, float), "momentum")


@dataclass
class PhasePoint:
    """One point (g, pi) of the constraint phase space."""

    g: MetricField
    pi: MomentumField

    def __post_init__(self):
        if self.g.grid.spec != self.pi.grid.spec:
            raise ValueError("metric and momentum live on different grids")

    @property
    def grid(self) -> Grid:
        return self.g.grid

    def shifted(self, dg: np.ndarray, dpi: np.ndarray) -> "PhasePoint":
        """New phase point with components displaced by (dg, dpi)."""
        return PhasePoint(
            MetricField(self.grid, self.g.comp + dg),
            MomentumField(self.grid, self.pi.comp + dpi),
        )


@dataclass
class LapseShift:
    """Scalar lapse N plus shift vector X (n components)."""

    grid: Grid
    N: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        n = self.grid.spec.n
        self.N = np.asarray(self.N, float)
        self.X = np.asarray(self.X, float)
        if self.N.shape != self.grid.shape:
            raise ValueError("lapse must be a scalar field on the grid")
        if self.X.shape != (n,) + self.grid.shape:
            raise ValueError("shift must be a vector field on the grid")


@dataclass
class ConstraintValue:
    """Scalar density (phi0) plus one-form density (phii) pair."""

    grid: Grid
    phi0: np.ndarray
    phii: np.ndarray

    def __post_init__(self):
        n = self.grid.spec.n
        if self.phi0.shape != self.grid.shape:
            raise ValueError("phi0 must be a scalar field on the grid")
        if self.phii.shape != (n,) + self.grid.shape:
            raise ValueError("phii must be a one-form field on the grid")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.phi0[np.newaxis], self.phii])


@dataclass
class Variation:
    """Direction (h, p) tangent to the phase space."""

    grid: Grid
    h: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.h = _check_rank2(self.grid, np.asarray(self.h, float), "variation h")
        self.p = _check_rank2(self.grid, np.asarray(self.p, float), "variation p")


@dataclass
class AdjointValue:
    """KID-operator output: slot_h pairs with h, slot_p pairs with p.

    Component contraction with (h, p) under the lattice inner product
    realizes the L2 pairing of the flat background.
    """

    grid: Grid
    slot_h: np.ndarray
    slot_p: np.ndarray

    def __post_init__(self):
        self.slot_h = _check_rank2(self.grid, self.slot_h, "slot_h")
        self.slot_p = _check_rank2(self.grid, self.slot_p, "slot_p")


# --------------------------------------------------------------- raw algebra

def identity_metric(grid: Grid) -> np.ndarray:
    n = grid.spec.n
    comp = np.zeros((n, n) + grid.shape)
    for i in range(n):
        comp[i, i] = 1.0
    return comp


def metric_inverse(g: MetricField) -> np.ndarray:
    """Pointwise inverse metric g^{ij}; errors on a singular point."""
    g.ellipticity_constant()  # hard error on degenerate input
    mats = np.moveaxis(np.moveaxis(g.comp, 0, -1), 0, -1)
    inv = np.linalg.inv(mats)
    out = np.moveaxis(np.moveaxis(inv, -1, 0), -1, 0)
    return 0.5 * (out + np.swapaxes(out, 0, 1))


def det_rel(g: MetricField) -> np.ndarray:
    """det(g) relative to the identity background."""
    mats = np.moveaxis(np.moveaxis(g.comp, 0, -1), 0, -1)
    return np.linalg.det(mats)


def sqrt_det(g: MetricField) -> np.ndarray:
    """Relative volume factor sqrt(det g / det id) = sqrt(det g)."""
    d = det_rel(g)
    bad = d <= 0.0
    if np.any(bad):
        idx = np.unravel_index(np.argmin(d), d.shape)
        raise NonEllipticMetricError(
            f"non-positive determinant {d[idx]:.3e} at grid point {idx}",
            point=idx, value=float(d[idx]))
    return np.sqrt(d)


def _metrics_for(g: MetricField, variance: str):
    ginv = None
    out = []
    for c in variance:
        if c == "d":
            if ginv is None:
                ginv = metric_inverse(g)
            out.append(ginv)
        elif c == "u":
            out.append(g.comp)
        else:
            raise ValueError(f"variance letters must be 'd' or 'u', got {c!r}")
    return out


def tensor_norm_sq(g: MetricField, T: np.ndarray, variance: str) -> np.ndarray:
    """Pointwise |T|^2_g, every index contracted per its variance.

    ``variance`` holds one letter per index: 'd' for a lower (covariant)
    index, 'u' for an upper one.
    """
    rank = len(variance)
    if T.shape[:rank] != (g.grid.spec.n,) * rank:
        raise ValueError("tensor rank does not match variance string")
    pairs = _metrics_for(g, variance)
    a = [chr(ord("a") + i) for i in range(rank)]
    b = [chr(ord("a") + rank + i) for i in range(rank)]
    terms = ["".join(a) + "...", "".join(b) + "..."]
    terms += [a[i] + b[i] + "..." for i in range(rank)]
    expr = ",".join(terms) + "->..."
    return np.einsum(expr, T, T, *pairs)


def trace2(g: MetricField, T: np.ndarray, variance: str) -> np.ndarray:
    """g-trace of a rank-2 tensor: g^{ij} T_ij, g_ij T^{ij}, or delta for mixed."""
    if variance == "dd":
        return np.einsum("ij...,ij...->...", metric_inverse(g), T)
    if variance == "uu":
        return np.einsum("ij...,ij...->...", g.comp, T)
    if variance in ("ud", "du"):
        return np.einsum("ii...->...", T)
    raise ValueError(f"unknown rank-2 variance {variance!r}")


def sym2_raise(ginv: np.ndarray, T_dd: np.ndarray) -> np.ndarray:
    return np.einsum("ia...,jb...,ab...->ij...", ginv, ginv, T_dd)


def sym2_lower(g_dd: np.ndarray, T_uu: np.ndarray) -> np.ndarray:
    return np.einsum("ia...,jb...,ab...->ij...", g_dd, g_dd, T_uu)


# ------------------------------------------------------- momentum conversions

def pi_from_K(g: MetricField, K: np.ndarray) -> MomentumField:
    """Momentum density pi^{ij} = (K^{ij} - tr_g K g^{ij}) sqrt(g)."""
    ginv = metric_inverse(g)
    sg = sqrt_det(g)
    Kuu = sym2_raise(ginv, K)
    trK = np.einsum("ij...,ij...->...", ginv, K)
    return MomentumField(g.grid, (Kuu - trK * ginv) * sg)


def K_from_pi(g: MetricField, pi: MomentumField) -> np.ndarray:
    """Invert :func:`pi_from_K`; returns the covariant second fundamental form."""
    n = g.grid.spec.n
    ginv = metric_inverse(g)
    sg = sqrt_det(g)
    pihat = pi.comp / sg
    trhat = np.einsum("ij...,ij...->...", g.comp, pihat)
    Kuu = pihat - trhat / (n - 1) * ginv
    return sym2_lower(g.comp, Kuu)


def background(spec: GridSpec) -> PhasePoint:
    """Reference phase point: identity metric with momentum tau (1-n) id.

    The companion cosmological constant is ``spec.lam``; with the default
    normalization the constraints vanish identically on this point.
    """
    grid = Grid(spec)
    g = MetricField(grid, identity_metric(grid))
    pi = MomentumField(grid, spec.tau * (1 - spec.n) * identity_metric(grid))
    return PhasePoint(g, pi)


def perturbed_background(spec: GridSpec, amplitude: float, band: int,
                         seed: int) -> PhasePoint:
    """Background plus a band-limited random displacement of both components."""
    p = background(spec)
    grid = p.grid
    dg = grid.band_limited_random(seed, band, "sym2cov")
    dpi = grid.band_limited_random(seed + 1, band, "sym2con")

    def unit(f):
        m = np.max(np.abs(f))
        return f / m if m > 0 else f

    return p.shifted(amplitude * unit(dg), amplitude * unit(dpi))
