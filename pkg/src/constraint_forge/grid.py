"""Periodic uniform grids on flat n-tori with Fourier-spectral calculus.

Every field is sampled on a uniform lattice over [0, period)^n carrying the
identity background metric, so background covariant derivatives reduce to
coordinate partials, and those are taken in Fourier space.  The Nyquist
column of the derivative multiplier is zeroed on every axis; with that
convention the discrete derivative matrix is exactly antisymmetric for the
lattice inner product, which turns summation by parts (and every adjoint
pairing built on it) into an identity up to rounding instead of a
discretization statement.

Array layout convention used across the package: the trailing ``n`` axes of
an array are grid axes, leading axes (if any) enumerate tensor components.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

#: rank descriptors understood by :meth:`Grid.band_limited_random` and the
#: field file format; "sym2" is accepted as an alias for either variance.
RANK_DESCRIPTORS = ("scalar", "vector", "covector", "sym2", "sym2cov", "sym2con")


@dataclass(frozen=True)
class GridSpec:
    """Lattice and background-data configuration.

    ``tau`` is the trace parameter of the reference extrinsic curvature,
    ``kappa`` the model curvature constant (zero on a flat torus), and
    ``lam`` the cosmological constant.  When ``lam`` is left unset it is
    normalized to ``n (n-1) (tau^2 + kappa) / 2`` so the reference data
    solve the constraints.
    """

    n: int
    points_per_axis: int
    period: float = TWO_PI
    tau: float = 0.0
    kappa: float = 0.0
    lam: float | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"need spatial dimension n >= 3, got {self.n}")
        if self.points_per_axis < 4:
            raise ValueError("need at least 4 points per axis")
        if self.points_per_axis % 2 != 0:
            raise ValueError("points_per_axis must be even (real-FFT symmetry)")
        if not self.period > 0:
            raise ValueError("period must be positive")
        if self.lam is None:
            lam = 0.5 * self.n * (self.n - 1) * (self.tau ** 2 + self.kappa)
            object.__setattr__(self, "lam", float(lam))


def multi_indices(n: int, k: int):
    """All derivative multi-indices of order <= k, as sorted axis tuples."""
    if k < 0:
        raise ValueError("Sobolev order k must be >= 0")
    for order in range(k + 1):
        yield from itertools.combinations_with_replacement(range(n), order)


class Grid:
    """Uniform periodic lattice with spectral differentiation and quadrature."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        n, p = spec.n, spec.points_per_axis
        self.shape = (p,) * n
        self.total_points = p ** n
        self.cell_volume = (spec.period / p) ** n
        self.volume = spec.period ** n

        # integer mode numbers and physical wavenumbers per axis
        k_int = np.rint(np.fft.fftfreq(p) * p).astype(int)
        k_phys = (TWO_PI / spec.period) * k_int.astype(float)
        k_deriv = k_phys.copy()
        k_deriv[p // 2] = 0.0  # Nyquist zeroed: exact antisymmetry of d/dx
        self.int_freqs = k_int
        self.wavenumbers = k_phys
        self._ik = [
            (1j * k_deriv).reshape(tuple(p if a == axis else 1 for a in range(n)))
            for axis in range(n)
        ]
        # |k|^2 with the derivative convention (Nyquist excluded), full shape
        self.k_squared = sum(
            (k_deriv.reshape(tuple(p if a == axis else 1 for a in range(n)))) ** 2
            for axis in range(n)
        )
        # |k|^2 with the Nyquist mode kept, for constant-coefficient symbols
        self.k_squared_full = sum(
            (k_phys.reshape(tuple(p if a == axis else 1 for a in range(n)))) ** 2
            for axis in range(n)
        )

        # broadcastable coordinate arrays x[a]
        x1 = spec.period * np.arange(p) / p
        self.x = [
            x1.reshape(tuple(p if a == axis else 1 for a in range(n)))
            for axis in range(n)
        ]

    # ------------------------------------------------------------------ calculus

    def derivative(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Spectral partial derivative along grid axis ``axis``.

        Works componentwise on tensor fields (leading axes pass through)
        and is exact for fields band-limited below Nyquist.  Complex input
        stays complex; real input comes back real.
        """
        n = self.spec.n
        if not 0 <= axis < n:
            raise ValueError(f"axis {axis} out of range for n={n}")
        ax = f.ndim - n + axis
        spectrum = np.fft.fft(f, axis=ax)
        spectrum *= np.reshape(self._ik[axis], self._ik[axis].shape)
        out = np.fft.ifft(spectrum, axis=ax)
        return out.real if np.isrealobj(f) else out

    def multi_derivative(self, f: np.ndarray, alpha) -> np.ndarray:
        """Iterated derivative along the axis tuple ``alpha``."""
        out = f
        for axis in alpha:
            out = self.derivative(out, axis)
        return out

    def grad_stack(self, f: np.ndarray) -> np.ndarray:
        """All first derivatives, stacked on a new leading axis."""
        return np.stack([self.derivative(f, a) for a in range(self.spec.n)])

    def integrate(self, f: np.ndarray) -> float:
        """Lattice quadrature of a scalar density field.

        Exact for trigonometric polynomials below Nyquist.
        """
        if f.shape != self.shape:
            raise ValueError(f"expected a scalar field of shape {self.shape}")
        return float(np.sum(f) * self.cell_volume) if np.isrealobj(f) else complex(
            np.sum(f) * self.cell_volume
        )

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Lattice L2 pairing; tensor components contracted pairwise."""
        return float(np.sum(u * v) * self.cell_volume)

    def l2_norm(self, u: np.ndarray) -> float:
        """L2 norm measured in the identity background metric."""
        return math.sqrt(float(np.sum(np.abs(u) ** 2)) * self.cell_volume)

    def max_norm(self, u: np.ndarray) -> float:
        return float(np.max(np.abs(u))) if u.size else 0.0

    def sobolev_norm(self, u: np.ndarray, k: int) -> float:
        """Discrete H^k norm: sum of L2 norms over multi-indices |alpha| <= k.

        The sum runs over derivative multisets, matching the multi-index
        definition of the norm, so constants in estimate checks compare
        across grid sizes.
        """
        total = 0.0
        for alpha in multi_indices(self.spec.n, k):
            total += self.l2_norm(self.multi_derivative(u, alpha))
        return total

    def mean(self, f: np.ndarray) -> float:
        return float(np.mean(f))

    def zero_mean(self, f: np.ndarray) -> np.ndarray:
        """Remove the per-component lattice average."""
        n = self.spec.n
        axes = tuple(range(f.ndim - n, f.ndim))
        return f - f.mean(axis=axes, keepdims=True)

    # ------------------------------------------------------------ random fields

    def _band_mask(self, band: int) -> np.ndarray:
        n, p = self.spec.n, self.spec.points_per_axis
        keep = np.abs(self.int_freqs) <= band
        mask = np.ones(self.shape, dtype=bool)
        for axis in range(n):
            mask &= keep.reshape(tuple(p if a == axis else 1 for a in range(n)))
        return mask

    def _band_limited_scalar(self, rng: np.random.Generator, band: int) -> np.ndarray:
        raw = rng.standard_normal(self.shape)
        spectrum = np.fft.fftn(raw)
        spectrum[~self._band_mask(band)] = 0.0
        return np.fft.ifftn(spectrum).real

    def band_limited_random(self, seed: int, band: int, shape: str) -> np.ndarray:
        """Deterministic pseudorandom field with modes limited to |k|_inf <= band.

        ``shape`` is a rank descriptor from :data:`RANK_DESCRIPTORS`.
        Symmetric rank-2 output is generated from its upper triangle so the
        symmetry is exact.  Same seed, same bits.
        """
        if band > self.spec.points_per_axis // 4:
            raise ValueError(
                f"band {band} too large: need band <= points_per_axis/4 = "
                f"{self.spec.points_per_axis // 4} to keep quadratic products alias-free"
            )
        if shape not in RANK_DESCRIPTORS:
            raise ValueError(f"unknown rank descriptor {shape!r}")
        n = self.spec.n
        rng = np.random.default_rng(seed)
        if shape == "scalar":
            return self._band_limited_scalar(rng, band)
        if shape in ("vector", "covector"):
            return np.stack([self._band_limited_scalar(rng, band) for _ in range(n)])
        out = np.zeros((n, n) + self.shape)
        for i in range(n):
            for j in range(i, n):
                comp = self._band_limited_scalar(rng, band)
                out[i, j] = comp
                out[j, i] = comp
        return out

    def spectral_tail(self, f: np.ndarray, band: int) -> float:
        """Largest Fourier coefficient magnitude outside the band (scalar field)."""
        spectrum = np.fft.fftn(f, axes=tuple(range(f.ndim - self.spec.n, f.ndim)))
        mask = self._band_mask(band)
        outside = spectrum[..., ~mask] if f.ndim > self.spec.n else spectrum[~mask]
        return float(np.max(np.abs(outside))) if outside.size else 0.0

    # ----------------------------------------------------------------- plumbing

    def compatible(self, other: "Grid") -> bool:
        return self.spec == other.spec

    def __repr__(self):  # pragma: no cover - debugging aid
        s = self.spec
        return f"Grid(n={s.n}, points={s.points_per_axis}, period={s.period:g})"
