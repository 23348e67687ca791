"""The vacuum constraint operator and the scalar-curvature map.

Hamiltonian part, in momentum variables,

    phi0 = (R(g) - 2 lam) sqrt(g) - (|pi|^2_g - (tr_g pi)^2/(n-1)) / sqrt(g),

equivalently in terms of the second fundamental form K,

    phi0 = (R(g) - 2 lam - |K|^2_g + (tr_g K)^2) sqrt(g).

Momentum part,

    phi_i = 2 g_ij nabla_k pi^{jk},

where the divergence of the weight-one momentum density needs a single
connection correction: nabla_k pi^{jk} = d_k pi^{jk} + A^j_kl pi^{kl}.
"""

from __future__ import annotations

import numpy as np

from .curvature import christoffel_delta, scalar_curvature
from .fields import (ConstraintValue, MetricField, PhasePoint, K_from_pi,
                     metric_inverse, sqrt_det, tensor_norm_sq, trace2)


def divergence_density(grid, A: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """nabla_k pi^{jk} for a symmetric contravariant weight-one density."""
    dpi = np.stack([grid.derivative(pi, a) for a in range(grid.spec.n)])
    return np.einsum("kjk...->j...", dpi) + np.einsum("jkl...,kl...->j...", A, pi)


def hamiltonian(p: PhasePoint, lam: float, form: str = "pi") -> np.ndarray:
    """Scalar constraint; ``form`` chooses the momentum or K parametrization.

    The two are algebraically identical and must agree to rounding, which
    the dual-formula acceptance check enforces.
    """
    g, pi = p.g, p.pi
    n = p.grid.spec.n
    sg = sqrt_det(g)
    scal = scalar_curvature(g)
    if form == "pi":
        normsq = tensor_norm_sq(g, pi.comp, "uu")
        trp = trace2(g, pi.comp, "uu")
        return (scal - 2.0 * lam) * sg - (normsq - trp ** 2 / (n - 1)) / sg
    if form == "K":
        K = K_from_pi(g, pi)
        normsq = tensor_norm_sq(g, K, "dd")
        trK = trace2(g, K, "dd")
        return (scal - 2.0 * lam - normsq + trK ** 2) * sg
    raise ValueError(f"unknown form {form!r}, expected 'pi' or 'K'")


def momentum(p: PhasePoint, form: str = "pi") -> np.ndarray:
    """One-form constraint phi_i = 2 g_ij nabla_k pi^{jk}.

    The ``K`` form evaluates 2 (nabla^j K_ij - d_i tr_g K) sqrt(g) instead,
    as an independent route for consistency tests.
    """
    g, pi = p.g, p.pi
    grid = p.grid
    A = christoffel_delta(g).comp
    if form == "pi":
        div = divergence_density(grid, A, pi.comp)
        return 2.0 * np.einsum("ij...,j...->i...", g.comp, div)
    if form == "K":
        ginv = metric_inverse(g)
        sg = sqrt_det(g)
        K = K_from_pi(g, pi)
        dK = np.stack([grid.derivative(K, a) for a in range(grid.spec.n)])
        nablaK = (dK - np.einsum("cai...,cj...->aij...", A, K)
                  - np.einsum("caj...,ic...->aij...", A, K))
        divK = np.einsum("ja...,aij...->i...", ginv, nablaK)
        trK = trace2(g, K, "dd")
        dtrK = grid.grad_stack(trK)
        return 2.0 * (divK - dtrK) * sg
    raise ValueError(f"unknown form {form!r}, expected 'pi' or 'K'")


def phi(p: PhasePoint, lam: float) -> ConstraintValue:
    """Full constraint operator (phi0, phi_i) at a phase point."""
    return ConstraintValue(p.grid, hamiltonian(p, lam), momentum(p))


def scalar_map(g: MetricField, f: np.ndarray) -> np.ndarray:
    """The prescribed-scalar-curvature map (R(g) - 2 f) sqrt(g)."""
    return (scalar_curvature(g) - 2.0 * f) * sqrt_det(g)
