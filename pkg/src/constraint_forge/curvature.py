"""Curvature of a torus metric through Christoffel differences.

With the identity background metric, Christoffel symbols of ``g`` equal the
difference tensor

    A^k_ij = (1/2) g^{kl} (d_i g_jl + d_j g_il - d_l g_ij),

and the Ricci tensor is assembled from derivatives and quadratics of ``A``
alone,

    Ric(g)_jk = d_i A^i_jk - d_j A^i_ik + A^m_jk A^i_im - A^i_jm A^m_ki,

so every derivative taken is a flat spectral derivative.  The scalar
curvature is evaluated through a second, independent grouping that isolates
the second-derivative part of the metric,

    R(g) = g^{ik} g^{jl} (d2_ij g_kl - d2_ik g_jl) + Q(g^{-1}, dg),

with Q collecting the quadratic first-derivative terms; the trace of the
Ricci route serves as an internal oracle for this formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (MetricField, MomentumField, metric_inverse, sqrt_det,
                     det_rel, sym2_raise)


@dataclass
class ChristoffelDelta:
    """Difference tensor A^k_ij, indexed ``comp[k, i, j]``, symmetric in (i, j)."""

    comp: np.ndarray


@dataclass
class CurvaturePack:
    """Ricci, scalar curvature, and the two rank-2 tensors of the linearized
    constraints: E^{ij} = R^{ij} - (R - 2 lam) g^{ij} / 2 and the
    momentum-quadratic Pi^{ij}."""

    ric: np.ndarray
    scal: np.ndarray
    E: np.ndarray
    Pi: np.ndarray


def _sym2(T: np.ndarray) -> np.ndarray:
    return 0.5 * (T + np.swapaxes(T, 0, 1))


def christoffel_delta(g: MetricField) -> ChristoffelDelta:
    """A^k_ij = (1/2) g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)."""
    grid = g.grid
    ginv = metric_inverse(g)
    dg = grid.grad_stack(g.comp)  # dg[a, i, j] = d_a g_ij
    # w[i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    w = dg + np.swapaxes(dg, 0, 1) - np.moveaxis(dg, 0, 2)
    A = 0.5 * np.einsum("kl...,ijl...->kij...", ginv, w)
    return ChristoffelDelta(A)


def ricci(g: MetricField, A: ChristoffelDelta | None = None) -> np.ndarray:
    """Ricci tensor from derivatives and quadratics of the difference tensor."""
    grid = g.grid
    Ac = (A or christoffel_delta(g)).comp
    dA = np.stack([grid.derivative(Ac, a) for a in range(grid.spec.n)])
    # dA[a, k, i, j] = d_a A^k_ij
    trA = np.einsum("iik...->k...", Ac)  # A^i_ik = d_k log sqrt(det g)
    dtrA = grid.grad_stack(trA)          # dtrA[a, k] = d_a (A^i_ik)
    term1 = np.einsum("iijk...->jk...", dA)
    term3 = np.einsum("mjk...,m...->jk...", Ac, trA)
    term4 = np.einsum("ijm...,mki...->jk...", Ac, Ac)
    return _sym2(term1 - dtrA + term3 - term4)


def scalar_curvature(g: MetricField, A: ChristoffelDelta | None = None) -> np.ndarray:
    """Covariant scalar-curvature formula with the quadratic terms expanded.

    Must agree with ``trace(g, ricci(g))`` to rounding plus aliasing; that
    comparison is the standing cross-check between the two code paths.
    """
    grid = g.grid
    n = grid.spec.n
    ginv = metric_inverse(g)
    Ac = (A or christoffel_delta(g)).comp
    dg = grid.grad_stack(g.comp)
    dginv = -np.einsum("ip...,lq...,apq...->ail...", ginv, ginv, dg)

    d2g = np.stack([grid.grad_stack(grid.derivative(g.comp, b))
                    for b in range(n)])
    # d2g[b, a, i, j] = d_a d_b g_ij; symmetric in (a, b) to rounding
    second = (np.einsum("ik...,jl...,jikl...->...", ginv, ginv, d2g)
              - np.einsum("ik...,jl...,kijl...->...", ginv, ginv, d2g))

    div_ginv = np.einsum("iil...->l...", dginv)  # d_i g^{il}
    # wjk[j, k, l] = 2 d_j g_kl - d_l g_jk
    wjk = 2.0 * dg - np.einsum("ljk...->jkl...", dg)
    q1 = 0.5 * np.einsum("jk...,l...,jkl...->...", ginv, div_ginv, wjk)
    q2 = -0.5 * np.einsum("jk...,jil...,kil...->...", ginv, dginv, dg)
    trA = np.einsum("iik...->k...", Ac)
    q3 = (np.einsum("jk...,ljk...,l...->...", ginv, Ac, trA)
          - np.einsum("jk...,ijl...,lki...->...", ginv, Ac, Ac))
    return second + q1 + q2 + q3


def momentum_quadratic(g: MetricField, pi: MomentumField) -> np.ndarray:
    """Pi^{ij}, the momentum-quadratic source of the linearized Hamiltonian.

    Pi^{ij} = (2 tr pi pi^{ij}/(n-1) - 2 pi^i_k pi^{kj} + |pi|^2 g^{ij}/2
               - (tr pi)^2 g^{ij} / (2(n-1))) / det(g)
    """
    n = g.grid.spec.n
    gc, pc = g.comp, pi.comp
    ginv = metric_inverse(g)
    trp = np.einsum("ij...,ij...->...", gc, pc)
    pgp = np.einsum("ia...,ab...,bj...->ij...", pc, gc, pc)
    normsq = np.einsum("ia...,jb...,ij...,ab...->...", gc, gc, pc, pc)
    num = (2.0 / (n - 1) * trp * pc - 2.0 * pgp
           + 0.5 * normsq * ginv - trp ** 2 / (2.0 * (n - 1)) * ginv)
    return num / det_rel(g)


def e_and_pi(g: MetricField, pi: MomentumField, lam: float) -> CurvaturePack:
    """Einstein-type tensor E^{ij} and momentum quadratic Pi^{ij}."""
    A = christoffel_delta(g)
    ric = ricci(g, A)
    scal = scalar_curvature(g, A)
    ginv = metric_inverse(g)
    ruu = sym2_raise(ginv, ric)
    E = ruu - 0.5 * (scal - 2.0 * lam) * ginv
    Pi = momentum_quadratic(g, pi)
    return CurvaturePack(ric=ric, scal=scal, E=_sym2(E), Pi=_sym2(Pi))
