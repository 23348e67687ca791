"""Linearized constraint, its formal adjoint, and companion operators.

The differential of the constraint operator at (g, pi) in direction (h, p):

    Dphi0 (h,p) = (del del h - Lap tr_g h) sqrt(g) - h:E sqrt(g) + h:Pi sqrt(g)
                  + p:(2 tr_g pi g / (n-1) - 2 pi_low) / sqrt(g)
    Dphi_i (h,p) = pi^{jk} (2 nabla_k h_ij - nabla_i h_jk)
                  + 2 h_ij nabla_k pi^{jk} + 2 g_ik nabla_j p^{jk}

Its formal L2 adjoint in the flat background measure (the KID operator),
written componentwise so its pairing with (h, p) is plain contraction:

    slot_h^{ij} = (nabla^i nabla^j N - g^{ij} Lap N + (Pi - E)^{ij} N) sqrt(g)
                  + (Lie_X pi)^{ij}
    slot_p_ij   = -2 (K_ij N + S(X)_ij)

with S(X)_ij = nabla_(i X_j) the symmetrized covariant derivative for the
evolving metric and Lie_X pi the Lie derivative of the weight-one momentum
density.  Index placement between the two slots is fixed by demanding the
integration-by-parts identity, which the verification suite checks.

Also implemented here: the reweighted operator P* = (g^{-1/4} slot_h,
g^{1/4} nabla slot_p), the flat Killing operator and its second-derivative
identity, the shifted-Hessian pair (T, L), the model Hessian operators on
the torus, the adjoint of the scalar-curvature map, and the special
variations (h, p) = (2 y g, (2 S(Y) - g tr S(Y) - (n-1)(n-2) tau y g) sqrt(g))
that turn the linearized constraint into a second-order elliptic operator F.

Every factory ``make_*`` precomputes all the (g, pi)-dependent coefficient
fields once and returns a closure linear in its array arguments; the
closures accept complex fields, which the canonical-form extraction uses.
"""

from __future__ import annotations

import numpy as np

from .constraint import divergence_density, phi
from .curvature import christoffel_delta, e_and_pi, ricci, scalar_curvature
from .fields import (AdjointValue, ConstraintValue, LapseShift, MetricField,
                     PhasePoint, Variation, K_from_pi, det_rel,
                     metric_inverse, sqrt_det, sym2_raise, sym2_lower, trace2)


# ------------------------------------------------------- covariant derivatives

def hessian_scalar(grid, A, N):
    """nabla_a nabla_b N = d_a d_b N - A^c_ab d_c N."""
    dN = grid.grad_stack(N)
    d2 = np.stack([grid.grad_stack(dN[b]) for b in range(grid.spec.n)], axis=1)
    # d2[a, b] = d_a d_b N
    return d2 - np.einsum("cab...,c...->ab...", A, dN)


def nabla_cov1(grid, A, w):
    """nabla_a w_i for a covariant 1-form."""
    dw = np.stack([grid.derivative(w, a) for a in range(grid.spec.n)])
    return dw - np.einsum("cai...,c...->ai...", A, w)


def nabla_cov2(grid, A, T):
    """nabla_a T_ij for a covariant 2-tensor."""
    dT = np.stack([grid.derivative(T, a) for a in range(grid.spec.n)])
    return (dT - np.einsum("cai...,cj...->aij...", A, T)
            - np.einsum("caj...,ic...->aij...", A, T))


def nabla_cov3(grid, A, T):
    """nabla_b T_aij for a covariant 3-tensor (e.g. an already-taken nabla)."""
    dT = np.stack([grid.derivative(T, b) for b in range(grid.spec.n)])
    return (dT - np.einsum("cba...,cij...->baij...", A, T)
            - np.einsum("cbi...,acj...->baij...", A, T)
            - np.einsum("cbj...,aic...->baij...", A, T))


def _sym2(T):
    return 0.5 * (T + np.swapaxes(T, 0, 1))


# ------------------------------------------------------------ shared geometry

class Geometry:
    """Per-phase-point coefficient bundle shared by the operator factories."""

    def __init__(self, p: PhasePoint, lam: float):
        self.grid = p.grid
        self.n = p.grid.spec.n
        self.g = p.g.comp
        self.pi = p.pi.comp
        self.ginv = metric_inverse(p.g)
        self.sg = sqrt_det(p.g)
        self.detg = det_rel(p.g)
        self.A = christoffel_delta(p.g).comp
        pack = e_and_pi(p.g, p.pi, lam)
        self.ric, self.scal, self.E, self.Pi = pack.ric, pack.scal, pack.E, pack.Pi
        self.trp = trace2(p.g, self.pi, "uu")
        self.pi_low = sym2_lower(self.g, self.pi)
        self.dpi = np.stack([self.grid.derivative(self.pi, a)
                             for a in range(self.n)])
        self.divpi = divergence_density(self.grid, self.A, self.pi)
        self.K = K_from_pi(p.g, p.pi)

    def lap_scalar(self, N):
        hess = hessian_scalar(self.grid, self.A, N)
        return hess, np.einsum("ab...,ab...->...", self.ginv, hess)


# ------------------------------------------------------- linearized constraint

def make_dphi(p: PhasePoint, lam: float, mutant: str | None = None):
    """Closure (h, pp) -> (o0, oi) applying the linearized constraint.

    ``mutant`` injects deliberate sign errors for sensitivity tests:
    ``"flip_pihat"`` negates the pi-weighted derivative block of the
    momentum row, ``"flip_e"`` negates the E term of the scalar row.
    """
    if mutant not in (None, "flip_pihat", "flip_e"):
        raise ValueError(f"unknown mutant {mutant!r}")
    geo = Geometry(p, lam)
    grid, n = geo.grid, geo.n
    e_sign = -1.0 if mutant == "flip_e" else 1.0
    pihat_sign = -1.0 if mutant == "flip_pihat" else 1.0
    # pairs with pp in the scalar row, before the 1/sqrt(g) weight
    coef_p = 2.0 / (n - 1) * geo.trp * geo.g - 2.0 * geo.pi_low

    def apply(h, pp):
        nh = nabla_cov2(grid, geo.A, h)
        nnh = nabla_cov3(grid, geo.A, nh)
        deldel = np.einsum("ia...,jb...,abij...->...", geo.ginv, geo.ginv, nnh)
        trh = np.einsum("ij...,ij...->...", geo.ginv, h)
        _, lap_trh = geo.lap_scalar(trh)
        o0 = ((deldel - lap_trh
               - e_sign * np.einsum("ij...,ij...->...", h, geo.E)
               + np.einsum("ij...,ij...->...", h, geo.Pi)) * geo.sg
              + np.einsum("ij...,ij...->...", pp, coef_p) / geo.sg)
        pihat_term = (2.0 * np.einsum("jk...,kij...->i...", geo.pi, nh)
                      - np.einsum("jk...,ijk...->i...", geo.pi, nh))
        divpp = divergence_density(grid, geo.A, pp)
        oi = (pihat_sign * pihat_term
              + 2.0 * np.einsum("ij...,j...->i...", h, geo.divpi)
              + 2.0 * np.einsum("ik...,k...->i...", geo.g, divpp))
        return o0, oi

    return apply


def dphi(p: PhasePoint, v: Variation, lam: float) -> ConstraintValue:
    """Linearized constraint at ``p`` in direction ``v``."""
    o0, oi = make_dphi(p, lam)(v.h, v.p)
    return ConstraintValue(p.grid, o0, oi)


def make_dphi_adjoint(p: PhasePoint, lam: float):
    """Closure (N, X) -> (slot_h, slot_p) applying the KID operator."""
    geo = Geometry(p, lam)
    grid, n = geo.grid, geo.n
    pi_minus_e = geo.Pi - geo.E

    def apply(N, X):
        hessN, lapN = geo.lap_scalar(N)
        hess_uu = sym2_raise(geo.ginv, hessN)
        dX = np.stack([grid.derivative(X, a) for a in range(n)])  # dX[a, i]
        divX = np.einsum("aa...->...", dX)
        lie = (np.einsum("k...,kij...->ij...", X, geo.dpi)
               - np.einsum("kj...,ki...->ij...", geo.pi, dX)
               - np.einsum("ik...,kj...->ij...", geo.pi, dX)
               + geo.pi * divX)
        slot_h = (hess_uu - geo.ginv * lapN + pi_minus_e * N) * geo.sg + lie
        Xl = np.einsum("ij...,j...->i...", geo.g, X)
        nXl = nabla_cov1(grid, geo.A, Xl)
        SX = 0.5 * (nXl + np.swapaxes(nXl, 0, 1))
        slot_p = -2.0 * (geo.K * N + SX)
        return _sym2(slot_h), _sym2(slot_p)

    return apply


def dphi_adjoint(p: PhasePoint, xi: LapseShift, lam: float) -> AdjointValue:
    """KID operator applied to a lapse-shift pair."""
    slot_h, slot_p = make_dphi_adjoint(p, lam)(xi.N, xi.X)
    return AdjointValue(p.grid, slot_h, slot_p)


def make_p_star(p: PhasePoint, lam: float):
    """Closure (N, X) -> (g^{-1/4} slot_h, g^{1/4} nabla slot_p)."""
    geo = Geometry(p, lam)
    adj = make_dphi_adjoint(p, lam)
    quarter = geo.detg ** 0.25

    def apply(N, X):
        slot_h, slot_p = adj(N, X)
        nabla_sp = nabla_cov2(geo.grid, geo.A, slot_p)
        return slot_h / quarter, quarter * nabla_sp

    return apply


def p_star(p: PhasePoint, xi: LapseShift, lam: float):
    """Reweighted KID operator; returns (rank-2 slot, rank-3 slot)."""
    return make_p_star(p, lam)(xi.N, xi.X)


# ----------------------------------------------------- flat background helpers

def killing(grid, X: np.ndarray) -> np.ndarray:
    """Flat Killing operator S(Y)_ij = d_(i Y_j) on a one-form."""
    d = np.stack([grid.derivative(X, a) for a in range(grid.spec.n)])
    return 0.5 * (d + np.swapaxes(d, 0, 1))


def u_second_derivative_identity(grid, X: np.ndarray):
    """Both sides of d_k d_j X_i = d_k S_ij + d_j S_ik - d_i S_jk.

    The background curvature term vanishes on the torus, so the left side
    is also the second-derivative operator built from the Killing operator.
    Returns ``(lhs, rhs)`` indexed ``[k, j, i]``.
    """
    d1 = np.stack([grid.derivative(X, a) for a in range(grid.spec.n)])
    lhs = np.stack([grid.derivative(d1, a) for a in range(grid.spec.n)])
    S = killing(grid, X)
    dS = np.stack([grid.derivative(S, a) for a in range(grid.spec.n)])
    rhs = (np.swapaxes(dS, 1, 2)
           + np.einsum("jik...->kji...", dS)
           - np.einsum("ijk...->kji...", dS))
    return lhs, rhs


def u_ring(grid, X: np.ndarray, kappa: float) -> np.ndarray:
    """Model operator on one-forms: d_k d_j X_i + kappa (id_jk X_i - id_ik X_j)."""
    n = grid.spec.n
    d1 = np.stack([grid.derivative(X, a) for a in range(n)])
    out = np.stack([grid.derivative(d1, a) for a in range(n)])
    if kappa != 0.0:
        eye = np.eye(n)
        out = out + kappa * (np.einsum("jk,i...->kji...", eye, X)
                             - np.einsum("ik,j...->kji...", eye, X))
    return out


def t_ring(grid, N: np.ndarray, kappa: float) -> np.ndarray:
    """Model Hessian operator on functions: dd N + kappa id N."""
    dN = grid.grad_stack(N)
    hess = np.stack([grid.grad_stack(dN[b]) for b in range(grid.spec.n)], axis=1)
    if kappa != 0.0:
        hess = hess + kappa * np.einsum("ab,...->ab...", np.eye(grid.spec.n), N)
    return hess


def t_shift(g: MetricField, N: np.ndarray, lam: float):
    """Shifted Hessian pair for the evolving metric.

    T(N) = nabla nabla N - (Ric - (R + 2 lam) g / (2(n-1))) N and
    L(N) = nabla nabla N - g Lap N - (Ric - (R - 2 lam) g / 2) N,
    which satisfy L = T - tr_g(T) g.  Returns ``(T, L)``.
    """
    grid = g.grid
    n = grid.spec.n
    A = christoffel_delta(g)
    ric = ricci(g, A)
    scal = scalar_curvature(g, A)
    ginv = metric_inverse(g)
    hess = hessian_scalar(grid, A.comp, N)
    lap = np.einsum("ab...,ab...->...", ginv, hess)
    T = hess - (ric - (scal + 2.0 * lam) / (2.0 * (n - 1)) * g.comp) * N
    L = hess - g.comp * lap - (ric - 0.5 * (scal - 2.0 * lam) * g.comp) * N
    return T, L


# ------------------------------------------------------ scalar-curvature route

def dr_adjoint(g: MetricField, f: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Adjoint of the prescribed-scalar-curvature map,

    (nabla^i nabla^j N - g^{ij} Lap N - (R^{ij} - (R - 2f) g^{ij} / 2) N) sqrt(g).

    When R(g) = 2 f pointwise this is the adjoint of the plain scalar
    curvature linearization.
    """
    grid = g.grid
    A = christoffel_delta(g)
    ric = ricci(g, A)
    scal = scalar_curvature(g, A)
    ginv = metric_inverse(g)
    sg = sqrt_det(g)
    hess = hessian_scalar(grid, A.comp, N)
    lap = np.einsum("ab...,ab...->...", ginv, hess)
    hess_uu = sym2_raise(ginv, hess)
    euu = sym2_raise(ginv, ric) - 0.5 * (scal - 2.0 * f) * ginv
    return (hess_uu - ginv * lap - euu * N) * sg


def scalar_map_linearized(g: MetricField, f: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Linearization of the prescribed-scalar-curvature map in direction h."""
    grid = g.grid
    A = christoffel_delta(g)
    ric = ricci(g, A)
    scal = scalar_curvature(g, A)
    ginv = metric_inverse(g)
    sg = sqrt_det(g)
    nh = nabla_cov2(grid, A.comp, h)
    nnh = nabla_cov3(grid, A.comp, nh)
    deldel = np.einsum("ia...,jb...,abij...->...", ginv, ginv, nnh)
    trh = np.einsum("ij...,ij...->...", ginv, h)
    hess_trh = hessian_scalar(grid, A.comp, trh)
    lap_trh = np.einsum("ab...,ab...->...", ginv, hess_trh)
    euu = sym2_raise(ginv, ric) - 0.5 * (scal - 2.0 * f) * ginv
    return (deldel - lap_trh - np.einsum("ij...,ij...->...", h, euu)) * sg


# ----------------------------------------------------------- special variations

def make_special_variation(p: PhasePoint, tau: float):
    """Closure (y, Y) -> (h, pp) of the conformal-plus-deformation variation."""
    grid = p.grid
    n = grid.spec.n
    g = p.g.comp
    ginv = metric_inverse(p.g)
    sg = sqrt_det(p.g)
    A = christoffel_delta(p.g).comp
    c_tau = (n - 1) * (n - 2) * tau

    def apply(y, Y):
        h = 2.0 * y * g
        Yl = np.einsum("ij...,j...->i...", g, Y)
        nYl = nabla_cov1(grid, A, Yl)
        SY = 0.5 * (nYl + np.swapaxes(nYl, 0, 1))
        SYuu = sym2_raise(ginv, SY)
        trS = np.einsum("ab...,ab...->...", ginv, SY)
        pp = (2.0 * SYuu - trS * ginv - c_tau * y * ginv) * sg
        return h, pp

    return apply


def special_variation(p: PhasePoint, y: np.ndarray, Y: np.ndarray,
                      tau: float) -> Variation:
    """Variation h = 2 y g, p = (2 S(Y) - g tr S(Y) - (n-1)(n-2) tau y g) sqrt(g).

    ``Y`` enters as a vector field; its indices are raised with ``g`` after
    taking the symmetrized covariant derivative.
    """
    h, pp = make_special_variation(p, tau)(y, Y)
    return Variation(p.grid, h, pp)


def make_f_op(p: PhasePoint, lam: float, tau: float):
    """Closure u = [y, Y] -> [F0, F_i] stacked, the elliptic reduction of Dphi."""
    sv = make_special_variation(p, tau)
    dp = make_dphi(p, lam)

    def apply(u):
        h, pp = sv(u[0], u[1:])
        o0, oi = dp(h, pp)
        return np.concatenate([o0[np.newaxis], oi])

    return apply


def f_op(p: PhasePoint, y: np.ndarray, Y: np.ndarray, lam: float,
         tau: float) -> ConstraintValue:
    """F(y, Y) = Dphi(special variation), the operator driving projection."""
    out = make_f_op(p, lam, tau)(np.concatenate([y[np.newaxis], Y]))
    return ConstraintValue(p.grid, out[0], out[1:])


def f_leading_background(grid, y: np.ndarray, Y: np.ndarray, kappa: float):
    """Constant-coefficient leading parts of F at the flat reference point.

    F0 = -2 (n-1) (Lap y + kappa n y) and F_i = 2 (Lap Y^i + kappa (n-1) Y^i);
    used as an independently coded comparison at the exact background.
    """
    n = grid.spec.n
    lap_y = sum(grid.derivative(grid.derivative(y, a), a) for a in range(n))
    lap_Y = sum(grid.derivative(grid.derivative(Y, a), a) for a in range(n))
    f0 = -2.0 * (n - 1) * (lap_y + kappa * n * y)
    fi = 2.0 * (lap_Y + kappa * (n - 1) * Y)
    return f0, fi


# ------------------------------------------------------------------- pairings

def pair_constraint(grid, value0, valuei, xi_N, xi_X) -> float:
    """L2 pairing of a constraint-type pair with a lapse-shift pair."""
    return grid.inner(value0, xi_N) + grid.inner(valuei, xi_X)


def pair_variation(grid, h, pp, slot_h, slot_p) -> float:
    """L2 pairing of a variation with a KID-operator value."""
    return grid.inner(h, slot_h) + grid.inner(pp, slot_p)
