"""Canonical second-order form of linear lattice operators.

The linear operators produced by the factories in :mod:`kidops` are all of
the form

    (L u)_o = sum_alpha  C_alpha[o, i] d^alpha u_i,   |alpha| <= 2,

with variable coefficient fields C_alpha determined by the frozen phase
point.  This module recovers those coefficients numerically by probing the
operator with single Fourier modes: applying L to e_i exp(i k.x) returns
sum_alpha C_alpha[:, i] (i k)^alpha exp(i k.x) pointwise, and a fixed
unisolvent set of small mode vectors makes the per-point linear system for
the C_alpha square and well conditioned.

The payoff is an operator whose forward action matches the probed closure
up to aliasing of its coefficient tails and whose transpose is exact to
rounding, because it is composed of pointwise contractions (transpose =
reordered contraction) and spectral derivatives (transpose = negated
derivative, exact once the Nyquist column is zeroed).  Krylov least-squares
solves and singular-value iterations need that consistency.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .grid import Grid


def _probe_modes(n: int):
    """Unisolvent mode vectors for quadratic symbol interpolation."""
    modes = [tuple(0 for _ in range(n))]
    for a in range(n):
        e = [0] * n
        e[a] = 1
        modes.append(tuple(e))
    for a in range(n):
        e = [0] * n
        e[a] = 2
        modes.append(tuple(e))
    for a in range(n):
        for b in range(a + 1, n):
            e = [0] * n
            e[a] = 1
            e[b] = 1
            modes.append(tuple(e))
    return modes


def derivative_slots(n: int):
    """Multi-index slots: the empty index, then axes, then ordered pairs."""
    slots = [()]
    slots += [(a,) for a in range(n)]
    slots += list(itertools.combinations_with_replacement(range(n), 2))
    return slots


class SecondOrderOperator:
    """Variable-coefficient second-order operator with exact transpose.

    Coefficients: ``C0[o, i]``, ``C1[o, i, a]`` (pairs with d_a), and
    ``C2[o, i, q]`` where q enumerates axis pairs (a, b), a <= b, each mixed
    pair counted once.
    """

    def __init__(self, grid: Grid, C0, C1, C2):
        self.grid = grid
        self.C0, self.C1, self.C2 = C0, C1, C2
        self.m_out, self.m_in = C0.shape[:2]
        self.pairs = list(itertools.combinations_with_replacement(
            range(grid.spec.n), 2))

    def matvec(self, u: np.ndarray) -> np.ndarray:
        grid = self.grid
        du = np.stack([grid.derivative(u, a) for a in range(grid.spec.n)])
        d2u = np.stack([grid.derivative(du[a], b) for (a, b) in self.pairs])
        out = np.einsum("oi...,i...->o...", self.C0, u)
        out += np.einsum("oia...,ai...->o...", self.C1, du)
        out += np.einsum("oiq...,qi...->o...", self.C2, d2u)
        return out

    def rmatvec(self, w: np.ndarray) -> np.ndarray:
        grid = self.grid
        out = np.einsum("oi...,o...->i...", self.C0, w)
        for a in range(grid.spec.n):
            t = np.einsum("oi...,o...->i...", self.C1[:, :, a], w)
            out -= grid.derivative(t, a)
        for q, (a, b) in enumerate(self.pairs):
            t = np.einsum("oi...,o...->i...", self.C2[:, :, q], w)
            # transpose of d_b after d_a is d_a after d_b, with positive sign
            out += grid.derivative(grid.derivative(t, b), a)
        return out

    # ------------------------------------------------------------- flat views

    def flat_shapes(self):
        P = self.grid.total_points
        return self.m_out * P, self.m_in * P

    def as_linear_operator(self) -> LinearOperator:
        rows, cols = self.flat_shapes()
        gshape = self.grid.shape

        def mv(x):
            return self.matvec(x.reshape((self.m_in,) + gshape)).ravel()

        def rmv(y):
            return self.rmatvec(y.reshape((self.m_out,) + gshape)).ravel()

        return LinearOperator((rows, cols), matvec=mv, rmatvec=rmv,
                              dtype=np.float64)


def extract_second_order(apply_fn, grid: Grid, m_in: int, m_out: int,
                         check_seed: int | None = 0) -> SecondOrderOperator:
    """Probe a linear closure and return its canonical second-order form.

    ``apply_fn`` maps a stacked field of ``m_in`` components to ``m_out``
    components and must be linear with coefficients frozen; it has to accept
    complex input.  Needs at least 6 points per axis so the probe modes stay
    below Nyquist.  When ``check_seed`` is not None the extracted operator is
    compared against the closure on one band-limited random field and the
    relative mismatch stored as ``extraction_residual``.
    """
    n = grid.spec.n
    if grid.spec.points_per_axis < 6:
        raise ValueError("canonical extraction needs >= 6 points per axis")
    modes = _probe_modes(n)
    slots = derivative_slots(n)
    if len(modes) != len(slots):
        raise AssertionError("probe set does not match derivative slots")
    scale = 2.0 * np.pi / grid.spec.period
    V = np.empty((len(modes), len(slots)), dtype=complex)
    for r, mode in enumerate(modes):
        for c, slot in enumerate(slots):
            val = 1.0 + 0.0j
            for axis in slot:
                val *= 1j * scale * mode[axis]
            V[r, c] = val
    Vinv = np.linalg.inv(V)

    P_shape = grid.shape
    responses = np.empty((len(modes), m_out, m_in) + P_shape, dtype=complex)
    for q, mode in enumerate(modes):
        phase = sum(scale * mode[a] * grid.x[a] for a in range(n))
        wave = np.exp(1j * np.asarray(phase, dtype=float))
        wave = np.broadcast_to(wave, P_shape).copy()
        for i in range(m_in):
            u = np.zeros((m_in,) + P_shape, dtype=complex)
            u[i] = wave
            responses[q, :, i] = apply_fn(u) / wave

    coeffs = np.einsum("cq,q...->c...", Vinv, responses).real
    C0 = np.ascontiguousarray(coeffs[0])
    C1 = np.ascontiguousarray(np.moveaxis(coeffs[1:1 + n], 0, 2))
    C2 = np.ascontiguousarray(np.moveaxis(coeffs[1 + n:], 0, 2))
    op = SecondOrderOperator(grid, C0, C1, C2)

    if check_seed is not None:
        probe = np.stack([
            grid.band_limited_random(check_seed + 7 * i,
                                     max(1, grid.spec.points_per_axis // 4),
                                     "scalar")
            for i in range(m_in)])
        ref = apply_fn(probe.astype(complex)).real
        got = op.matvec(probe)
        denom = max(grid.max_norm(ref), 1e-300)
        op.extraction_residual = float(grid.max_norm(got - ref) / denom)
    else:
        op.extraction_residual = None
    return op
