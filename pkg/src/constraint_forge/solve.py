"""Linear solves for the reduced operator F, Newton projection, KID kernels.

The reduced operator F(y, Y) is square on the lattice: 1 + n unknown
component fields against 1 + n equation fields.  Because its continuum
version is only semi-Fredholm, solves are performed in the least-squares
sense (LSQR on the canonical form, which carries an exact transpose), so a
finite-dimensional cokernel shows up as measurable residual stagnation
instead of a solver failure.  Right preconditioning uses the
constant-coefficient leading parts, inverted mode-by-mode in Fourier space
with pseudo-inversion of zero-symbol modes.

Kernel detection assembles the KID operator densely (column by column,
applying the literal operator to lattice basis fields) when the grid is
small, and otherwise runs shifted Lanczos iterations on the normal operator
of the canonical form.  Singular values are reported in the lattice L2
geometry, which for a uniform lattice coincides with the Euclidean one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, lsqr

from .canonical import SecondOrderOperator, extract_second_order
from .constraint import phi
from .fields import (ConstraintValue, LapseShift, NonEllipticMetricError,
                     PhasePoint)
from .grid import Grid
from .kidops import (make_dphi, make_dphi_adjoint, make_f_op,
                     special_variation)


@dataclass
class SolveOptions:
    """Iteration controls for the linear and Newton solvers."""

    max_newton_iters: int = 12
    newton_tol: float = 1e-10           # relative residual target
    krylov_tol: float = 1e-12
    krylov_max_iters: int = 600
    strategy: str = "special-variations"  # or "adjoint-composition"
    dense_threshold: int = 1000          # max grid points for dense assembly
    kernel_count: int = 8                # singular values reported by kid_kernel

    def __post_init__(self):
        if self.newton_tol <= 0 or self.krylov_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.strategy not in ("special-variations", "adjoint-composition"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class SolveFReport:
    converged: bool
    iterations: int
    istop: int
    residual_norm: float       # recomputed with the literal operator
    lsqr_residual: float
    target_norm: float
    residual_history: list = field(default_factory=list)


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual_history: list
    reduction_factor: float
    kid_hint: bool = False
    message: str = ""
    linear_stats: list = field(default_factory=list)


@dataclass
class KernelReport:
    singular_values: list      # ascending, the smallest ones computed
    kernel_dim: int
    basis: list                # LapseShift fields, orthonormal in lattice L2
    gap_ratio: float           # sigma_{dim+1} / sigma_{dim}, inf if dim == 0
    sigma_max: float
    threshold: float
    method: str
    rayleigh: list = field(default_factory=list)


# -------------------------------------------------------------- preconditioner

class FourierDiagonal:
    """Componentwise real Fourier multiplier; symmetric by construction."""

    def __init__(self, grid: Grid, multipliers):
        self.grid = grid
        self.multipliers = multipliers  # one full-shape array per component

    def __call__(self, u: np.ndarray) -> np.ndarray:
        out = np.empty_like(u)
        for c in range(u.shape[0]):
            spectrum = np.fft.fftn(u[c])
            spectrum *= self.multipliers[c]
            out[c] = np.fft.ifftn(spectrum).real
        return out


def _pseudo_inverse_symbol(symbol: np.ndarray, floor: float = 1e-12,
                           dc_weight: float = 0.0) -> np.ndarray:
    """Reciprocal of a Fourier symbol with small entries dropped.

    Entries with |symbol| <= floor are zeroed (pseudo-inversion); the DC
    entry alone can instead be given the fixed weight ``dc_weight``.
    """
    out = np.zeros_like(symbol)
    keep = np.abs(symbol) > floor
    out[keep] = 1.0 / symbol[keep]
    dc = (0,) * symbol.ndim
    if abs(symbol[dc]) <= floor:
        out[dc] = dc_weight
    return out


def f_preconditioner(grid: Grid, kappa: float) -> FourierDiagonal:
    """Inverse of the constant-coefficient leading parts of F.

    Scalar block: (-2 (n-1) (Lap + kappa n))^{-1}; vector blocks:
    (2 (Lap + kappa (n-1)))^{-1}; zero-symbol modes pseudo-inverted, so
    mean-zero data never touches the zero mode.
    """
    n = grid.spec.n
    k2 = grid.k_squared
    sym_y = 2.0 * (n - 1) * (k2 - kappa * n)
    sym_Y = -2.0 * (k2 - kappa * (n - 1))
    my = _pseudo_inverse_symbol(sym_y)
    mY = _pseudo_inverse_symbol(sym_Y)
    return FourierDiagonal(grid, [my] + [mY] * n)


def composition_preconditioner(grid: Grid) -> "_CompositionPreconditioner":
    return _CompositionPreconditioner(grid)


class _CompositionPreconditioner:
    """Inverse of the flat-background symbol of Dphi Dphi* (kappa = 0).

    Lapse block symbol (n-1) |k|^4; shift block 2 (|k|^2 I + k k^T), whose
    inverse is (I - k k^T / (2 |k|^2)) / (2 |k|^2).  Zero modes pseudo-inverted.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        n = grid.spec.n
        k2 = grid.k_squared
        self.mN = _pseudo_inverse_symbol((n - 1) * k2 ** 2)
        self.inv2k2 = _pseudo_inverse_symbol(2.0 * k2)
        p = grid.spec.points_per_axis
        kd = (2.0 * np.pi / grid.spec.period) * np.rint(
            np.fft.fftfreq(p) * p)
        kd[p // 2] = 0.0
        self.kvec = [kd.reshape(tuple(p if a == axis else 1 for a in range(n)))
                     for axis in range(n)]

    def __call__(self, u: np.ndarray) -> np.ndarray:
        grid = self.grid
        n = grid.spec.n
        out = np.empty_like(u)
        specN = np.fft.fftn(u[0])
        out[0] = np.fft.ifftn(self.mN * specN).real
        specX = np.stack([np.fft.fftn(u[1 + i]) for i in range(n)])
        kdotX = sum(self.kvec[i] * specX[i] for i in range(n))
        for i in range(n):
            corrected = specX[i] - self.kvec[i] * kdotX * self.inv2k2
            out[1 + i] = np.fft.ifftn(self.inv2k2 * corrected).real
        return out


# ------------------------------------------------------------------- F solves

def _resolve_params(p: PhasePoint, lam, tau):
    spec = p.grid.spec
    return (spec.lam if lam is None else lam,
            spec.tau if tau is None else tau)


def solve_f(p: PhasePoint, target: ConstraintValue, opts: SolveOptions,
            lam: float | None = None, tau: float | None = None):
    """Least-squares solve of F(y, Y) = target.

    Returns ``(y, Y, report)``.  The report's residual is recomputed by
    applying the literal operator to the solution, so extraction and solver
    errors are both visible.
    """
    lam, tau = _resolve_params(p, lam, tau)
    grid = p.grid
    n = grid.spec.n
    if target.grid.spec != grid.spec:
        raise ValueError("target grid does not match phase point grid")
    fop = make_f_op(p, lam, tau)
    canon = extract_second_order(fop, grid, 1 + n, 1 + n)
    prec = f_preconditioner(grid, grid.spec.kappa)
    gshape = grid.shape

    def mv(z):
        return canon.matvec(prec(z.reshape((1 + n,) + gshape))).ravel()

    def rmv(w):
        return prec(canon.rmatvec(w.reshape((1 + n,) + gshape))).ravel()

    size = (1 + n) * grid.total_points
    A = LinearOperator((size, size), matvec=mv, rmatvec=rmv, dtype=np.float64)
    b = target.stacked().ravel()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        zero = np.zeros(gshape)
        rep = SolveFReport(True, 0, 0, 0.0, 0.0, 0.0, [0.0])
        return zero, np.zeros((n,) + gshape), rep

    result = lsqr(A, b, atol=opts.krylov_tol, btol=opts.krylov_tol,
                  iter_lim=opts.krylov_max_iters)
    z, istop, itn, r1norm = result[0], result[1], result[2], result[3]
    u = prec(z.reshape((1 + n,) + gshape))
    y, Y = u[0], u[1:]
    resid = fop(u) - target.stacked()
    resid_norm = grid.l2_norm(resid)
    target_norm = grid.l2_norm(target.stacked())
    converged = istop in (1, 2, 4, 5) and itn < opts.krylov_max_iters
    rep = SolveFReport(
        converged=bool(converged), iterations=int(itn), istop=int(istop),
        residual_norm=float(resid_norm),
        lsqr_residual=float(r1norm * math.sqrt(grid.cell_volume)),
        target_norm=float(target_norm),
        residual_history=[float(target_norm), float(resid_norm)])
    return y, Y, rep


# ------------------------------------------------------------- stacked closures

def adjoint_stacked(p: PhasePoint, lam: float):
    """KID operator as a stacked closure (1+n components -> 2 n^2 components)."""
    adj = make_dphi_adjoint(p, lam)
    n = p.grid.spec.n
    gshape = p.grid.shape

    def apply(u):
        slot_h, slot_p = adj(u[0], u[1:])
        return np.concatenate([slot_h.reshape((n * n,) + gshape),
                               slot_p.reshape((n * n,) + gshape)])

    return apply


def dphi_stacked(p: PhasePoint, lam: float):
    """Linearized constraint as a stacked closure (2 n^2 -> 1+n components)."""
    dp = make_dphi(p, lam)
    n = p.grid.spec.n
    gshape = p.grid.shape

    def apply(u):
        h = u[:n * n].reshape((n, n) + gshape)
        pp = u[n * n:].reshape((n, n) + gshape)
        o0, oi = dp(h, pp)
        return np.concatenate([o0[np.newaxis], oi])

    return apply


# ------------------------------------------------------------ Newton projection

def _solve_f_conformal_augmented(p, target, opts, lam, tau):
    """Least-squares solve of F(y, Y) + c Dphi(2g, 0) = target.

    The special variations pair a conformal displacement with a momentum
    compensation that cancels the mean response of the scalar constraint at
    constant-mean-curvature reference points, leaving the lattice average of
    the target in a near-cokernel of F.  One extra unknown along the plain
    conformal direction (h, p) = (2g, 0) restores a strongly coupled route
    to that average; the Fourier zero mode of the (y, Y) block remains
    pseudo-inverted.
    """
    grid = p.grid
    n = grid.spec.n
    gshape = grid.shape
    fop = make_f_op(p, lam, tau)
    canon = extract_second_order(fop, grid, 1 + n, 1 + n)
    prec = f_preconditioner(grid, grid.spec.kappa)
    dp = make_dphi(p, lam)
    c0, ci = dp(2.0 * p.g.comp, np.zeros((n, n) + gshape))
    col = np.concatenate([c0[np.newaxis], ci]).ravel()
    size = (1 + n) * grid.total_points

    def mv(z):
        u = prec(z[:-1].reshape((1 + n,) + gshape))
        return canon.matvec(u).ravel() + z[-1] * col

    def rmv(w):
        head = prec(canon.rmatvec(w.reshape((1 + n,) + gshape))).ravel()
        return np.concatenate([head, [col @ w]])

    A = LinearOperator((size, size + 1), matvec=mv, rmatvec=rmv,
                       dtype=np.float64)
    b = target.stacked().ravel()
    result = lsqr(A, b, atol=opts.krylov_tol, btol=opts.krylov_tol,
                  iter_lim=opts.krylov_max_iters)
    z = result[0]
    u = prec(z[:-1].reshape((1 + n,) + gshape))
    c = float(z[-1])
    resid = fop(u) + c * col.reshape((1 + n,) + gshape) - target.stacked()
    stats = {"iterations": int(result[2]), "istop": int(result[1]),
             "residual": float(grid.l2_norm(resid)),
             "conformal_coefficient": c}
    return u[0], u[1:], c, stats


def newton_project(p: PhasePoint, epsilon: ConstraintValue | None,
                   opts: SolveOptions, lam: float | None = None,
                   tau: float | None = None):
    """Project a phase point onto the fiber phi = epsilon.

    Newton update: solve F(y, Y) = epsilon - phi(p) in the least-squares
    sense, augmented by one plain conformal column (see
    :func:`_solve_f_conformal_augmented`), displace the phase point by the
    special variation of (y, Y) plus the conformal part, halving the step
    (at most 8 times) whenever the residual fails to decrease or positivity
    of the metric is lost.  The alternative strategy replaces F by the
    composition Dphi Dphi* acting on a lapse-shift unknown.
    """
    lam, tau = _resolve_params(p, lam, tau)
    grid = p.grid
    n = grid.spec.n
    gshape = grid.shape
    eps = np.zeros((1 + n,) + gshape) if epsilon is None else epsilon.stacked()

    def residual(q):
        return eps - phi(q, lam).stacked()

    r = residual(p)
    rn = grid.l2_norm(r)
    r0 = max(rn, 1e-300)
    history = [float(rn)]
    linear_stats = []
    kid_hint = False
    message = "converged"
    it = 0
    while it < opts.max_newton_iters:
        if rn <= opts.newton_tol * r0:
            break
        target = ConstraintValue(grid, r[0], r[1:])
        if opts.strategy == "special-variations":
            y, Y, lrep = solve_f(p, target, opts, lam=lam, tau=tau)
            v = special_variation(p, y, Y, tau)
            dg_step, dpi_step = v.h, v.p
            linear_stats.append({"iterations": lrep.iterations,
                                 "residual": lrep.residual_norm,
                                 "istop": lrep.istop})
            stalled = lrep.residual_norm > 0.5 * rn
        else:
            dg_step, dpi_step, lstat = _adjoint_composition_step(
                p, target, opts, lam)
            linear_stats.append(lstat)
            stalled = lstat["residual"] > 0.5 * rn
        if stalled:
            kid_hint = True
        step = 1.0
        accepted = False
        for _ in range(9):
            cand = p.shifted(step * dg_step, step * dpi_step)
            try:
                cand.g.ellipticity_constant()
            except NonEllipticMetricError:
                step *= 0.5
                continue
            rc = residual(cand)
            rcn = grid.l2_norm(rc)
            if rcn < rn:
                accepted = True
                break
            step *= 0.5
        it += 1
        if not accepted:
            message = ("stalled: no residual-decreasing step found; possible "
                       "KIDs or cokernel obstruction")
            kid_hint = True
            break
        p, r, rn = cand, rc, rcn
        history.append(float(rn))
    else:
        if rn > opts.newton_tol * r0:
            message = "iteration limit reached"
    converged = rn <= opts.newton_tol * r0
    if converged:
        message = "converged"
    report = NewtonReport(
        converged=bool(converged), iterations=it,
        residual_history=history,
        reduction_factor=float(history[0] / max(rn, 1e-300)),
        kid_hint=kid_hint, message=message, linear_stats=linear_stats)
    return p, report


def _adjoint_composition_step(p, target, opts, lam):
    """One linear solve of (Dphi Dphi*) xi = r; returns the (h, p) update."""
    grid = p.grid
    n = grid.spec.n
    gshape = grid.shape
    adj = extract_second_order(adjoint_stacked(p, lam), grid, 1 + n, 2 * n * n)
    fwd = extract_second_order(dphi_stacked(p, lam), grid, 2 * n * n, 1 + n)
    prec = composition_preconditioner(grid)

    def mv(z):
        u = prec(z.reshape((1 + n,) + gshape))
        return fwd.matvec(adj.matvec(u)).ravel()

    def rmv(w):
        u = adj.rmatvec(fwd.rmatvec(w.reshape((1 + n,) + gshape)))
        return prec(u).ravel()

    size = (1 + n) * grid.total_points
    A = LinearOperator((size, size), matvec=mv, rmatvec=rmv, dtype=np.float64)
    b = target.stacked().ravel()
    result = lsqr(A, b, atol=opts.krylov_tol, btol=opts.krylov_tol,
                  iter_lim=opts.krylov_max_iters)
    xi = prec(result[0].reshape((1 + n,) + gshape))
    image = adj.matvec(xi)
    h = image[:n * n].reshape((n, n) + gshape)
    pp = image[n * n:].reshape((n, n) + gshape)
    h = 0.5 * (h + np.swapaxes(h, 0, 1))
    pp = 0.5 * (pp + np.swapaxes(pp, 0, 1))
    resid = grid.l2_norm(fwd.matvec(image) - target.stacked())
    return h, pp, {"iterations": int(result[2]), "residual": float(resid),
                   "istop": int(result[1])}


# --------------------------------------------------------------- KID detection

def assemble_dense(apply_fn, m_in: int, m_out: int, grid: Grid,
                   memory_budget_bytes: int = 2 << 30) -> np.ndarray:
    """Column-by-column dense assembly of a stacked linear closure."""
    P = grid.total_points
    rows, cols = m_out * P, m_in * P
    if rows * cols * 8 > memory_budget_bytes:
        raise MemoryError(
            f"dense assembly of a {rows} x {cols} matrix exceeds the memory "
            f"budget; use the matrix-free path")
    M = np.empty((rows, cols))
    unit = np.zeros((m_in,) + grid.shape)
    flat = unit.reshape(cols)
    for j in range(cols):
        flat[j] = 1.0
        M[:, j] = apply_fn(unit).ravel()
        flat[j] = 0.0
    return M


def smallest_singular_triplets(operator, m: int, tol: float = 1e-12,
                               maxiter: int | None = None):
    """Smallest ``m`` singular values and right vectors, plus sigma_max.

    ``operator`` is either a dense matrix or a :class:`SecondOrderOperator`.
    Returns ``(sigmas_ascending, vectors_rows, sigma_max)``.
    """
    if isinstance(operator, np.ndarray):
        _, s, vt = np.linalg.svd(operator, full_matrices=False)
        sig = s[::-1][:m]
        vecs = vt[::-1][:m]
        return np.array(sig), np.array(vecs), float(s[0])
    if not isinstance(operator, SecondOrderOperator):
        raise TypeError("expected a dense matrix or a SecondOrderOperator")
    lin = operator.as_linear_operator()
    rows, cols = lin.shape

    def normal_mv(x):
        return lin.rmatvec(lin.matvec(x))

    N = LinearOperator((cols, cols), matvec=normal_mv, dtype=np.float64)
    lam_max = float(eigsh(N, k=1, which="LA", tol=1e-9,
                          maxiter=maxiter, return_eigenvectors=False)[0])

    def shifted_mv(x):
        return lam_max * x - normal_mv(x)

    S = LinearOperator((cols, cols), matvec=shifted_mv, dtype=np.float64)
    vals, vecs = eigsh(S, k=m, which="LA", tol=tol, maxiter=maxiter)
    small = lam_max - vals
    order = np.argsort(small)
    sig = np.sqrt(np.clip(small[order], 0.0, None))
    return sig, vecs.T[order], math.sqrt(lam_max)


def kid_kernel(p: PhasePoint, lam: float | None = None,
               threshold: float = 1e-8, opts: SolveOptions | None = None,
               force_method: str | None = None) -> KernelReport:
    """Estimate the kernel of the KID operator at a phase point.

    Kernel dimension counts singular values below ``threshold * sigma_max``.
    The basis is returned as lapse-shift fields orthonormal in the lattice
    L2 inner product, and each one is re-applied to the literal operator as
    a Rayleigh-quotient consistency record.
    """
    opts = opts or SolveOptions()
    lam, _ = _resolve_params(p, lam, None)
    grid = p.grid
    n = grid.spec.n
    m = opts.kernel_count
    apply_fn = adjoint_stacked(p, lam)
    dense = grid.total_points <= opts.dense_threshold
    if force_method == "dense":
        dense = True
    elif force_method == "matrix-free":
        dense = False
    if dense:
        M = assemble_dense(apply_fn, 1 + n, 2 * n * n, grid)
        sig, vecs, sigma_max = smallest_singular_triplets(M, m)
        method = "dense-svd"
    else:
        canon = extract_second_order(apply_fn, grid, 1 + n, 2 * n * n)
        sig, vecs, sigma_max = smallest_singular_triplets(canon, m)
        method = "matrix-free-lanczos"
    cut = threshold * sigma_max
    kernel_dim = int(np.sum(sig < cut))
    if kernel_dim == 0:
        gap_ratio = math.inf
    elif kernel_dim < len(sig):
        denom = max(sig[kernel_dim - 1], 1e-300)
        gap_ratio = float(sig[kernel_dim] / denom)
    else:
        gap_ratio = math.inf
    scale = 1.0 / math.sqrt(grid.cell_volume)
    basis = []
    rayleigh = []
    for idx in range(kernel_dim):
        comp = vecs[idx].reshape((1 + n,) + grid.shape) * scale
        xi = LapseShift(grid, comp[0], comp[1:])
        basis.append(xi)
        out = apply_fn(np.concatenate([xi.N[np.newaxis], xi.X]))
        xin = math.sqrt(grid.l2_norm(xi.N) ** 2 + grid.l2_norm(xi.X) ** 2)
        rayleigh.append(float(grid.l2_norm(out) / max(xin, 1e-300)))
    return KernelReport(
        singular_values=[float(s) for s in sig], kernel_dim=kernel_dim,
        basis=basis, gap_ratio=gap_ratio, sigma_max=float(sigma_max),
        threshold=threshold, method=method, rayleigh=rayleigh)
