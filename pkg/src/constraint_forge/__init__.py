"""constraint-forge: spectral constraint-operator toolkit on flat tori.

Evaluates the vacuum initial-data constraint operator, its linearization
and formal adjoint (the KID operator), verifies the identities and
estimate-type inequalities they satisfy on periodic lattices, detects KID
kernels by singular-value analysis, and projects nearby data onto
constraint fibers with a Newton-Krylov iteration.
"""

from .grid import Grid, GridSpec
from .fields import (AdjointValue, ConstraintValue, LapseShift, MetricField,
                     MomentumField, NonEllipticMetricError, PhasePoint,
                     Variation, background, perturbed_background, K_from_pi,
                     metric_inverse, pi_from_K, sqrt_det, tensor_norm_sq,
                     trace2)
from .curvature import (ChristoffelDelta, CurvaturePack, christoffel_delta,
                        e_and_pi, ricci, scalar_curvature)
from .constraint import hamiltonian, momentum, phi, scalar_map
from .kidops import (dphi, dphi_adjoint, dr_adjoint, f_op, killing, p_star,
                     special_variation, t_ring, t_shift, u_ring,
                     u_second_derivative_identity)
from .solve import (KernelReport, SolveOptions, assemble_dense, kid_kernel,
                    newton_project, smallest_singular_triplets, solve_f)
from .verify import (OperatorReport, check_adjoint, check_elliptic_estimate,
                     check_identity_29, check_linearization, korn_ratio,
                     lipschitz_probe, t_estimate_ratio)

__version__ = "0.1.0"
