"""Twisted Kawazumi-Zhang tensors, diagrams and the Johnson map on explicit Riemann surfaces."""

from ._version import __version__
from .algebra import CohomologyFrame, intersection_pairing, omega_hat, pairing_M0, u_subspace
from .basis import bergman_form, orthonormal_basis
from .diagrams import canonical_form, eval_diagram, parse_diagram
from .errors import KZError
from .green import (assemble_operators, dense_green_oracle, green_apply, green_pairing, harmonic_projection,
                    hodge_star, log_green_column, wedge_two_form)
from .johnson import compute_Q, e1_J_matrix, e1_phi_coefficients, kahler_contraction, q_restricted_checks
from .mesh import build_surface
from .pipeline import JobConfig, run_compute, run_convergence, run_sweep
from .state import SurfaceState, prepare_state
from .surfaces import HyperellipticCurve, TorusSurface, genus, mobius_transform
from .tensor import ATensor, compute_A, kz_invariant, verify_identities

__all__ = [
    "__version__", "ATensor", "CohomologyFrame", "HyperellipticCurve", "JobConfig", "KZError", "SurfaceState",
    "TorusSurface", "assemble_operators", "bergman_form", "build_surface", "canonical_form", "compute_A",
    "compute_Q", "dense_green_oracle", "e1_J_matrix", "e1_phi_coefficients", "eval_diagram", "genus",
    "green_apply", "green_pairing", "harmonic_projection", "hodge_star", "intersection_pairing",
    "kahler_contraction", "kz_invariant", "log_green_column", "mobius_transform", "omega_hat",
    "orthonormal_basis", "pairing_M0", "parse_diagram", "prepare_state", "q_restricted_checks",
    "run_compute", "run_convergence", "run_sweep", "u_subspace", "verify_identities", "wedge_two_form",
]
