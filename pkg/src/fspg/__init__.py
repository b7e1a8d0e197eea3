"""Ground states of the fractional Schrodinger-Poisson system on a periodic grid.

The system is

    (-Delta)^s u + V(x) u + phi u = lam |u|^(p-1) u,    (-Delta)^s phi = u^2

and ground states are found by minimizing the energy over the set where the
combination ``G`` of the Nehari and Pohozaev identities vanishes.
"""

__version__ = "0.1.0"

from .gridfield import Field, GridSpec, SpectralField, read_field, resample, write_field
from .fractional import calibrate_kernel, frac_laplacian, frac_seminorm_sq, poisson_solve, riesz_constant
from .potentials import PotentialSpec, check_V1, check_V2, constant, estimate_alpha0, paper_example, radial_table
from .functionals import ProblemSpec, Quartet, critical_exponent, evaluate, quartet, residual_report
from .fibering import dilate, project_to_M, project_to_M_generalV, scan_fiber
from .solver import GroundStateResult, SolverConfig, continuation, minimize_on_manifold, mountain_pass_check

__all__ = [
    "Field",
    "GridSpec",
    "SpectralField",
    "read_field",
    "write_field",
    "resample",
    "frac_laplacian",
    "frac_seminorm_sq",
    "poisson_solve",
    "riesz_constant",
    "calibrate_kernel",
    "PotentialSpec",
    "constant",
    "paper_example",
    "radial_table",
    "check_V1",
    "check_V2",
    "estimate_alpha0",
    "ProblemSpec",
    "Quartet",
    "critical_exponent",
    "evaluate",
    "quartet",
    "residual_report",
    "dilate",
    "project_to_M",
    "project_to_M_generalV",
    "scan_fiber",
    "SolverConfig",
    "GroundStateResult",
    "minimize_on_manifold",
    "mountain_pass_check",
    "continuation",
]
