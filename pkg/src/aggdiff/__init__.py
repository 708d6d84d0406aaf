"""Finite-volume toolkit for aggregation-diffusion equations
``u_t + div(u grad K*u) = Delta A(u)``: kernel and diffusion classification,
free-energy diagnostics, critical-mass predictions and simulation."""
from ._accel import BACKEND, HAVE_NUMBA
from .diffusion import (DiffusionSpec, PowerLaw as PowerDiffusion, SaturatedLinear, classify_criticality,
                        entropy_density, entropy_growth_limit)
from .energy import critical_mass, estimate_Cmstar, hls_ratio
from .grid import GridField, GridHandle
from .kernel import (Gaussian, KernelSpec, Logarithmic, Newtonian, PowerLaw, check_admissible,
                     critical_exponent, singular_order)
from .solver import SimConfig, run

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "HAVE_NUMBA", "DiffusionSpec", "PowerDiffusion", "SaturatedLinear", "classify_criticality",
    "entropy_density", "entropy_growth_limit", "critical_mass", "estimate_Cmstar", "hls_ratio", "GridField",
    "GridHandle", "Gaussian", "KernelSpec", "Logarithmic", "Newtonian", "PowerLaw", "check_admissible",
    "critical_exponent", "singular_order", "SimConfig", "run",
]
