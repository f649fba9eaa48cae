"""Quasi-periodic torus construction for nearly-integrable Hamiltonian systems."""

__version__ = "0.1.0"

from .hamiltonian import ModelSpec, fpu_beta, henon_heiles, load_model, save_model  # noqa: F401
from .resonance import ResonanceConfig, admissible, measure_estimate  # noqa: F401
from .solver import SolveResult, SolverConfig, default_config, iterate  # noqa: F401
from .evaluate import ode_residual, reference_integrate, synthesize, to_real_coords  # noqa: F401
