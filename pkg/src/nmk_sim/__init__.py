"""Classical simulation of non-Markovian open quantum systems via certified
Markovian dilations: mollifier regularization, frequency cutoff,
star-to-chain transformation, and truncated-Fock propagation, with every
step carrying a computable error bound."""

from .chain import (
    ChainCoefficients,
    QuadratureRule,
    chain_error_single,
    chain_propagate_single,
    gauss_quadrature,
    star_to_chain,
)
from .dynamics import (
    ErrorBudget,
    StateConstants,
    StepControl,
    Trajectory,
    assemble_error_budget,
    chain_error_bound,
    cutoff_error_bound,
    evolve,
    measure_moments,
    moment_bound,
    regularization_error_bound,
    trace_distance,
    truncation_certificate,
)
from .fock import (
    InitialEnvState,
    SparseOperator,
    SystemModel,
    TruncatedSpace,
    build_hamiltonian,
    enumerate_basis,
    ladder,
    project_particle_sector,
)
from .kernels import (
    MemoryKernel,
    Mollifier,
    RegularizedCoupling,
    apply_mu_star,
    choose_grid,
    error_functions,
    eval_spectral_density,
    mollifier_fourier,
    regularize,
    total_variation,
)
from .oracle import StarDiscretization, lindblad_evolve, star_evolve

__all__ = [
    "ChainCoefficients", "QuadratureRule", "chain_error_single",
    "chain_propagate_single", "gauss_quadrature", "star_to_chain",
    "ErrorBudget", "StateConstants", "StepControl", "Trajectory",
    "assemble_error_budget", "chain_error_bound", "cutoff_error_bound",
    "evolve", "measure_moments", "moment_bound",
    "regularization_error_bound", "trace_distance", "truncation_certificate",
    "InitialEnvState", "SparseOperator", "SystemModel", "TruncatedSpace",
    "build_hamiltonian", "enumerate_basis", "ladder",
    "project_particle_sector",
    "MemoryKernel", "Mollifier", "RegularizedCoupling", "apply_mu_star",
    "choose_grid", "error_functions", "eval_spectral_density", "mollifier_fourier",
    "regularize", "total_variation",
    "StarDiscretization", "lindblad_evolve", "star_evolve",
]

__version__ = "0.1.0"
