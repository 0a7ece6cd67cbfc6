"""Atomistic and quasinonlocal chain energies, boundary layers and fracture limits."""

from .potentials import (
    DomainError,
    NonConvergence,
    PotentialAnalysis,
    PotentialSpec,
    RootNotBracketed,
    check_assumptions,
    compute_constants,
    eval_j,
    eval_j0,
    eval_r,
)
from .chain import ChainConfig, MeshConfig, energy_atomistic, energy_qnl, first_order_energy, sigma_mu_breakdown
from .minimize import ChainModel, MinimizeOptions, brute_force_oracle, detect_cracks, global_minimize
from .limits import (
    BLQuery,
    BLResult,
    JumpLocation,
    JumpSpec,
    LimitTable,
    MeshLimits,
    build_limit_table,
    limit_energy_atomistic,
    limit_energy_qc,
    min_limit,
    solve_boundary_layer,
)

__version__ = "0.1.0"
