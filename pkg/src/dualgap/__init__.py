"""Primal-dual certificates for f-divergences, Wasserstein distances and the
restricted f-GAN / WAE objectives on finite spaces."""

__version__ = "0.1.0"

from .errors import ContractError, ConvergenceError, InputError, UnsupportedGeneratorError
from .space import (CostMatrix, DiscreteDistribution, FiniteMetricSpace, PushforwardMap,
                    check_partial_pushforward, diameter, pushforward)
from .fgen import (BUILTINS, FGenerator, conjugate, conjugate_numeric, custom_generator, f_divergence,
                   get_generator, scale_conjugate)
from .transport import (Coupling, DualPotentials, SinkhornConfig, ipm, kantorovich_dual, sinkhorn,
                        wasserstein_primal)
from .duality import (Encoder, MarginalPenaltyProblem, SolverConfig, fgan_direct, fwae_objective, gamma_star,
                      lambda_star_estimate, reconstruction_bound_check, restricted_fgan, solve_marginal_penalty,
                      wae_objective)

__all__ = [
    "ContractError", "ConvergenceError", "InputError", "UnsupportedGeneratorError",
    "CostMatrix", "DiscreteDistribution", "FiniteMetricSpace", "PushforwardMap",
    "check_partial_pushforward", "diameter", "pushforward",
    "BUILTINS", "FGenerator", "conjugate", "conjugate_numeric", "custom_generator", "f_divergence",
    "get_generator", "scale_conjugate",
    "Coupling", "DualPotentials", "SinkhornConfig", "ipm", "kantorovich_dual", "sinkhorn", "wasserstein_primal",
    "Encoder", "MarginalPenaltyProblem", "SolverConfig", "fgan_direct", "fwae_objective", "gamma_star",
    "lambda_star_estimate", "reconstruction_bound_check", "restricted_fgan", "solve_marginal_penalty",
    "wae_objective",
]
