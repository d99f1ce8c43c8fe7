"""Random-walk Metropolis on isotropically transformed targets.

Heavy or merely exponential tails are made super-exponentially light by
sampling ``gamma`` with ``beta = lambda + h(gamma)``, where ``h`` rescales the
radius and keeps the direction.  Draws are reported in ``beta``-space.
"""

from morphmc.density import (
    CallableTarget,
    CauchyLocationPosterior,
    Gaussian,
    LogitObservation,
    MultinomialLogitPosterior,
    MultivariateT,
    TargetDensity,
    TransformedDensity,
    transformed_grad_log_density,
    transformed_log_density,
)
from morphmc.diagnostics import (
    TailClass,
    TailReport,
    acceptance_rate,
    autocorrelation,
    batch_means_mcse,
    curvature_probe,
    ray_tail_probe,
)
from morphmc.morph import (
    MorphSpec,
    RadialFamily,
    grad_log_det_jacobian,
    h_apply,
    h_inverse,
    h_jacobian,
    log_det_jacobian,
)
from morphmc.sampler import ChainConfig, ChainOutput, ProposalSpec, run_chain

__version__ = "0.1.0"

__all__ = [
    "CallableTarget",
    "CauchyLocationPosterior",
    "ChainConfig",
    "ChainOutput",
    "Gaussian",
    "LogitObservation",
    "MorphSpec",
    "MultinomialLogitPosterior",
    "MultivariateT",
    "ProposalSpec",
    "RadialFamily",
    "TailClass",
    "TailReport",
    "TargetDensity",
    "TransformedDensity",
    "acceptance_rate",
    "autocorrelation",
    "batch_means_mcse",
    "curvature_probe",
    "grad_log_det_jacobian",
    "h_apply",
    "h_inverse",
    "h_jacobian",
    "log_det_jacobian",
    "ray_tail_probe",
    "run_chain",
    "transformed_grad_log_density",
    "transformed_log_density",
]
