"""Random-walk Metropolis in the transformed space.

The chain runs on ``gamma = h^{-1}(beta)``; kept draws are mapped back with
``h``.  Randomness comes from a PCG64 generator seeded through
:class:`numpy.random.SeedSequence`.  Each iteration consumes, in order, one
k-vector of standard normals (the proposal increment) and one uniform on
``[0, 1)`` (the acceptance test), whether or not the proposal is accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, NamedTuple

import numpy as np

from morphmc.density import TargetDensity, _transformed_log_density
from morphmc.morph import MorphRangeError, MorphSpec, h_apply, h_inverse

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "ChainState",
    "ConfigurationError",
    "MetropolisKernel",
    "ProposalSpec",
    "SamplingError",
    "accept_probability",
    "make_rng",
    "metropolis_step",
    "propose",
    "run_chain",
]


class ConfigurationError(ValueError):
    """A chain configuration violates its invariants."""


class SamplingError(RuntimeError):
    """Target evaluation failed part way through a chain."""

    def __init__(self, iteration: int, state: ChainState, cause: BaseException) -> None:
        super().__init__(
            f"iteration {iteration}: {type(cause).__name__}: {cause} "
            f"(gamma={state.position.tolist()}, log_density={state.log_density})"
        )
        self.iteration = iteration
        self.state = state


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """Seeded generator; distinct ``stream`` values give independent streams."""
    spawn_key = () if stream is None else (int(stream),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


@dataclass(frozen=True, eq=False)
class ProposalSpec:
    """Spherical Gaussian increment ``scale * coordinate_scales * z``."""

    scale: float
    coordinate_scales: np.ndarray | None = None

    def __post_init__(self) -> None:
        scale = float(self.scale)
        if not (math.isfinite(scale) and scale > 0.0):
            raise ConfigurationError(f"proposal scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", scale)
        if self.coordinate_scales is not None:
            coords = np.array(self.coordinate_scales, dtype=float).reshape(-1)
            if not np.all(np.isfinite(coords) & (coords > 0.0)):
                raise ConfigurationError("coordinate scales must be positive")
            coords.setflags(write=False)
            object.__setattr__(self, "coordinate_scales", coords)

    def step(self, k: int) -> float | np.ndarray:
        if self.coordinate_scales is None:
            return self.scale
        if self.coordinate_scales.shape[0] != k:
            raise ConfigurationError(
                f"{self.coordinate_scales.shape[0]} coordinate scales for dimension {k}"
            )
        return self.scale * self.coordinate_scales


class ChainState(NamedTuple):
    position: np.ndarray
    log_density: float


def propose(rng: np.random.Generator, proposal: ProposalSpec, current: np.ndarray) -> np.ndarray:
    k = current.shape[0]
    return current + proposal.step(k) * rng.standard_normal(k)


def accept_probability(log_pi_current: float, log_pi_candidate: float) -> float:
    """``min(1, pi(candidate) / pi(current))`` computed in log space."""
    if not log_pi_current > -math.inf:
        raise ValueError(f"current state has log density {log_pi_current}")
    if math.isnan(log_pi_candidate):
        raise ValueError("candidate log density is NaN")
    diff = log_pi_candidate - log_pi_current
    return 1.0 if diff >= 0.0 else math.exp(diff)


@dataclass(frozen=True)
class MetropolisKernel:
    """Log density of the chain's state space plus the proposal.

    Candidates beyond the morph guard evaluate to ``-inf`` and are rejected.
    """

    log_density: Callable[[np.ndarray], float]
    proposal: ProposalSpec

    def evaluate(self, x: np.ndarray) -> float:
        try:
            return self.log_density(x)
        except MorphRangeError:
            return -math.inf


def metropolis_step(
    rng: np.random.Generator, state: ChainState, kernel: MetropolisKernel
) -> tuple[ChainState, bool]:
    candidate = propose(rng, kernel.proposal, state.position)
    log_pi = kernel.evaluate(candidate)
    a = accept_probability(state.log_density, log_pi)
    if rng.random() < a:
        return ChainState(candidate, log_pi), True
    return state, False


@dataclass(frozen=True, eq=False)
class ChainConfig:
    target: TargetDensity
    morph: MorphSpec
    proposal: ProposalSpec
    initial_beta: np.ndarray
    n_iterations: int
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    # independent substream index; None uses the seed's root stream
    stream: int | None = None

    def __post_init__(self) -> None:
        beta = np.array(self.initial_beta, dtype=float).reshape(-1)
        object.__setattr__(self, "initial_beta", beta)
        k = self.target.dim
        if self.morph.dimension != k or beta.shape[0] != k:
            raise ConfigurationError(
                f"dimension mismatch: target {k}, morph {self.morph.dimension}, "
                f"initial_beta {beta.shape[0]}"
            )
        self.proposal.step(k)
        if self.n_iterations < 1:
            raise ConfigurationError("n_iterations must be positive")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ConfigurationError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ConfigurationError("thin must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def kept_iterations(self) -> range:
        return range(self.burn_in, self.n_iterations, self.thin)


@dataclass(frozen=True, eq=False)
class ChainOutput:
    """Kept draws in both spaces plus acceptance bookkeeping.

    Row ``i`` of every array belongs to iteration ``iterations[i]``
    (zero-based; iteration ``j`` is the state after ``j + 1`` proposals).
    """

    beta_draws: np.ndarray
    gamma_draws: np.ndarray
    iterations: np.ndarray
    log_density_trace: np.ndarray
    accept_count: int
    n_proposed: int
    seed: int
    stream: int | None = None
    initial_gamma: np.ndarray = field(default=None, repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.n_proposed


def run_chain(config: ChainConfig) -> ChainOutput:
    """Run random-walk Metropolis on the transformed target.

    The starting point is mapped to gamma-space once with ``h^{-1}``; kept
    gamma-draws are mapped back with ``h``.  Identical configurations give
    bit-identical outputs.
    """
    gamma = h_inverse(config.morph, config.initial_beta)
    kernel = MetropolisKernel(
        partial(_transformed_log_density, config.target, config.morph), config.proposal
    )
    log_pi = kernel.evaluate(gamma)
    if not log_pi > -math.inf:
        raise ConfigurationError(
            f"initial_beta {config.initial_beta.tolist()} has zero target density"
        )
    state = ChainState(gamma, log_pi)
    rng = make_rng(config.seed, config.stream)

    kept = config.kept_iterations
    k = config.target.dim
    gammas = np.empty((len(kept), k))
    trace = np.empty(len(kept))
    burn_in, thin = config.burn_in, config.thin
    accepted = 0
    row = 0
    for i in range(config.n_iterations):
        try:
            state, ok = metropolis_step(rng, state, kernel)
        except Exception as exc:
            raise SamplingError(i, state, exc) from exc
        accepted += ok
        if i >= burn_in and (i - burn_in) % thin == 0:
            gammas[row] = state.position
            trace[row] = state.log_density
            row += 1

    betas = np.array([h_apply(config.morph, g) for g in gammas]).reshape(len(kept), k)
    return ChainOutput(
        beta_draws=betas,
        gamma_draws=gammas,
        iterations=np.array(kept, dtype=np.int64),
        log_density_trace=trace,
        accept_count=accepted,
        n_proposed=config.n_iterations,
        seed=config.seed,
        stream=config.stream,
        initial_gamma=gamma,
    )
