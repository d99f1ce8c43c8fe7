"""Target densities and the density induced by a transformation.

Every target is an unnormalized log density on R^k with an optional
gradient.  :class:`TransformedDensity` is itself a target, so the sampler
and the tail probes treat original and transformed densities alike.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp, softmax

from morphmc.morph import MorphSpec, _as_vector, _guarded_norm, _norm

__all__ = [
    "CallableTarget",
    "CauchyLocationPosterior",
    "Gaussian",
    "GradientUnavailableError",
    "LogitObservation",
    "MultinomialLogitPosterior",
    "MultivariateT",
    "TargetDensity",
    "TransformedDensity",
    "transformed_grad_log_density",
    "transformed_log_density",
]

# Beyond this Mahalanobis norm the t quadratic form is handled in log space.
_BIG_NORM = 1e100


class GradientUnavailableError(NotImplementedError):
    """The target does not provide an analytic gradient."""


class TargetDensity:
    """Unnormalized log density on R^k.

    Subclasses implement :meth:`log_density` and, when they can,
    :meth:`grad_log_density`.  ``shareable`` marks evaluators that are safe
    to call from several threads or processes at once.
    """

    dim: int
    has_gradient: bool = True
    shareable: bool = True
    # radius beyond which the density must not be probed
    max_radius: float = math.inf

    def log_density(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad_log_density(self, x: np.ndarray) -> np.ndarray:
        raise GradientUnavailableError(f"{type(self).__name__} has no gradient")

    def _vector(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"expected a vector of length {self.dim}, got {x.shape[0]}")
        return x


class CallableTarget(TargetDensity):
    """Wrap plain functions as a target."""

    def __init__(
        self,
        dim: int,
        log_density: Callable[[np.ndarray], float],
        grad_log_density: Callable[[np.ndarray], np.ndarray] | None = None,
        shareable: bool = False,
    ) -> None:
        self.dim = int(dim)
        self._log_density = log_density
        self._grad = grad_log_density
        self.has_gradient = grad_log_density is not None
        self.shareable = shareable

    def log_density(self, x):
        return float(self._log_density(self._vector(x)))

    def grad_log_density(self, x):
        if self._grad is None:
            raise GradientUnavailableError("no gradient function was supplied")
        return np.asarray(self._grad(self._vector(x)), dtype=float)


class Gaussian(TargetDensity):
    """Normal distribution with mean ``mean`` and covariance ``cov`` (default identity).

    The log density includes the normalizing constant.
    """

    def __init__(self, mean, cov=None) -> None:
        self.mean = np.array(mean, dtype=float).reshape(-1)
        self.dim = self.mean.shape[0]
        cov = np.eye(self.dim) if cov is None else np.array(cov, dtype=float)
        if cov.shape != (self.dim, self.dim):
            raise ValueError("cov must be k x k")
        chol = np.linalg.cholesky(cov)
        self._chol_inv = np.linalg.inv(chol)
        self.cov = cov
        self.log_normalizer = -0.5 * self.dim * math.log(2 * math.pi) - float(
            np.sum(np.log(np.diag(chol)))
        )

    def log_density(self, x):
        r = _norm(self._chol_inv @ (self._vector(x) - self.mean))
        return self.log_normalizer - 0.5 * r * r

    def grad_log_density(self, x):
        z = self._chol_inv @ (self._vector(x) - self.mean)
        return -(self._chol_inv.T @ z)


class MultivariateT(TargetDensity):
    """Multivariate t with ``df`` degrees of freedom, location ``loc`` and scale ``scale``.

    Parameters
    ----------
    df : float
        Degrees of freedom, ``> 0``.  ``df = 1`` gives the Cauchy.
    loc : array_like
        Location vector of length k.
    scale : array_like, optional
        Symmetric positive-definite k x k scale matrix; identity by default.
    """

    def __init__(self, df: float, loc, scale=None) -> None:
        self.df = float(df)
        if not (math.isfinite(self.df) and self.df > 0):
            raise ValueError(f"df must be positive, got {df}")
        self.loc = np.array(loc, dtype=float).reshape(-1)
        self.dim = k = self.loc.shape[0]
        scale = np.eye(k) if scale is None else np.array(scale, dtype=float).reshape(k, k)
        if not np.allclose(scale, scale.T):
            raise ValueError("scale must be symmetric")
        try:
            chol = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError as exc:
            raise ValueError("scale must be positive definite") from exc
        self.scale = scale
        self._chol_inv = np.linalg.inv(chol)
        nu = self.df
        self.log_normalizer = (
            math.lgamma(0.5 * (nu + k))
            - math.lgamma(0.5 * nu)
            - 0.5 * k * math.log(nu * math.pi)
            - float(np.sum(np.log(np.diag(chol))))
        )

    def _whiten(self, t) -> tuple[np.ndarray, float]:
        z = self._chol_inv @ (self._vector(t) - self.loc)
        return z, _norm(z)

    def log_density(self, t):
        nu, k = self.df, self.dim
        z, r = self._whiten(t)
        if r < _BIG_NORM:
            log_bracket = math.log1p(r * r / nu)
        else:
            log_bracket = 2.0 * math.log(r) - math.log(nu) + math.log1p(nu / r / r)
        return self.log_normalizer - 0.5 * (nu + k) * log_bracket

    def grad_log_density(self, t):
        nu, k = self.df, self.dim
        z, r = self._whiten(t)
        if r < _BIG_NORM:
            w = z / (nu + r * r)
        else:
            w = (z / r) / (nu / r + r)
        return -(nu + k) * (self._chol_inv.T @ w)


@dataclass(frozen=True, eq=False)
class LogitObservation:
    """One multinomial observation with its conjugate-prior pseudo-counts.

    ``model_matrix`` has one row per response category and one column per
    regression coefficient.
    """

    counts: np.ndarray
    prior_prob: np.ndarray
    prior_size: float
    model_matrix: np.ndarray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=float).reshape(-1)
        prior_prob = np.array(self.prior_prob, dtype=float).reshape(-1)
        model_matrix = np.atleast_2d(np.array(self.model_matrix, dtype=float))
        n_cat = counts.shape[0]
        if prior_prob.shape != (n_cat,) or model_matrix.shape[0] != n_cat:
            raise ValueError("counts, prior_prob and model_matrix rows must agree")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        if np.any(prior_prob < 0) or not math.isclose(prior_prob.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("prior_prob must lie on the simplex")
        if not self.prior_size >= 0:
            raise ValueError("prior_size must be nonnegative")
        if np.any(counts + prior_prob * self.prior_size <= 0):
            raise ValueError("every cell needs positive data plus prior count")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "prior_prob", prior_prob)
        object.__setattr__(self, "prior_size", float(self.prior_size))
        object.__setattr__(self, "model_matrix", model_matrix)

    @property
    def cell_totals(self) -> np.ndarray:
        return self.counts + self.prior_prob * self.prior_size

    @property
    def total(self) -> float:
        return float(self.counts.sum()) + self.prior_size


class MultinomialLogitPosterior(TargetDensity):
    """Multinomial logit regression posterior under the conjugate prior."""

    def __init__(self, observations: Sequence[LogitObservation]) -> None:
        if not observations:
            raise ValueError("need at least one observation")
        self.observations = tuple(observations)
        dims = {obs.model_matrix.shape[1] for obs in self.observations}
        if len(dims) != 1:
            raise ValueError("all model matrices need the same number of columns")
        (self.dim,) = dims
        # (y + xi nu)^T M per observation, and its total n + nu
        self._linear = sum(obs.cell_totals @ obs.model_matrix for obs in self.observations)
        self._weights = np.array([obs.total for obs in self.observations])
        self._matrices = [obs.model_matrix for obs in self.observations]

    def log_density(self, beta):
        beta = self._vector(beta)
        value = float(self._linear @ beta)
        for w, M in zip(self._weights, self._matrices):
            value -= w * float(logsumexp(M @ beta))
        return value

    def grad_log_density(self, beta):
        beta = self._vector(beta)
        grad = self._linear.copy()
        for w, M in zip(self._weights, self._matrices):
            grad -= w * (M.T @ softmax(M @ beta))
        return grad

    def gradient_bound(self) -> float:
        """Bound on the gradient norm that holds for every ``beta``."""
        return float(
            sum(
                np.linalg.norm(obs.model_matrix, 2) * (obs.total + obs.cell_totals.sum())
                for obs in self.observations
            )
        )


class CauchyLocationPosterior(TargetDensity):
    """Posterior of a Cauchy location parameter under a flat prior."""

    dim = 1

    def __init__(self, data) -> None:
        self.data = np.array(data, dtype=float).reshape(-1)
        if self.data.size == 0:
            raise ValueError("need at least one observation")

    def value_and_derivative(self, mu: float) -> tuple[float, float]:
        d = self.data - float(mu)
        return -float(np.sum(np.log1p(d * d))), float(np.sum(2.0 * d / (1.0 + d * d)))

    def log_density(self, x):
        d = self.data - self._vector(x)[0]
        return -float(np.sum(np.log1p(d * d)))

    def grad_log_density(self, x):
        d = self.data - self._vector(x)[0]
        return np.array([np.sum(2.0 * d / (1.0 + d * d))])


def transformed_log_density(target: TargetDensity, morph: MorphSpec, gamma) -> float:
    """``log pi_beta(h(gamma)) + log det grad h(gamma)``.

    Raises :class:`~morphmc.morph.MorphRangeError` beyond the morph guard.
    """
    return _transformed_log_density(target, morph, _as_vector(morph, gamma))


def _transformed_log_density(target, morph, gamma):
    # gamma is already a float vector of the right length
    s = _guarded_norm(morph, gamma)
    f, log_det = morph.radial_and_log_det(s)
    beta = morph.center if s == 0.0 else morph.center + (f / s) * gamma
    log_pi = target.log_density(beta)
    if log_pi == -math.inf:
        return log_pi
    return log_pi + log_det


def transformed_grad_log_density(target: TargetDensity, morph: MorphSpec, gamma) -> np.ndarray:
    """Gradient of :func:`transformed_log_density`."""
    if not target.has_gradient:
        raise GradientUnavailableError(f"{type(target).__name__} has no gradient")
    gamma = _as_vector(morph, gamma)
    s = _guarded_norm(morph, gamma)
    if not morph.stages:
        return target.grad_log_density(morph.center + gamma)
    if s == 0.0:
        return math.exp(morph.log_fprime_zero) * target.grad_log_density(morph.center)
    f, f1, _ = morph.radial_derivs(s)
    u = gamma / s
    g = target.grad_log_density(morph.center + f * u)
    # grad h is symmetric: (f/s) I + (f' - f/s) u u^T applied to g
    ratio = f / s
    pulled = ratio * g + (f1 - ratio) * float(u @ g) * u
    return pulled + (morph.radial_log_det_slope(s) / s) * gamma


class TransformedDensity(TargetDensity):
    """Density of ``gamma = h^{-1}(beta)`` when ``beta`` follows ``target``."""

    def __init__(self, target: TargetDensity, morph: MorphSpec) -> None:
        if target.dim != morph.dimension:
            raise ValueError(
                f"target has dimension {target.dim} but morph has {morph.dimension}"
            )
        self.target = target
        self.morph = morph
        self.dim = target.dim
        self.has_gradient = target.has_gradient
        self.shareable = target.shareable

    @cached_property
    def max_radius(self) -> float:
        return self.morph.guard_radius

    def log_density(self, gamma):
        return _transformed_log_density(self.target, self.morph, self._vector(gamma))

    def grad_log_density(self, gamma):
        return transformed_grad_log_density(self.target, self.morph, gamma)
