"""Numeric probes of tail behaviour and standard MCMC output summaries.

The tail probes evaluate ``(x/|x|) . grad log pi(x)`` along rays.  Its limit
as ``|x| -> inf`` separates super-exponentially light tails (``-inf``),
exponentially light tails (a negative constant) and sub-exponentially light
tails (zero).  Probes at finite radii can only suggest the limit, so every
classification is advisory.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from morphmc.density import TargetDensity
from morphmc.sampler import ChainOutput

__all__ = [
    "CAVEAT",
    "CurvatureResult",
    "ProbeError",
    "SizeError",
    "TailClass",
    "TailReport",
    "acceptance_rate",
    "autocorrelation",
    "batch_means_mcse",
    "curvature_probe",
    "default_directions",
    "default_radii",
    "format_value",
    "parse_kv",
    "probe_gradient",
    "ray_tail_probe",
]

T_SUPER = 10.0
EPS = 0.05
C_MAX = 100.0
EPS_CURV = 0.05
# relative change allowed between the last two radii for "stabilized"
STABLE_RTOL = 0.1
RADIUS_LADDER = (10.0, 30.0, 100.0, 300.0, 1000.0)
N_RANDOM_DIRECTIONS = 20
FD_REL_STEP = 1e-4

CAVEAT = (
    "tail classes are limits as |x| -> inf; finite-radius probes can be fooled "
    "by densities whose tails oscillate, e.g. exp(-|x|) * (1 + cos(x))"
)


class ProbeError(ValueError):
    """The target could not be evaluated along one or more probe rays."""

    def __init__(self, message: str, rays: list[tuple[float, list[float]]]) -> None:
        super().__init__(f"{message}: {rays}")
        self.rays = rays


class SizeError(ValueError):
    """A series is too short for the requested summary."""


class TailClass(enum.Enum):
    SUPER_EXPONENTIAL = "SuperExponential"
    EXPONENTIAL = "Exponential"
    SUB_EXPONENTIAL = "SubExponential"
    INCONCLUSIVE = "Inconclusive"


def default_directions(k: int, seed: int = 0) -> np.ndarray:
    """Random unit vectors followed by the ``2k`` signed coordinate axes."""
    rng = np.random.default_rng(seed)
    random = rng.standard_normal((N_RANDOM_DIRECTIONS, k))
    random /= np.linalg.norm(random, axis=1, keepdims=True)
    axes = np.concatenate([np.eye(k), -np.eye(k)])
    return np.concatenate([random, axes])


def default_radii(max_radius: float = math.inf) -> np.ndarray:
    """The standard ladder, shrunk to fit inside ``max_radius`` if needed.

    When fewer than three ladder radii lie within half of ``max_radius`` the
    ladder is replaced by five radii doubling up to ``max_radius / 2``.
    """
    limit = 0.5 * max_radius
    radii = [r for r in RADIUS_LADDER if r <= limit]
    if len(radii) >= 3:
        return np.array(radii)
    return limit * 2.0 ** np.arange(-4.0, 1.0)


def probe_gradient(target: TargetDensity, x: np.ndarray) -> np.ndarray:
    """Analytic gradient, or central differences with a scale-aware step."""
    if target.has_gradient:
        return np.asarray(target.grad_log_density(x), dtype=float)
    h = FD_REL_STEP * max(1.0, float(np.linalg.norm(x)))
    grad = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (target.log_density(x + e) - target.log_density(x - e)) / (2.0 * h)
    return grad


def _probe_grid(target, directions, radii, center, max_workers):
    """Gradients at ``center + r u`` for every radius and direction."""

    def along(u):
        return [probe_gradient(target, center + r * u) for r in radii]

    if max_workers > 1 and target.shareable:
        with ThreadPoolExecutor(max_workers) as pool:
            per_direction = list(pool.map(along, directions))
    else:
        per_direction = [along(u) for u in directions]
    # shape (n_radii, n_directions, k)
    return np.array(per_direction).transpose(1, 0, 2)


def _prepare(target, directions, radii, center):
    k = target.dim
    directions = default_directions(k) if directions is None else np.atleast_2d(np.asarray(directions, float))
    if directions.shape[1] != k:
        raise ValueError(f"directions must have {k} columns")
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    radii = default_radii(target.max_radius) if radii is None else np.asarray(radii, float).reshape(-1)
    if radii.size == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and strictly increasing")
    if radii[-1] > target.max_radius:
        raise ValueError(f"radius {radii[-1]} is beyond the target's limit {target.max_radius}")
    center = np.zeros(k) if center is None else np.asarray(center, float).reshape(k)
    return directions, radii, center


@dataclass(frozen=True, eq=False)
class CurvatureResult:
    """Normalized radial gradient components and their verdict.

    ``values[i, j]`` is ``(x/|x|) . grad / |grad|`` at radius ``i`` along
    direction ``j``; NaN where the gradient vanished and the probe was
    skipped.  ``satisfied`` is None when every deciding probe was skipped.
    """

    values: np.ndarray
    satisfied: bool | None
    skipped: list[tuple[int, int]]


def _curvature_from_grads(directions, grads) -> CurvatureResult:
    norms = np.linalg.norm(grads, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.einsum("jk,ijk->ij", directions, grads) / norms
    values[norms == 0.0] = np.nan
    skipped = [tuple(int(v) for v in idx) for idx in np.argwhere(norms == 0.0)]
    deciding = values[-2:].ravel()
    deciding = deciding[~np.isnan(deciding)]
    satisfied = None if deciding.size == 0 else bool(deciding.max() <= -EPS_CURV)
    return CurvatureResult(values, satisfied, skipped)


def curvature_probe(
    target: TargetDensity,
    directions=None,
    radii=None,
    center=None,
    max_workers: int = 1,
) -> CurvatureResult:
    """Check that gradients point inwards at large radii.

    Satisfied when every probe at the two largest radii has
    ``(x/|x|) . grad/|grad| <= -0.05``.
    """
    directions, radii, center = _prepare(target, directions, radii, center)
    grads = _probe_grid(target, directions, radii, center, max_workers)
    return _curvature_from_grads(directions, grads)


@dataclass(frozen=True, eq=False)
class TailReport:
    radii: np.ndarray
    directions: np.ndarray
    inner_products: np.ndarray
    classification: TailClass
    alpha_estimate: float | None
    curvature_values: np.ndarray
    curvature_satisfied: bool | None
    skipped: list[tuple[int, int]] = field(default_factory=list)
    caveat: str = CAVEAT

    @property
    def worst_inner_products(self) -> np.ndarray:
        """Per radius, the largest (least negative) inner product over directions."""
        return self.inner_products.max(axis=1)

    def to_text(self, prefix: str = "") -> str:
        """Flat ``key = value`` lines, one per field."""
        curv = self.curvature_values
        with np.errstate(all="ignore"):
            max_curv = [np.nanmax(row) if np.any(~np.isnan(row)) else math.nan for row in curv]
        fields = [
            ("format_version", 1),
            ("classification", self.classification.value),
            ("alpha_estimate", self.alpha_estimate),
            ("curvature_satisfied", self.curvature_satisfied),
            ("radii", list(self.radii)),
            ("n_directions", self.directions.shape[0]),
            ("max_inner_product", list(self.worst_inner_products)),
            ("min_inner_product", list(self.inner_products.min(axis=1))),
            ("max_curvature", max_curv),
            ("skipped_probes", len(self.skipped)),
            ("caveat", self.caveat),
        ]
        return "".join(f"{prefix}{key} = {format_value(value)}\n" for key, value in fields)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def parse_kv(text: str) -> dict[str, str]:
    """Inverse of the ``key = value`` layout; values stay strings."""
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError(f"malformed report line: {line!r}")
        out[key.strip()] = value
    return out


def _classify(radii: np.ndarray, worst: np.ndarray) -> tuple[TailClass, float | None]:
    last = worst[-1]
    if len(worst) >= 3 and last <= -T_SUPER and worst[-3] > worst[-2] > last:
        return TailClass.SUPER_EXPONENTIAL, None
    if len(worst) >= 2:
        prev = worst[-2]
        if -C_MAX <= min(last, prev) and max(last, prev) <= -EPS and abs(last - prev) <= STABLE_RTOL * abs(last):
            return TailClass.EXPONENTIAL, None
        if -EPS < last < 0.0 and prev < 0.0:
            alpha, alpha_prev = -last * radii[-1], -prev * radii[-2]
            if abs(alpha - alpha_prev) <= STABLE_RTOL * alpha:
                return TailClass.SUB_EXPONENTIAL, float(alpha)
    return TailClass.INCONCLUSIVE, None


def ray_tail_probe(
    target: TargetDensity,
    directions=None,
    radii=None,
    center=None,
    max_workers: int = 1,
) -> TailReport:
    """Probe ``(x/|x|) . grad log pi(x)`` along rays and classify the tails.

    With ``V`` the maximum over directions at each radius:

    * SuperExponential: ``V <= -10`` at the largest radius and strictly
      decreasing over the last three radii;
    * Exponential: ``V`` in ``[-100, -0.05]`` at the last two radii, changing
      by at most 10%;
    * SubExponential: ``-0.05 < V < 0`` at the largest radius with
      ``-V * r`` changing by at most 10% over the last two radii; that
      product is reported as ``alpha_estimate``;
    * Inconclusive otherwise.

    Parameters
    ----------
    target : TargetDensity
        Uses the analytic gradient when available, central differences
        otherwise.
    directions : array_like, optional
        Rows are probe directions (normalized here).  Defaults to
        :func:`default_directions`.
    radii : array_like, optional
        Strictly increasing radii.  Defaults to :func:`default_radii`.
    center : array_like, optional
        Origin of the rays; zero by default.
    max_workers : int
        Directions are probed on a thread pool when above 1 and the target
        is marked shareable.

    Raises
    ------
    ProbeError
        If the gradient is not finite somewhere on a ray.
    """
    directions, radii, center = _prepare(target, directions, radii, center)
    grads = _probe_grid(target, directions, radii, center, max_workers)
    bad = ~np.all(np.isfinite(grads), axis=2)
    if np.any(bad):
        rays = [(float(radii[i]), directions[j].tolist()) for i, j in np.argwhere(bad)]
        raise ProbeError("non-finite gradient on probe rays", rays)
    inner = np.einsum("jk,ijk->ij", directions, grads)
    classification, alpha = _classify(radii, inner.max(axis=1))
    curvature = _curvature_from_grads(directions, grads)
    return TailReport(
        radii=radii,
        directions=directions,
        inner_products=inner,
        classification=classification,
        alpha_estimate=alpha,
        curvature_values=curvature.values,
        curvature_satisfied=curvature.satisfied,
        skipped=curvature.skipped,
    )


def acceptance_rate(output: ChainOutput) -> float:
    if output.n_proposed <= 0:
        raise ValueError("no proposals were made")
    return output.accept_count / output.n_proposed


def batch_means_mcse(series: Sequence[float], n_batches: int) -> tuple[float, float]:
    """Mean and Monte Carlo standard error from non-overlapping batch means.

    The series is cut into ``n_batches`` contiguous equal batches, dropping
    the remainder at the end.  The standard error is the standard deviation
    of the batch means over ``sqrt(n_batches)``; NaN for a single batch.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    if n_batches < 1:
        raise ValueError("n_batches must be positive")
    if x.size < 2 * n_batches:
        raise SizeError(f"series of length {x.size} is too short for {n_batches} batches")
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    if n_batches == 1:
        return float(means[0]), math.nan
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def autocorrelation(series: Sequence[float], max_lag: int) -> np.ndarray:
    """Biased sample autocorrelations at lags ``1..max_lag``.

    All NaN for a constant series.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    n = x.size
    if max_lag < 1:
        raise ValueError("max_lag must be positive")
    if not max_lag < n / 2:
        raise SizeError(f"max_lag {max_lag} needs a series longer than {2 * max_lag}")
    d = x - x.mean()
    peak = float(np.max(np.abs(d)))
    if peak == 0.0:
        return np.full(max_lag, np.nan)
    # rescaling keeps the products clear of underflow and overflow
    d = d / peak
    denom = float(d @ d)
    return np.array([float(d[:-lag] @ d[lag:]) / denom for lag in range(1, max_lag + 1)])
