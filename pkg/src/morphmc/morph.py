"""Isotropic diffeomorphisms of R^k and their derivatives.

An isotropic map sends ``gamma`` to ``f(|gamma|) * gamma / |gamma|`` for a
strictly increasing radial function ``f`` with ``f(0) = 0``.  Three radial
families are provided:

* identity, ``f(s) = s``;
* polynomial, ``f(s) = s`` for ``s < R`` and ``s + (s - R)**p`` beyond, which
  turns exponentially light tails into super-exponentially light ones;
* exponential, a cubic near the origin joined twice-differentiably at
  ``s = 1/b`` to ``exp(b s) - e/3``, which turns polynomially decaying tails
  into exponentially light ones.

A :class:`MorphSpec` chains a polynomial-type stage, an optional
exponential-type stage and a translation, ``beta = center + h2(h1(gamma))``.
Radial quantities are composed stage by stage with the chain rule so every
stage stays independently testable.

All radial helpers work on Python floats; the vector-level functions accept
anything :func:`numpy.asarray` understands.
"""

from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "ConvergenceError",
    "Kind",
    "MorphRangeError",
    "MorphSpec",
    "NEAR_ZERO",
    "RadialFamily",
    "f_derivs",
    "f_eval",
    "f_inv",
    "grad_log_det_jacobian",
    "h_apply",
    "h_inverse",
    "h_jacobian",
    "log_det_jacobian",
]

E = math.e
LOG_MAX = math.log(sys.float_info.max)
# Nats kept free below overflow so f' and f'' stay finite at the guard.
HEADROOM = 40.0
# Radii below this use the limit formulas at the origin.
NEAR_ZERO = 1e-8

_NEWTON_RTOL = 1e-12
_NEWTON_MAXITER = 200


class MorphRangeError(ValueError):
    """A radius lies beyond the overflow guard of a transformation."""

    def __init__(self, radius: float, guard: float) -> None:
        super().__init__(f"radius {radius!r} exceeds overflow guard {guard!r}")
        self.radius = radius
        self.guard = guard


class ConvergenceError(ArithmeticError):
    """Safeguarded Newton iteration did not converge."""

    def __init__(self, target: float, bracket: tuple[float, float]) -> None:
        super().__init__(
            f"no convergence solving f(s) = {target!r}; last bracket {bracket!r}"
        )
        self.target = target
        self.bracket = bracket


class Kind(enum.Enum):
    IDENTITY = "identity"
    POLYNOMIAL = "polynomial"
    EXPONENTIAL = "exponential"


def _solve_increasing(fn, target, lo, hi, x0):
    """Solve ``fn(x)[0] == target`` for strictly increasing ``fn`` on ``[lo, hi]``.

    ``fn`` returns ``(value, derivative)``.  Newton steps that leave the
    current bracket are replaced by bisection, so the iteration always
    terminates once the bracket is small.
    """
    x = min(max(x0, lo), hi)
    for _ in range(_NEWTON_MAXITER):
        value, deriv = fn(x)
        resid = value - target
        if resid == 0.0:
            return x
        if resid > 0.0:
            hi = x
        else:
            lo = x
        x_new = x - resid / deriv if deriv > 0.0 else lo - 1.0
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= _NEWTON_RTOL * abs(x_new) or hi - lo <= _NEWTON_RTOL * hi:
            return x_new
        x = x_new
    raise ConvergenceError(target, (lo, hi))


@dataclass(frozen=True)
class RadialFamily:
    """Radial function ``f: [0, inf) -> [0, inf)`` of an isotropic map.

    Use the :meth:`identity`, :meth:`polynomial` and :meth:`exponential`
    constructors.  ``R`` and ``p`` are only meaningful for the polynomial
    family and ``b`` only for the exponential one.
    """

    kind: Kind
    R: float = 0.0
    p: float = 3.0
    b: float = 0.1
    guard: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        for name in ("R", "p", "b"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if kind is Kind.POLYNOMIAL:
            if not (math.isfinite(self.R) and self.R >= 0.0):
                raise ValueError(f"polynomial family needs R >= 0, got {self.R}")
            if not (math.isfinite(self.p) and self.p > 2.0):
                raise ValueError(f"polynomial family needs p > 2, got {self.p}")
            guard = self.R + math.exp((LOG_MAX - HEADROOM) / self.p)
        elif kind is Kind.EXPONENTIAL:
            if not (math.isfinite(self.b) and self.b > 0.0):
                raise ValueError(f"exponential family needs b > 0, got {self.b}")
            guard = (LOG_MAX - HEADROOM) / self.b
        else:
            guard = math.inf
        object.__setattr__(self, "guard", guard)

    @classmethod
    def identity(cls) -> RadialFamily:
        return cls(Kind.IDENTITY)

    @classmethod
    def polynomial(cls, R: float, p: float = 3.0) -> RadialFamily:
        """Requires ``p > 2``.

        Just above ``R`` the second derivative behaves like ``(s - R)**(p - 2)``,
        so for ``p`` close to 2 it rises steeply and finite-difference checks
        near ``R`` lose accuracy.
        """
        return cls(Kind.POLYNOMIAL, R=R, p=p)

    @classmethod
    def exponential(cls, b: float = 0.1) -> RadialFamily:
        return cls(Kind.EXPONENTIAL, b=b)

    @property
    def branch_point(self) -> float | None:
        """Radius where the piecewise definition switches, if any."""
        if self.kind is Kind.POLYNOMIAL:
            return self.R
        if self.kind is Kind.EXPONENTIAL:
            return 1.0 / self.b
        return None

    # cubic-branch coefficients of the exponential family: f(s) = a s^3 + c s
    @cached_property
    def _cubic(self) -> tuple[float, float]:
        b = self.b
        return b**3 * E / 6.0, b * E / 2.0

    def _check(self, s: float) -> None:
        if s > self.guard:
            raise MorphRangeError(s, self.guard)

    def value(self, s: float) -> float:
        self._check(s)
        kind = self.kind
        if kind is Kind.POLYNOMIAL:
            return s if s < self.R else s + (s - self.R) ** self.p
        if kind is Kind.EXPONENTIAL:
            if s * self.b > 1.0:
                return math.exp(self.b * s) - E / 3.0
            a, c = self._cubic
            return s * (a * s * s + c)
        return s

    def derivs(self, s: float) -> tuple[float, float, float]:
        """``(f(s), f'(s), f''(s))``."""
        self._check(s)
        kind = self.kind
        if kind is Kind.POLYNOMIAL:
            if s < self.R:
                return s, 1.0, 0.0
            p, u = self.p, s - self.R
            return s + u**p, 1.0 + p * u ** (p - 1.0), p * (p - 1.0) * u ** (p - 2.0)
        if kind is Kind.EXPONENTIAL:
            b = self.b
            if s * b > 1.0:
                ebs = math.exp(b * s)
                return ebs - E / 3.0, b * ebs, b * b * ebs
            a, c = self._cubic
            return s * (a * s * s + c), 3.0 * a * s * s + c, 6.0 * a * s
        return s, 1.0, 0.0

    def log_fprime(self, s: float) -> float:
        """``log f'(s)``, evaluated without forming ``f'`` where it could overflow."""
        kind = self.kind
        if kind is Kind.POLYNOMIAL:
            if s < self.R:
                return 0.0
            return math.log1p(self.p * (s - self.R) ** (self.p - 1.0))
        if kind is Kind.EXPONENTIAL:
            if s * self.b > 1.0:
                return math.log(self.b) + self.b * s
            a, c = self._cubic
            return math.log(3.0 * a * s * s + c)
        return 0.0

    def log_ratio(self, s: float) -> float:
        """``log(f(s) / s)``, with its limit ``log f'(0)`` at ``s = 0``."""
        kind = self.kind
        if kind is Kind.POLYNOMIAL:
            if s < self.R or s == 0.0:
                return 0.0
            return math.log1p((s - self.R) ** self.p / s)
        if kind is Kind.EXPONENTIAL:
            b = self.b
            if s * b > 1.0:
                return b * s + math.log1p(-E / 3.0 * math.exp(-b * s)) - math.log(s)
            a, c = self._cubic
            return math.log(a * s * s + c)
        return 0.0

    def rel_excess(self, s: float) -> float:
        """``s f'(s) / f(s) - 1`` in cancellation-free form (0 at the origin)."""
        kind = self.kind
        if kind is Kind.POLYNOMIAL:
            if s < self.R or s == 0.0:
                return 0.0
            p, u = self.p, s - self.R
            return u ** (p - 1.0) * ((p - 1.0) * s + self.R) / (s + u**p)
        if kind is Kind.EXPONENTIAL:
            b = self.b
            if s * b > 1.0:
                tail = E / 3.0 * math.exp(-b * s)
                return (b * s - 1.0 + tail) / (1.0 - tail)
            a, c = self._cubic
            return 2.0 * a * s * s / (a * s * s + c)
        return 0.0

    def curvature(self, s: float) -> float:
        """``f''(s) / f'(s)``."""
        kind = self.kind
        if kind is Kind.POLYNOMIAL:
            if s < self.R:
                return 0.0
            p, u = self.p, s - self.R
            return p * (p - 1.0) * u ** (p - 2.0) / (1.0 + p * u ** (p - 1.0))
        if kind is Kind.EXPONENTIAL:
            if s * self.b > 1.0:
                return self.b
            a, c = self._cubic
            return 6.0 * a * s / (3.0 * a * s * s + c)
        return 0.0

    def inverse(self, t: float) -> float:
        kind = self.kind
        if t == 0.0 or kind is Kind.IDENTITY:
            return t
        if kind is Kind.POLYNOMIAL:
            if t < self.R:
                return t
            return self.R + self._poly_tail_inverse(t - self.R)
        b = self.b
        if t > 2.0 * E / 3.0:
            return math.log(t + E / 3.0) / b
        a, c = self._cubic

        def cubic(s):
            return s * (a * s * s + c), 3.0 * a * s * s + c

        return _solve_increasing(cubic, t, 0.0, 1.0 / b, t / c)

    def _poly_tail_inverse(self, c: float) -> float:
        # unique u >= 0 with u + u**p = c; u <= c always brackets the root
        p = self.p

        def tail(u):
            return u + u**p, 1.0 + p * u ** (p - 1.0)

        if p == 3.0:
            # depressed cubic u^3 + u - c = 0 (Cardano), then one Newton polish
            A = (0.5 * c + math.hypot(0.5 * c, 1.0 / math.sqrt(27.0))) ** (1.0 / 3.0)
            u = A - 1.0 / (3.0 * A)
            if 0.0 < u <= c:
                value, deriv = tail(u)
                u_new = u - (value - c) / deriv
                if 0.0 < u_new <= c:
                    return u_new
        x0 = c ** (1.0 / p) if c > 1.0 else c
        return _solve_increasing(tail, c, 0.0, c, x0)


IDENTITY = RadialFamily.identity()


def _check_radius(fam: RadialFamily, s: float) -> float:
    s = float(s)
    if not s >= 0.0:
        raise ValueError(f"radius must be nonnegative, got {s}")
    return s


def f_eval(fam: RadialFamily, s: float) -> float:
    """Radial function value ``f(s)``."""
    return fam.value(_check_radius(fam, s))


def f_derivs(fam: RadialFamily, s: float) -> tuple[float, float, float]:
    """``(f(s), f'(s), f''(s))`` for one radial family."""
    return fam.derivs(_check_radius(fam, s))


def f_inv(fam: RadialFamily, t: float) -> float:
    """Inverse radial function ``f^{-1}(t)``.

    Closed forms are used for the ``p = 3`` polynomial family and the upper
    exponential branch; other cases use safeguarded Newton iteration.

    Raises
    ------
    ConvergenceError
        If the iteration cap is hit; carries the last bracket.
    """
    t = float(t)
    if not t >= 0.0:
        raise ValueError(f"f_inv needs t >= 0, got {t}")
    return fam.inverse(t)


@dataclass(frozen=True, eq=False)
class MorphSpec:
    """Translation plus up to two isotropic stages.

    The realized map is ``h(gamma) = center + h_outer(h_inner(gamma))``.  The
    ``inner`` stage is applied first and is normally a polynomial family; the
    optional ``outer`` stage is normally an exponential family.
    """

    center: np.ndarray
    inner: RadialFamily = IDENTITY
    outer: RadialFamily | None = None

    def __post_init__(self) -> None:
        center = np.array(self.center, dtype=float).reshape(-1)
        if center.size == 0:
            raise ValueError("center must have at least one coordinate")
        if not np.all(np.isfinite(center)):
            raise ValueError("center must be finite")
        center.setflags(write=False)
        object.__setattr__(self, "center", center)

    @classmethod
    def identity(cls, k: int) -> MorphSpec:
        return cls(np.zeros(k))

    @classmethod
    def from_constants(
        cls,
        center,
        R: float | None = None,
        p: float = 3.0,
        b: float | None = None,
    ) -> MorphSpec:
        """Build from the tuning constants; ``None`` leaves a stage out."""
        inner = IDENTITY if R is None else RadialFamily.polynomial(R, p)
        outer = None if b is None else RadialFamily.exponential(b)
        return cls(center, inner, outer)

    @property
    def dimension(self) -> int:
        return self.center.shape[0]

    @cached_property
    def stages(self) -> tuple[RadialFamily, ...]:
        stages = (self.inner,) if self.outer is None else (self.inner, self.outer)
        return tuple(st for st in stages if st.kind is not Kind.IDENTITY)

    @cached_property
    def guard_radius(self) -> float:
        """Largest ``|gamma|`` for which every stage stays below its guard."""
        radius = math.inf
        for stage in reversed(self.stages):
            if math.isfinite(radius):
                radius = stage.inverse(radius) * (1.0 - 1e-12)
            radius = min(radius, stage.guard)
        return radius

    @cached_property
    def branch_radii(self) -> tuple[float, ...]:
        """Radii in gamma-space where some stage switches branch."""
        radii = []
        for i, stage in enumerate(self.stages):
            point = stage.branch_point
            if point is None:
                continue
            for prev in reversed(self.stages[:i]):
                point = prev.inverse(point)
            radii.append(point)
        return tuple(radii)

    @cached_property
    def log_fprime_zero(self) -> float:
        return sum(st.log_fprime(0.0) for st in self.stages)

    def radial(self, s: float) -> float:
        for stage in self.stages:
            s = stage.value(s)
        return s

    def radial_inverse(self, t: float) -> float:
        for stage in reversed(self.stages):
            t = stage.inverse(t)
        return t

    def radial_derivs(self, s: float) -> tuple[float, float, float]:
        """Composed ``(f, f', f'')`` by the chain rule."""
        f, f1, f2 = s, 1.0, 0.0
        for stage in self.stages:
            g, g1, g2 = stage.derivs(f)
            f, f1, f2 = g, g1 * f1, g2 * f1 * f1 + g1 * f2
        return f, f1, f2

    def radial_log_det(self, s: float) -> float:
        """``log det grad h`` at any point of radius ``s``."""
        k = self.dimension
        if s < NEAR_ZERO:
            return k * self.log_fprime_zero
        total = 0.0
        for stage in self.stages:
            total += stage.log_fprime(s) + (k - 1) * stage.log_ratio(s)
            s = stage.value(s)
        return total

    def radial_and_log_det(self, s: float) -> tuple[float, float]:
        """``(f(s), log det grad h)`` in a single pass over the stages."""
        k = self.dimension
        if s < NEAR_ZERO:
            return self.radial(s), k * self.log_fprime_zero
        total = 0.0
        for stage in self.stages:
            total += stage.log_fprime(s) + (k - 1) * stage.log_ratio(s)
            s = stage.value(s)
        return s, total

    def radial_log_det_slope(self, s: float) -> float:
        """Derivative in ``s`` of :meth:`radial_log_det`.

        Equals ``f''/f' + (k - 1) * (f'/f - 1/s)`` for the composed ``f``.
        Tracks ``f''/f'`` and ``s f'/f - 1`` through the stages, which stays
        finite where ``f'`` and ``f''`` alone would overflow.
        """
        if s < NEAR_ZERO:
            return 0.0
        k = self.dimension
        x, curv, excess, dfds = s, 0.0, 0.0, 1.0
        for stage in self.stages:
            g_curv, g_excess = stage.curvature(x), stage.rel_excess(x)
            curv = g_curv * dfds + curv
            excess = g_excess + excess + g_excess * excess
            dfds *= math.exp(stage.log_fprime(x))
            x = stage.value(x)
        return curv + (k - 1) * excess / s


def _as_vector(m: MorphSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != m.dimension:
        raise ValueError(f"expected a vector of length {m.dimension}, got {x.shape[0]}")
    return x


def _norm(x: np.ndarray) -> float:
    return math.hypot(*x.tolist())


def _guarded_norm(m: MorphSpec, gamma: np.ndarray) -> float:
    s = _norm(gamma)
    if s > m.guard_radius:
        raise MorphRangeError(s, m.guard_radius)
    return s


def h_apply(m: MorphSpec, gamma) -> np.ndarray:
    """Map ``gamma`` to ``beta = center + f(|gamma|) gamma / |gamma|``."""
    gamma = _as_vector(m, gamma)
    s = _guarded_norm(m, gamma)
    if s == 0.0:
        return m.center.copy()
    return m.center + (m.radial(s) / s) * gamma


def h_inverse(m: MorphSpec, beta) -> np.ndarray:
    """Map ``beta`` back to ``gamma``, undoing the stages in reverse order."""
    d = _as_vector(m, beta) - m.center
    r = _norm(d)
    if r == 0.0:
        return np.zeros_like(d)
    return (m.radial_inverse(r) / r) * d


def h_jacobian(m: MorphSpec, gamma) -> np.ndarray:
    """Jacobian matrix of :func:`h_apply` (symmetric by construction)."""
    gamma = _as_vector(m, gamma)
    s = _guarded_norm(m, gamma)
    k = m.dimension
    if s < NEAR_ZERO:
        return math.exp(m.log_fprime_zero) * np.eye(k)
    f, f1, _ = m.radial_derivs(s)
    u = gamma / s
    return (f / s) * np.eye(k) + (f1 - f / s) * np.outer(u, u)


def log_det_jacobian(m: MorphSpec, gamma) -> float:
    """``log det grad h(gamma)``; always finite below the guard."""
    gamma = _as_vector(m, gamma)
    return m.radial_log_det(_guarded_norm(m, gamma))


def grad_log_det_jacobian(m: MorphSpec, gamma) -> np.ndarray:
    """Gradient of :func:`log_det_jacobian`; radial, and zero at the origin."""
    gamma = _as_vector(m, gamma)
    s = _guarded_norm(m, gamma)
    if s < NEAR_ZERO:
        return np.zeros_like(gamma)
    return (m.radial_log_det_slope(s) / s) * gamma
