import math

import numpy as np
import pytest
from hypothesis import strategies as st

from morphmc.density import LogitObservation, MultinomialLogitPosterior
from morphmc.morph import MorphSpec, RadialFamily


def central_jacobian(fn, x, rel_step=1e-6):
    """Central-difference Jacobian of a vector map (column j = d fn / d x_j)."""
    x = np.asarray(x, dtype=float)
    h = rel_step * max(1.0, float(np.linalg.norm(x)))
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.atleast_1d(fn(x + e)) - np.atleast_1d(fn(x - e))) / (2 * h))
    return np.column_stack(cols)


def central_gradient(fn, x, rel_step=1e-5):
    return central_jacobian(lambda y: np.array([fn(y)]), x, rel_step)[0]


def rel_err(actual, expected):
    actual, expected = np.asarray(actual, float), np.asarray(expected, float)
    scale = max(np.max(np.abs(expected)), 1e-300)
    return float(np.max(np.abs(actual - expected)) / scale)


families = st.one_of(
    st.just(RadialFamily.identity()),
    st.builds(
        RadialFamily.polynomial,
        R=st.floats(0.0, 3.0),
        p=st.floats(2.05, 5.0),
    ),
    st.builds(RadialFamily.exponential, b=st.floats(0.05, 2.0)),
)


@st.composite
def morphs(draw, max_k=5):
    k = draw(st.integers(1, max_k))
    center = draw(st.lists(st.floats(-5, 5), min_size=k, max_size=k))
    inner = draw(
        st.one_of(
            st.just(RadialFamily.identity()),
            st.builds(RadialFamily.polynomial, R=st.floats(0.0, 3.0), p=st.floats(2.05, 5.0)),
        )
    )
    outer = draw(st.one_of(st.none(), st.builds(RadialFamily.exponential, b=st.floats(0.05, 2.0))))
    return MorphSpec(np.array(center), inner, outer)


@st.composite
def morph_points(draw, max_beta=1e6, max_k=5):
    """A morph and a gamma whose image has norm at most ``max_beta``."""
    m = draw(morphs(max_k))
    cap = min(m.guard_radius, m.radial_inverse(max_beta))
    radius = draw(st.floats(0.0, 1.0)) ** 0.5 * cap
    direction = np.array(
        draw(st.lists(st.floats(-1, 1), min_size=m.dimension, max_size=m.dimension))
    )
    norm = np.linalg.norm(direction)
    if norm < 1e-3:
        direction = np.eye(m.dimension)[0]
        norm = 1.0
    return m, radius * direction / norm


def away_from_branches(m, gamma, margin=1e-3):
    s = float(np.linalg.norm(gamma))
    return all(abs(s - r) > margin for r in m.branch_radii) and s > margin


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def cauchy_quartile_error(draws):
    q = np.quantile(draws, [0.25, 0.5, 0.75])
    return q + np.array([1.0, 0.0, -1.0])


LOG_PI = math.log(math.pi)


def _safe_exp(logpdf, x):
    from morphmc.morph import MorphRangeError

    try:
        return math.exp(logpdf(x))
    except MorphRangeError:
        return 0.0


def integrate_mass(logpdf, k, center=None, epsrel=1e-10):
    """Integral of exp(logpdf) over R^k for k in {1, 2}.

    Gauss-Kronrod (scipy ``quad``) after the substitution r = tan(theta), in
    polar coordinates about ``center`` when k = 2.  Independent of the morph
    code: only pointwise evaluations of ``logpdf`` are used.
    """
    from scipy.integrate import quad

    c = np.zeros(k) if center is None else np.asarray(center, float)
    if k == 1:

        def integrand(theta):
            x = math.tan(theta)
            return _safe_exp(logpdf, c + np.array([x])) / math.cos(theta) ** 2

        half = math.pi / 2
        value = 0.0
        for lo, hi in [(-half, 0.0), (0.0, half)]:
            value += quad(integrand, lo, hi, epsabs=0.0, epsrel=epsrel, limit=400)[0]
        return value
    if k == 2:

        def radial(phi):
            u = np.array([math.cos(phi), math.sin(phi)])

            def integrand(psi):
                r = math.tan(psi)
                return _safe_exp(logpdf, c + r * u) * r / math.cos(psi) ** 2

            return quad(integrand, 0.0, math.pi / 2, epsabs=0.0, epsrel=epsrel, limit=200)[0]

        return quad(radial, 0.0, 2 * math.pi, epsabs=0.0, epsrel=epsrel, limit=200)[0]
    raise ValueError("k must be 1 or 2")


def binary_logit():
    obs = LogitObservation(counts=[1, 1], prior_prob=[0.5, 0.5], prior_size=1.0, model_matrix=[[0.0], [1.0]])
    return MultinomialLogitPosterior([obs])


def three_category_logit():
    """Two coefficients, three response categories, three covariate settings."""
    observations = []
    for x, counts in [(-1.0, [3, 1, 0]), (0.0, [1, 2, 1]), (1.5, [0, 2, 4])]:
        M = np.array([[0.0, 0.0], [1.0, x], [x, 1.0]])
        observations.append(LogitObservation(counts, [0.2, 0.3, 0.5], 2.0, M))
    return MultinomialLogitPosterior(observations)


# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
