import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LOG_PI, binary_logit, central_gradient, integrate_mass, three_category_logit
from morphmc.density import (
    CallableTarget,
    CauchyLocationPosterior,
    Gaussian,
    GradientUnavailableError,
    LogitObservation,
    MultinomialLogitPosterior,
    MultivariateT,
    TransformedDensity,
    transformed_grad_log_density,
    transformed_log_density,
)
from morphmc.morph import MorphRangeError, MorphSpec

CAUCHY = MultivariateT(1.0, [0.0])


class TestMultivariateT:
    def test_cauchy_normalizer(self):
        assert CAUCHY.log_density([0.0]) == pytest.approx(-LOG_PI, rel=1e-15)
        assert CAUCHY.log_density([0.0]) == pytest.approx(-1.1447299, abs=1e-7)

    def test_cauchy_at_one(self):
        assert CAUCHY.log_density([1.0]) == pytest.approx(-LOG_PI - math.log(2.0), rel=1e-15)
        assert CAUCHY.log_density([1.0]) == pytest.approx(-1.8378771, abs=1e-7)

    def test_density_at_location_is_normalizer(self):
        d = MultivariateT(4.5, [1.0, -2.0, 0.5], [[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.7]])
        assert d.log_density(d.loc) == d.log_normalizer

    def test_matches_scipy(self):
        from scipy.stats import multivariate_t

        loc = [1.0, -1.0]
        shape = [[2.0, 0.5], [0.5, 1.0]]
        d = MultivariateT(3.0, loc, shape)
        ref = multivariate_t(loc=loc, shape=shape, df=3.0)
        for x in [[0.0, 0.0], [5.0, -3.0], [100.0, 40.0]]:
            assert d.log_density(x) == pytest.approx(ref.logpdf(x), rel=1e-12)

    def test_gradient_examples(self):
        np.testing.assert_array_equal(CAUCHY.grad_log_density([0.0]), [0.0])
        assert CAUCHY.grad_log_density([1.0])[0] == pytest.approx(-1.0, rel=1e-15)

    def test_radial_limit(self, rng):
        d = MultivariateT(3.0, [0.0, 0.0])
        u = rng.normal(size=2)
        t = 1e3 * u / np.linalg.norm(u)
        assert float(t @ d.grad_log_density(t)) == pytest.approx(-5.0, rel=0.01)

    def test_far_out_stays_finite(self):
        d = MultivariateT(1.0, [0.0, 0.0])
        x = np.array([1e290, -3e289])
        assert math.isfinite(d.log_density(x))
        g = d.grad_log_density(x)
        assert np.all(np.isfinite(g))
        assert float(x @ g) == pytest.approx(-3.0, rel=1e-12)

    def test_gradient_finite_differences(self, rng):
        d = MultivariateT(2.5, [0.5, -1.0, 2.0], [[1.5, 0.2, 0.1], [0.2, 1.0, -0.3], [0.1, -0.3, 2.0]])
        for _ in range(50):
            x = rng.normal(scale=3.0, size=3)
            fd = central_gradient(d.log_density, x)
            np.testing.assert_allclose(d.grad_log_density(x), fd, rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("scale", [[[1.0, 2.0], [2.0, 1.0]], [[1.0, 0.5], [0.4, 1.0]]])
    def test_rejects_bad_scale(self, scale):
        with pytest.raises(ValueError):
            MultivariateT(2.0, [0.0, 0.0], scale)


class TestMultinomialLogit:
    def test_binary_value(self):
        m = binary_logit()
        assert m.log_density([0.0]) == pytest.approx(-3 * math.log(2.0), rel=1e-15)
        assert m.log_density([0.0]) == pytest.approx(-2.0794415, abs=1e-7)

    def test_binary_mode(self):
        np.testing.assert_allclose(binary_logit().grad_log_density([0.0]), [0.0], atol=1e-15)

    def test_row_shift_invariance(self, rng):
        base = three_category_logit()
        shifted = MultinomialLogitPosterior(
            [
                LogitObservation(o.counts, o.prior_prob, o.prior_size, o.model_matrix + np.array([0.7, -1.3]))
                for o in base.observations
            ]
        )
        diffs = []
        for _ in range(10):
            beta = rng.normal(scale=2.0, size=2)
            diffs.append(base.log_density(beta) - shifted.log_density(beta))
        np.testing.assert_allclose(diffs, diffs[0], atol=1e-10)

    def test_gradient_bounded(self, rng):
        m = three_category_logit()
        bound = m.gradient_bound()
        for _ in range(20):
            u = rng.normal(size=2)
            beta = 1e4 * u / np.linalg.norm(u)
            assert math.isfinite(m.log_density(beta))
            assert np.linalg.norm(m.grad_log_density(beta)) <= bound

    def test_gradient_finite_differences(self, rng):
        m = three_category_logit()
        for _ in range(50):
            beta = rng.normal(scale=2.0, size=2)
            fd = central_gradient(m.log_density, beta)
            np.testing.assert_allclose(m.grad_log_density(beta), fd, rtol=1e-4, atol=1e-7)

    def test_concave_along_lines(self, rng):
        m = three_category_logit()
        for _ in range(30):
            x, v = rng.normal(scale=3.0, size=2), rng.normal(size=2)
            h = 1e-3
            second = m.log_density(x + h * v) - 2 * m.log_density(x) + m.log_density(x - h * v)
            assert second <= 1e-8

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(counts=[0, 2], prior_prob=[0.0, 1.0], prior_size=1.0, model_matrix=[[0.0], [1.0]]),
            dict(counts=[1, 2], prior_prob=[0.5, 0.6], prior_size=1.0, model_matrix=[[0.0], [1.0]]),
            dict(counts=[1, 2], prior_prob=[0.5, 0.5], prior_size=1.0, model_matrix=[[0.0, 1.0]]),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LogitObservation(**kwargs)


class TestCauchyLocation:
    def test_examples(self):
        assert CauchyLocationPosterior([0.0]).log_density([0.0]) == 0.0
        assert CauchyLocationPosterior([0.0]).log_density([1.0]) == pytest.approx(-math.log(2.0))
        value, deriv = CauchyLocationPosterior([-1.0, 1.0]).value_and_derivative(0.0)
        assert deriv == 0.0

    @given(
        data=st.lists(st.floats(-50, 50), min_size=1, max_size=8),
        mu=st.floats(-100, 100),
    )
    def test_reflection_symmetry(self, data, mu):
        c = CauchyLocationPosterior(data)
        reflected = CauchyLocationPosterior([-x for x in data])
        assert c.log_density([mu]) == pytest.approx(reflected.log_density([-mu]), rel=1e-12, abs=1e-12)

    def test_derivative(self, rng):
        c = CauchyLocationPosterior(rng.standard_cauchy(7))
        for mu in np.linspace(-5, 5, 11):
            value, deriv = c.value_and_derivative(mu)
            assert value == c.log_density([mu])
            assert deriv == pytest.approx(central_gradient(c.log_density, np.array([mu]))[0], rel=1e-6, abs=1e-9)


COMPOSED_1D = MorphSpec.from_constants([0.0], R=1.0, p=3.0, b=1.0)


class TestTransformed:
    def test_identity_morph_is_exact(self, rng):
        t = MultivariateT(2.0, [0.3, -0.1])
        m = MorphSpec.identity(2)
        for _ in range(10):
            g = rng.normal(scale=5, size=2)
            assert transformed_log_density(t, m, g) == t.log_density(g)
            np.testing.assert_array_equal(transformed_grad_log_density(t, m, g), t.grad_log_density(g))

    def test_origin(self):
        t = Gaussian([0.4, -0.2])
        m = MorphSpec.from_constants([0.4, 0.1], R=0.5, b=0.3)
        expected = t.log_density(m.center) + 2 * math.log(0.3 * math.e / 2)
        assert transformed_log_density(t, m, np.zeros(2)) == pytest.approx(expected, rel=1e-14)

    def test_cauchy_composed_value_against_mass(self):
        # the single-point value, and the mass identity that pins it down
        gamma = 3.0
        beta = COMPOSED_1D.radial(gamma)
        _, d1, _ = COMPOSED_1D.radial_derivs(gamma)
        expected = -LOG_PI - math.log1p(beta * beta) + math.log(d1)
        assert transformed_log_density(CAUCHY, COMPOSED_1D, [gamma]) == pytest.approx(expected, rel=1e-13)
        unnormalized = CallableTarget(1, lambda x: -math.log1p(float(x[0]) * float(x[0])))
        mass = integrate_mass(lambda g: transformed_log_density(unnormalized, COMPOSED_1D, g), 1)
        assert mass == pytest.approx(math.pi, rel=1e-8)

    def test_gradient_is_radial_for_isotropic_gaussian(self, rng):
        m = MorphSpec.from_constants([1.0, -1.0, 2.0], R=0.7, b=0.4)
        t = Gaussian(m.center)
        for _ in range(10):
            g = rng.normal(size=3)
            grad = transformed_grad_log_density(t, m, g)
            cross = grad - (grad @ g) / (g @ g) * g
            assert np.linalg.norm(cross) <= 1e-10 * np.linalg.norm(grad)

    def test_finite_differences_t_composed(self, rng):
        t = MultivariateT(3.0, [0.5, -0.5, 1.0], [[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]])
        m = MorphSpec.from_constants([0.2, 0.0, -0.4], R=1.0, p=3.0, b=0.3)
        checked = 0
        while checked < 200:
            g = rng.normal(scale=2.0, size=3)
            s = np.linalg.norm(g)
            if min(abs(s - r) for r in m.branch_radii) < 1e-3:
                continue
            fd = central_gradient(lambda x: transformed_log_density(t, m, x), g, rel_step=1e-6)
            grad = transformed_grad_log_density(t, m, g)
            assert np.max(np.abs(grad - fd)) <= 1e-5 * max(np.max(np.abs(grad)), 1.0)
            checked += 1

    def test_missing_gradient(self):
        t = CallableTarget(1, lambda x: -x[0] ** 2)
        with pytest.raises(GradientUnavailableError):
            transformed_grad_log_density(t, MorphSpec.identity(1), [0.5])

    def test_guard_propagates(self):
        with pytest.raises(MorphRangeError):
            transformed_log_density(CAUCHY, COMPOSED_1D, [COMPOSED_1D.guard_radius + 1.0])

    def test_minus_infinity_propagates(self):
        t = CallableTarget(1, lambda x: 0.0 if x[0] > 0 else -math.inf)
        m = MorphSpec.from_constants([0.0], R=1.0)
        assert transformed_log_density(t, m, [-2.0]) == -math.inf

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            TransformedDensity(CAUCHY, MorphSpec.identity(2))


MASS_MORPHS = {
    "polynomial": dict(R=1.0, p=3.0),
    "composed": dict(R=1.0, p=3.0, b=1.0),
    "exponential-p2.5": dict(R=0.5, p=2.5, b=0.3),
}


@pytest.mark.parametrize("morph_name", list(MASS_MORPHS))
@pytest.mark.parametrize(
    "target",
    [
        MultivariateT(1.0, [0.4]),
        Gaussian([-0.3], [[2.0]]),
        MultivariateT(1.0, [0.2, -0.3], [[1.0, 0.3], [0.3, 0.8]]),
        Gaussian([0.5, 0.0]),
    ],
    ids=["cauchy-1d", "gauss-1d", "cauchy-2d", "gauss-2d"],
)
def test_mass_preserved(target, morph_name):
    k = target.dim
    m = MorphSpec.from_constants(np.full(k, 0.25), **MASS_MORPHS[morph_name])
    beta_mass = integrate_mass(target.log_density, k, center=target_center(target))
    gamma_mass = integrate_mass(lambda g: transformed_log_density(target, m, g), k)
    assert gamma_mass == pytest.approx(beta_mass, rel=1e-4)
    assert beta_mass == pytest.approx(1.0, rel=1e-4)


def target_center(target):
    return target.loc if isinstance(target, MultivariateT) else target.mean


def _radial_probe(target, u, r):
    return float(u @ target.grad_log_density(r * u))


def test_t_under_composed_morph_becomes_super_light(rng):
    t = MultivariateT(3.0, [0.5, -0.5])
    m = MorphSpec.from_constants([0.5, -0.5], R=1.0, p=3.0, b=0.1)
    td = TransformedDensity(t, m)
    r = 0.5 * m.guard_radius
    for _ in range(10):
        u = rng.normal(size=2)
        u /= np.linalg.norm(u)
        values = [_radial_probe(td, u, x * r) for x in (0.25, 0.5, 1.0)]
        assert values[0] > values[1] > values[2]
        assert values[2] <= -10.0


def test_logit_under_polynomial_morph_becomes_super_light(rng):
    td = TransformedDensity(three_category_logit(), MorphSpec.from_constants([0.0, 0.0], R=1.0))
    for _ in range(10):
        u = rng.normal(size=2)
        u /= np.linalg.norm(u)
        values = [_radial_probe(td, u, r) for r in (10.0, 100.0, 1000.0)]
        assert values[0] > values[1] > values[2]
        assert values[2] <= -10.0


@settings(max_examples=50, deadline=None)
@given(x=st.lists(st.floats(-30, 30), min_size=2, max_size=2))
def test_logit_transformed_gradient(x):
    td = TransformedDensity(three_category_logit(), MorphSpec.from_constants([0.1, 0.0], R=1.0, p=2.5))
    g = np.array(x)
    s = np.linalg.norm(g)
    if abs(s - 1.0) < 1e-3 or s < 1e-3:
        return
    fd = central_gradient(td.log_density, g, rel_step=1e-6)
    grad = td.grad_log_density(g)
    assert np.max(np.abs(grad - fd)) <= 1e-5 * max(np.max(np.abs(grad)), 1.0)
