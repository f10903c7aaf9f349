"""Quadrature tests: closed-form lognormal moments and MC cross-checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bonusmalus.chain import TransitionRule, stationary_batch
from bonusmalus.effects import EffectsSpec, product_moment, sample_effects
from bonusmalus.quadrature import QuadratureSpec, expect1, expect2, normal_nodes

valid_sigma = st.floats(min_value=0.05, max_value=2.0)
valid_rho = st.floats(min_value=-0.95, max_value=0.95)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(order1=4)
    with pytest.raises(ValueError):
        QuadratureSpec(scheme="simpson")
    assert QuadratureSpec().order1 >= 8


def test_normal_nodes_integrate_gaussian_moments():
    x, w = normal_nodes(32)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert w @ x == pytest.approx(0.0, abs=1e-13)
    assert w @ x**2 == pytest.approx(1.0, abs=1e-12)
    assert w @ x**4 == pytest.approx(3.0, abs=1e-11)


def test_expect1_constant_and_mean():
    spec = QuadratureSpec()
    eff = EffectsSpec(math.sqrt(0.992), math.sqrt(0.293), -0.447)
    for which in (1, 2):
        assert expect1(spec, eff, which, lambda t: np.ones_like(t)) == pytest.approx(
            1.0, abs=1e-14
        )
        assert expect1(spec, eff, which, lambda t: t) == pytest.approx(1.0, abs=1e-12)


def test_expect1_second_moment():
    spec = QuadratureSpec()
    eff = EffectsSpec(math.sqrt(0.992), 0.5, 0.0)
    assert expect1(spec, eff, 1, lambda t: t**2) == pytest.approx(
        math.exp(0.992), abs=1e-10
    )


def test_expect1_rejects_nonfinite_integrand():
    spec = QuadratureSpec()
    eff = EffectsSpec(1.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="node"):
        expect1(spec, eff, 1, lambda t: np.where(t > 1, np.inf, t))


@given(s1=valid_sigma, s2=valid_sigma, rho=valid_rho)
@settings(max_examples=40, deadline=None)
def test_expect2_product_closed_form(s1, s2, rho):
    eff = EffectsSpec(s1, s2, rho)
    expected = math.exp(rho * s1 * s2)
    for scheme in ("tensor2d", "conditional-reduction"):
        got = expect2(QuadratureSpec(scheme=scheme), eff, lambda t1, t2: t1 * t2)
        assert got == pytest.approx(expected, abs=1e-10)


def test_expect2_separable_at_rho_zero():
    spec = QuadratureSpec()
    eff = EffectsSpec(0.8, 0.6, 0.0)
    u = lambda t: t**2
    v = lambda t: 1.0 / (1.0 + t)
    joint = expect2(spec, eff, lambda t1, t2: u(t1) * v(t2))
    split = expect1(spec, eff, 1, u) * expect1(spec, eff, 2, v)
    assert joint == pytest.approx(split, abs=1e-12)


def test_schemes_agree_on_chain_integrand():
    # f(t1, t2) = t2 * pi_l(lambda t1): the reduction's exact use case
    eff = EffectsSpec(math.sqrt(0.992), math.sqrt(0.293), -0.447)
    rule = TransitionRule(10, 1)
    lam = 0.3

    def make_f(level):
        def f(t1, t2):
            pis = stationary_batch(rule, lam * t1)
            return t2 * pis[:, level]

        return f

    for level in (0, 4, 9):
        f = make_f(level)
        a = expect2(QuadratureSpec(scheme="tensor2d"), eff, f)
        b = expect2(QuadratureSpec(scheme="conditional-reduction"), eff, f)
        assert a == pytest.approx(b, abs=1e-9)


def test_linearity():
    spec = QuadratureSpec()
    eff = EffectsSpec(0.7, 0.4, -0.3)
    f = lambda t1, t2: t1 * t2
    g = lambda t1, t2: np.log1p(t1) + t2**2
    lhs = expect2(spec, eff, lambda t1, t2: 2.5 * f(t1, t2) - 1.25 * g(t1, t2))
    rhs = 2.5 * expect2(spec, eff, f) - 1.25 * expect2(spec, eff, g)
    assert lhs == pytest.approx(rhs, rel=1e-14)


def test_order_doubling_on_chain_integrands():
    # doubling the default order must not move chain expectations beyond
    # 1e-8, including the worst case: a high-frequency class (lam ~ 3.6)
    eff = EffectsSpec(math.sqrt(0.992), math.sqrt(0.293), -0.447)
    rule = TransitionRule(10, 1)
    base = QuadratureSpec().order1

    for lam in (0.25, 3.6):
        def f(t1, t2):
            return t1 * t2 * stationary_batch(rule, lam * t1)[:, 0]

        lo = expect2(QuadratureSpec(order1=base, scheme="conditional-reduction"), eff, f)
        hi = expect2(QuadratureSpec(order1=2 * base, scheme="conditional-reduction"), eff, f)
        assert abs(lo - hi) < 1e-8

        g = lambda t: stationary_batch(rule, lam * t)[:, 9]
        lo1 = expect1(QuadratureSpec(order1=base), eff, 1, g)
        hi1 = expect1(QuadratureSpec(order1=2 * base), eff, 1, g)
        assert abs(lo1 - hi1) < 1e-8


def test_expect2_against_monte_carlo():
    # randomized smooth integrands, fixed seeds; 4 MC SE tolerance
    rng = np.random.default_rng(42)
    eff = EffectsSpec(0.9, 0.55, -0.447)
    theta = sample_effects(eff, 10_000_000, seed=314)
    for _ in range(3):
        a, b, c = rng.uniform(-1.0, 1.0, size=3)

        def f(t1, t2):
            return a * t1 * t2 + b * np.sqrt(t2) + c * np.exp(-t1)

        vals = f(theta[:, 0], theta[:, 1])
        mc, se = vals.mean(), vals.std() / math.sqrt(vals.size)
        quad_val = expect2(QuadratureSpec(), eff, f)
        assert abs(quad_val - mc) < 4 * se


def test_expect2_moments_match_closed_form_grid():
    eff = EffectsSpec(math.sqrt(0.992), math.sqrt(0.293), -0.447)
    spec = QuadratureSpec()
    for a in (1, 2):
        for b in (0, 1, 2):
            got = expect2(spec, eff, lambda t1, t2: t1**a * t2**b)
            assert got == pytest.approx(product_moment(eff, a, b), rel=1e-9)
