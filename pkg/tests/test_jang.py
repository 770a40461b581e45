import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jsslab import jang, uniqueness
from jsslab.errors import DomainError

B1_ONE = 1.31102877714606  # ellipk(1/2) / sqrt(2), the beta = 3 value of b_1(1)


@pytest.fixture(scope="module")
def schw():
    data = jang.schwarzschild(1.0)
    return data, jang.solve_blowup(data, "minus", (1e-1, 1e-2, 1e-3, 1e-4))


def test_b1_oracle():
    assert float(mp.ellipk(0.5) / mp.sqrt(2)) == pytest.approx(B1_ONE, abs=1e-14)
    assert jang.barrier_b_lambda(1.0, 3.0, 1.0) == pytest.approx(B1_ONE, abs=1e-8)
    assert jang.barrier_b_lambda_closed(1.0, 3.0, 1.0) == pytest.approx(B1_ONE, abs=1e-8)


@pytest.mark.parametrize("beta", [2.2, 2.5, 3.0, 4.5])
@pytest.mark.parametrize("x", [1.0, 1.001, 1.7, 10.0, 1e3])
def test_quadrature_matches_incomplete_beta(beta, x):
    assert jang.barrier_b_lambda(1.0, beta, x) == pytest.approx(
        jang.barrier_b_lambda_closed(1.0, beta, x), rel=1e-10, abs=1e-12)


def test_scaling_identity():
    rng = np.random.default_rng(7)
    for _ in range(100):
        lam = rng.uniform(1, 50)
        r = lam * rng.uniform(1, 20)
        b = jang.barrier_b_lambda_closed(lam, 3.0, r)
        assert abs(b - lam * jang.barrier_b_lambda_closed(1.0, 3.0, r / lam)) <= 1e-12 * max(1, b)


def test_tail_and_monotone():
    assert jang.barrier_b_lambda(1.0, 3.0, 1e6) < 1e-3
    r = np.geomspace(1, 1e3, 50)
    assert np.all(np.diff(jang.barrier_b_lambda_closed(1.0, 3.0, r)) < 0)


def test_derivative():
    assert jang.barrier_derivative(1.0, 3.0, math.sqrt(2)) == pytest.approx(-1 / math.sqrt(3))
    assert abs(jang.barrier_derivative(1.0, 3.0, 1 + 1e-8)) > 1e3
    h = 1e-5
    fd = (jang.barrier_b_lambda(1.0, 3.0, 2 + h) - jang.barrier_b_lambda(1.0, 3.0, 2 - h)) / (2 * h)
    assert fd == pytest.approx(jang.barrier_derivative(1.0, 3.0, 2.0), abs=1e-6)


@pytest.mark.parametrize("args", [(0.5, 3.0, 1.0), (1.0, 2.0, 1.0), (2.0, 3.0, 1.0)])
def test_barrier_domain_errors(args):
    with pytest.raises(DomainError):
        jang.barrier_b_lambda(*args)


def test_derivative_at_lambda_raises():
    with pytest.raises(DomainError):
        jang.barrier_derivative(1.0, 3.0, 1.0)


def test_lambda0_signs():
    data = jang.schwarzschild(1.0)
    lam, grid, vp, vm = jang.lambda0_search(data)
    assert lam == 8.0
    assert np.all(vp < 0) and np.all(vm > 0)
    assert grid[0] > lam and grid[-1] == pytest.approx(100 * lam)


def test_expansion_scalars():
    s = jang.schwarzschild(1.0)
    tp, tm = jang.expansion_scalars(s, 4.0)
    assert tp == pytest.approx(0.5 / math.sqrt(2)) and tm == pytest.approx(tp)
    assert np.allclose(jang.expansion_scalars(s, 2.0), 0)
    assert np.allclose(jang.expansion_scalars(jang.flat(), 1.0), 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(2.1, 100))
def test_expansion_difference_is_twice_trace(r):
    d = jang.schwarzschild(1.0, k_t=lambda x: -0.1 * np.asarray(x) ** -3)
    tp, tm = jang.expansion_scalars(d, r)
    assert tp - tm == pytest.approx(2 * 2 * (-0.1 * r**-3))


def test_sphere_area_oracle():
    # H of the coordinate sphere is d/ds log area^(1/2) along the unit normal
    s = jang.schwarzschild(1.0)
    r, h = 4.0, 1e-5
    dlogA = (math.log((r + h) ** 2) - math.log((r - h) ** 2)) / (2 * h)
    assert jang.expansion_scalars(s, r)[0] == pytest.approx(dlogA / math.sqrt(s.phi2(r)), rel=1e-8)


def test_outermost_mots():
    assert jang.outermost_mots_radius(jang.schwarzschild(1.0)) == pytest.approx(2.0, abs=1e-9)
    assert jang.outermost_mots_radius(jang.flat()) is None


def test_outermost_mots_with_kt():
    d = jang.schwarzschild(1.0, k_t=lambda x: -0.1 * np.asarray(x) ** -3)
    mp.mp.dps = 30
    oracle = mp.findroot(lambda r: 2 * mp.sqrt(1 - 2 / r) / r - 0.2 * r**-3, (2.0001, 2.1), solver="bisect")
    mp.mp.dps = 15
    got = jang.outermost_mots_radius(d)
    assert got == pytest.approx(float(oracle), abs=1e-9)
    assert got == pytest.approx(2.0012476635922316, abs=1e-9)


def test_operator_constant_is_zero():
    s = jang.schwarzschild(1.0)
    u = jang.RadialFunction(lambda r: 0 * r + 3.0, lambda r: 0 * r, lambda r: 0 * r)
    assert np.all(jang.jang_operator_radial(s, u, np.linspace(3, 10, 20)) == 0)


def test_operator_flat_catenoid():
    # radial minimal graph in flat R^3: u' = a / sqrt(r^4 - a^2)
    a = 1.0
    f = lambda r: a * np.log(r + np.sqrt(r**2 - a**2))  # n=2 profile, not used below
    up = lambda r: a / np.sqrt(r**4 - a**2)
    upp = lambda r: -2 * a * r**3 / (r**4 - a**2) ** 1.5
    u = jang.RadialFunction(f, up, upp)
    r = np.linspace(1.2, 20, 50)
    assert np.max(np.abs(jang.jang_operator_radial(jang.flat(), u, r))) <= 1e-8


def test_blowup_radius(schw):
    data, sols = schw
    t4 = next(s for s in sols if s.t == 1e-4)
    assert t4.blowup_radius() == pytest.approx(2.0, abs=1e-3)


def test_sandwich_all_t(schw):
    data, sols = schw
    lam = jang.lambda0_search(data)[0]
    for s in sols:
        assert jang.barrier_sandwich(s, lam)[1]
        assert jang.barrier_sandwich(s, 20.0)[1]


def test_decay(schw):
    data, sols = schw
    fit = uniqueness.decay_check(sols[-1], 3.0)
    assert fit.passes and abs(fit.slope + 1) <= 0.15


def test_flat_data_no_blowup():
    sols = jang.solve_blowup(jang.flat(), "minus", (1e-1, 1e-2))
    for s in sols:
        assert s.r_h is None and s.blowup_radius() is None
        assert np.max(np.abs(s.u)) < 1e-10


def test_negative_t_rejected():
    with pytest.raises(DomainError):
        jang.solve_blowup(jang.schwarzschild(), "minus", (-1.0,))
