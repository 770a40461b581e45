import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import box

from jsslab import geometry as geo, jang, mesh, pmc, uniqueness
from jsslab.errors import ExtrapolationFailure

INNER = math.pi / 2 - 0.2
# defect per unit area of the k=64 Scherk solve against the analytic surface on the inner square
SCHERK_DEFECT_DENSITY = 2.03e-4


def test_nitsche_examples():
    assert uniqueness.nitsche_integrand(None, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1 / math.sqrt(2))
    assert uniqueness.nitsche_integrand(None, [0.3, -2.0], [0.3, -2.0]) == 0


def test_nitsche_nonnegative_million():
    rng = np.random.default_rng(12345)
    for _ in range(10):
        scale = 10.0 ** rng.uniform(-3, 3, size=(100_000, 1))
        a = rng.normal(size=(100_000, 2)) * scale
        b = rng.normal(size=(100_000, 2)) * scale[::-1]
        assert np.all(uniqueness.nitsche_integrand(None, a, b) >= 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_nitsche_symmetric_in_curved_metric(g, x, y):
    metric = geo.MetricField.round_sphere(1.0)
    a, b, p = np.array(g[:2]), np.array(g[2:]), np.array([x, y])
    f = uniqueness.nitsche_integrand(metric, a, b, p)
    assert f >= 0
    assert f == pytest.approx(uniqueness.nitsche_integrand(metric, b, a, p), rel=1e-12, abs=1e-15)


@pytest.fixture(scope="module")
def field():
    m = mesh.mesh_region(box(-1, -1, 1, 1), 0.1)
    V = m.vertices
    return pmc.DiscreteScalarField(m, np.sin(2 * V[:, 0]) * V[:, 1] ** 2 + V[:, 0])


def test_defect_trivial_pairs(field):
    m = field.mesh
    assert uniqueness.uniqueness_defect(uniqueness.SolutionPair(field, field)).value == 0
    shifted = pmc.DiscreteScalarField(m, field.values + 5)
    d = uniqueness.uniqueness_defect(uniqueness.SolutionPair(field, shifted))
    assert d.value == pytest.approx(0, abs=1e-12) and d.certified
    assert d.area == pytest.approx(4.0)


def test_defect_swap_and_region(field):
    m = field.mesh
    other = pmc.DiscreteScalarField(m, m.vertices[:, 1] ** 3)
    pair = uniqueness.SolutionPair(field, other)
    d = uniqueness.uniqueness_defect(pair)
    assert d.value > 0 and not d.certified
    assert d.value == pytest.approx(uniqueness.uniqueness_defect(pair.swapped()).value, rel=1e-14)
    half = uniqueness.uniqueness_defect(pair, box(-1, -1, 0, 1))
    assert half.area == pytest.approx(2.0, rel=0.05) and 0 < half.value < d.value


def test_pair_rejects_mismatched_meshes(field):
    other = mesh.mesh_region(box(-1, -1, 1, 1), 0.2)
    with pytest.raises(ValueError):
        uniqueness.SolutionPair(field, pmc.DiscreteScalarField(other, np.zeros(other.n)))


def _scherk_defect(scherk):
    m = scherk.mesh
    r = scherk.results[-1]
    c = int(np.argmin(np.linalg.norm(m.vertices, axis=1)))
    u = pmc.DiscreteScalarField(m, r.u.values - r.u.values[c])
    V = m.vertices.copy()
    V[:, :] = np.clip(V, -math.pi / 2 + 1e-9, math.pi / 2 - 1e-9)
    exact = np.log(np.cos(V[:, 0]) / np.cos(V[:, 1]))
    ref = pmc.DiscreteScalarField(m, exact - exact[c])
    return uniqueness.uniqueness_defect(uniqueness.SolutionPair(u, ref), box(-INNER, -INNER, INNER, INNER))


def test_scherk_defect_regression(scherk):
    d = _scherk_defect(scherk)
    assert d.value / d.area == pytest.approx(SCHERK_DEFECT_DENSITY, rel=0.02)


@pytest.mark.xfail(strict=True, reason="O(eps) regularization floor: density is about 2e-4 at eps=0.05")
def test_scherk_defect_target(scherk):
    d = _scherk_defect(scherk)
    assert d.value <= 1e-4 * d.area


@pytest.fixture(scope="module")
def schw():
    return jang.solve_blowup(jang.schwarzschild(1.0), "minus", (1e-1, 1e-2, 1e-3, 1e-4))


def test_horizon_area(schw):
    hf = uniqueness.horizon_area_flux(schw, beta=3.0)
    assert hf.limit == pytest.approx(16 * math.pi, rel=1e-2)
    assert abs(hf.limit - 16 * math.pi) * 10 <= abs(hf.raw - 16 * math.pi)


def test_horizon_area_flat_is_zero():
    sols = jang.solve_blowup(jang.flat(), "minus", (1e-2,))
    assert uniqueness.horizon_area_flux(sols).limit == pytest.approx(0, abs=1e-9)


def test_horizon_area_short_ladder(schw):
    with pytest.raises(ExtrapolationFailure):
        uniqueness.horizon_area_flux(schw, rungs=2)


def test_radial_defect(schw):
    a, b = schw[0], schw[-1]
    assert uniqueness.radial_uniqueness_defect(a, a).value == 0
    d = uniqueness.radial_uniqueness_defect(a, b)
    assert d.value == pytest.approx(uniqueness.radial_uniqueness_defect(b, a).value, rel=1e-14)


@pytest.mark.parametrize("p,ok", [(1.0, True), (0.5, False)])
def test_decay_powers(p, ok):
    r = np.geomspace(10, 1000, 400)
    fit = uniqueness.decay_check((r, r**-p, -p * r ** (-p - 1)), 3.0)
    assert fit.passes is ok
    assert fit.slope == pytest.approx(-p, abs=1e-12)
    assert uniqueness.decay_check((r, r**-p), 3.0).slope == pytest.approx(-p, abs=1e-3)


def test_decay_schwarzschild_doubled(schw):
    data = jang.schwarzschild(1.0)
    doubled = jang.solve_blowup(data, "minus", (1e-4,), r_max=2000.0)
    fit = uniqueness.decay_check(schw[-1], 3.0, doubled=doubled[-1])
    assert fit.passes and abs(fit.slope + 1) <= 0.15
