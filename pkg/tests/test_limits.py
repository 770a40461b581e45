import math

import numpy as np
import pytest
from shapely.geometry import box

from jsslab import domains, flux, geometry as geo, limits, mesh, pmc
from jsslab.limits import Label

FLAT = geo.MetricField.flat()


def _zero_family(m, n=3):
    return [pmc.DiscreteScalarField(m, np.zeros(m.n)) for _ in range(n)]


@pytest.fixture(scope="module")
def small_mesh():
    return mesh.mesh_region(box(-1, -1, 1, 1), 0.1)


def test_zero_family_is_omega0(small_mesh):
    dec = limits.classify_regions(_zero_family(small_mesh), ks=[1, 4, 16])
    assert np.all(dec.labels == Label.OMEGA0)
    assert np.all(dec.limit_field.values == 0)


def test_scherk_classification(scherk):
    dec = scherk.run.decompositions[-1]
    omega = limits.interior_mask(scherk.prob)
    assert np.all(dec.labels[omega] == Label.OMEGA0)
    m = scherk.mesh
    for ci, c in enumerate(m.crescents):
        lab = dec.labels[(m.region == ci) & (m.fiber[:, 2] > 0.5)]
        want = Label.PLUS if c.tag == "plus" else Label.MINUS
        assert np.mean(lab == want) > 0.9


def test_scherk_dispatch(scherk):
    assert scherk.run.dispatch.kind == "CaseC_solution"
    assert len(scherk.run.anchors) <= 2


def test_normal_field_examples(small_mesh):
    m = small_mesh
    assert np.all(limits.normal_field(np.zeros(m.n), mesh=m) == 0)
    X = limits.normal_field(m.vertices[:, 0].copy(), mesh=m)
    assert np.allclose(np.linalg.norm(X, axis=1), 1 / math.sqrt(2))


def test_normal_field_scherk_interpolant():
    # the analytic gradient of log(cos x / cos y) near the middle of the top (plus) side
    a = math.pi / 2 - 0.005
    m = mesh.mesh_region(box(-a, -a, a, a), 0.01)
    V = m.vertices
    u = np.log(np.cos(V[:, 0]) / np.cos(V[:, 1]))
    X = limits.normal_field(u, mesh=m)
    p = np.array([[0.0, math.pi / 2 - 0.02]])
    t = limits.locate(m, p)[0]
    assert np.linalg.norm(X[t]) >= 0.95 and X[t, 1] > 0.95


def test_normal_field_strictly_unit_bounded(scherk):
    for r in scherk.results:
        assert np.max(np.linalg.norm(limits.normal_field(r.u), axis=1)) < 1


def test_boundary_flux_profile_scherk(scherk):
    u = scherk.results[-1].u
    for arc in scherk.domain.arcs:
        vals = limits.boundary_flux_profile(u, arc, 0.02, t_range=(0.1, 0.9)).values
        if arc.tag == "plus":
            assert vals.min() >= 0.95
        else:
            assert vals.max() <= -0.95
        assert np.all(np.abs(vals) <= 1)


def test_boundary_flux_profile_zero(small_mesh):
    u = pmc.DiscreteScalarField(small_mesh, np.zeros(small_mesh.n))
    arc = geo.segment((-1, -1), (1, -1), tag="plus")
    assert np.all(limits.boundary_flux_profile(u, arc, 0.05, t_range=(0.1, 0.9)).values == 0)


def test_flux_balance_zero():
    d = domains.scherk_square()
    m = mesh.mesh_region(d, 0.1)
    P = flux.enumerate_generalized_polygons(d)[-1]
    fb = limits.flux_balance(FLAT, np.zeros(m.n), P, mesh=m)
    assert fb.area_term == 0 and fb.capillarity_term == 0 and fb.boundary_consistent == 0


def test_flux_balance_every_polygon(scherk):
    polys = flux.enumerate_generalized_polygons(scherk.domain)
    prob = scherk.prob
    for r in scherk.results:
        for P in polys:
            fb = limits.flux_balance(FLAT, r.u, P, r.k, prob.H_k(r.k))
            assert fb.passes, (r.k, P.ids, fb.discrepancy)
    whole = polys[-1]
    r = scherk.results[-1]
    assert limits.flux_balance(FLAT, r.u, whole, r.k, prob.H_k(r.k)).discrepancy <= 1e-6


def test_flux_balance_hemisphere_cap():
    d = domains.disk(0.5)
    m = mesh.mesh_region(d, 0.01)
    W = m.vertices
    u = -np.sqrt(1 - (W**2).sum(1))
    P = flux.enumerate_generalized_polygons(d)[0]
    fb = limits.flux_balance(FLAT, u, P, mesh=m, Hk=2.0)
    # boundary flux of the cap is the integral of r over the circle, pi / 2 = 2 area
    assert fb.boundary_trace == pytest.approx(math.pi / 2, abs=0.02)
    assert fb.area_term == pytest.approx(math.pi / 2, abs=0.02)


def test_equicontinuity(scherk, small_mesh):
    tab = limits.equicontinuity_check(_zero_family(small_mesh, 1))
    assert tab.omegas == (0.0, 0.0, 0.0)
    fam = [r.u for r in scherk.results]
    tab = limits.equicontinuity_check(fam, scherk.inner)
    assert tab.monotone and tab.omegas[-1] <= 0.2
    steep = pmc.DiscreteScalarField(small_mesh, 1e3 * small_mesh.vertices[:, 0])
    assert limits.equicontinuity_check([steep]).omegas[-1] < 1e-6


def test_synthetic_minus_dispatch(small_mesh):
    m = small_mesh
    labels = np.full(m.n, int(Label.MINUS))
    dec = limits.RegionDecomposition(labels, pmc.DiscreteScalarField(m, np.full(m.n, np.nan)), [])
    region = np.zeros(m.n, dtype=int) - 1
    disp = limits.case_dispatch(dec, True, [pmc.DiscreteScalarField(m, -np.ones(m.n))], region < 0, m)
    assert disp.kind == "CaseB_retranslate" and disp.anchor is not None
    dec = limits.RegionDecomposition(labels * 0 + int(Label.PLUS), dec.limit_field, [])
    assert limits.case_dispatch(dec, True, None, region < 0, m).kind == "CaseBprime_retranslate"


def test_split_domain_is_inconsistent(small_mesh):
    m = small_mesh
    labels = np.where(m.vertices[:, 0] > 0, int(Label.PLUS), int(Label.OMEGA0))
    dec = limits.RegionDecomposition(labels, pmc.DiscreteScalarField(m, np.zeros(m.n)), [])
    disp = limits.case_dispatch(dec, True, None, np.ones(m.n, bool), m)
    assert disp.kind == "Inconsistent" and "flux conditions hold" in disp.reason


def test_checker_fails_first_on_balanced_domain():
    # L-shaped hexagon: total flux balances, the strip along the bottom violates condition A
    v = [(0, 0), (3, 0), (3, 0.2), (0.2, 0.2), (0.2, 3), (0, 3)]
    tags = ["plus", "minus", "plus", "minus", "plus", "minus"]
    arcs = tuple(geo.segment(v[i], v[(i + 1) % 6], tag=tags[i]) for i in range(6))
    d = geo.PolygonalDomain(FLAT, arcs, tuple(v), 0.0, tuple((i, (i + 1) % 6) for i in range(6)))
    rep = flux.verify_jss(d)
    assert rep.total_flux.passes and not rep.verdict
    failing = [r for r in rep.per_polygon if not r.passes]
    assert failing and all(r.margin < -5 for r in failing)


def test_interface_rayleigh_flat_segment():
    pts = np.column_stack([np.linspace(0, 1, 101), np.zeros(101)])
    lam, flagged = limits.interface_rayleigh(FLAT, pts, 0.0)
    assert lam == pytest.approx(math.pi**2, rel=1e-3) and not flagged
