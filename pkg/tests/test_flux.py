import math

import numpy as np
import pytest

from jsslab import domains, flux, geometry as geo
from jsslab.errors import EnumerationBudget, NotProperSubset

FLAT = geo.MetricField.flat()
MENU = {"scherk": domains.scherk_square, "disk": domains.disk, "lens": domains.crescent_lens}
# counts frozen from the subset oracle
MENU_COUNTS = {"scherk": 5, "disk": 1, "lens": 1}


@pytest.mark.parametrize("name", sorted(MENU))
def test_enumeration_matches_subset_oracle(name):
    d = MENU[name]()
    polys = flux.enumerate_generalized_polygons(d)
    oracle = flux.enumerate_by_subsets(d)
    assert [p.ids for p in polys] == oracle
    assert len(oracle) == MENU_COUNTS[name]


def test_enumeration_deterministic():
    a = flux.enumerate_generalized_polygons(domains.scherk_square())
    b = flux.enumerate_generalized_polygons(domains.scherk_square())
    assert [p.ids for p in a] == [p.ids for p in b]


def test_total_flux_examples():
    t = flux.check_total_flux(domains.scherk_square())
    assert t.passes and t.lhs == pytest.approx(2 * math.pi) and t.rhs == pytest.approx(2 * math.pi)
    t = flux.check_total_flux(domains.rectangle(math.pi, 0.9 * math.pi))
    assert not t.passes
    assert t.lhs == pytest.approx(2 * math.pi, abs=1e-9) and t.rhs == pytest.approx(1.8 * math.pi, abs=1e-9)
    t = flux.check_total_flux(domains.annulus(1.0, 2.0))
    assert not t.passes
    assert t.lhs == pytest.approx(4 * math.pi, abs=1e-9) and t.rhs == pytest.approx(2 * math.pi, abs=1e-9)


def test_scherk_half_square_margins():
    d = domains.scherk_square()
    P = flux.enumerate_generalized_polygons(d)[0]
    recs = flux.check_polygon_flux(d, P)
    for r in recs:
        assert r.lhs == pytest.approx(2 * math.pi, abs=1e-9)
        assert r.rhs == pytest.approx(2 * math.pi + math.pi * math.sqrt(2), abs=1e-9)
        assert r.margin == pytest.approx(math.pi * math.sqrt(2), abs=1e-9) and r.passes


def test_whole_domain_is_not_proper():
    d = domains.scherk_square()
    whole = flux.enumerate_generalized_polygons(d)[-1]
    with pytest.raises(NotProperSubset):
        flux.check_polygon_flux(d, whole)


def test_closed_plus_curve_fails_condition_a():
    d = domains.disk(1.0, "plus")
    P = flux.enumerate_generalized_polygons(d)[0]
    A, _ = flux.check_polygon_flux(d, P, omega_area=2 * d.area())
    L = 2 * math.pi
    assert A.lhs == pytest.approx(2 * L) and A.rhs == pytest.approx(L) and not A.passes


def test_verify_verdicts():
    assert flux.verify_jss(domains.scherk_square()).verdict
    rep = flux.verify_jss(domains.rectangle(math.pi, 0.9 * math.pi))
    assert not rep.verdict and not rep.total_flux.passes
    assert rep.total_flux.lhs - rep.total_flux.rhs == pytest.approx(0.2 * math.pi, abs=1e-6)


def test_stable_only_same_verdict():
    d = domains.scherk_square()
    full = flux.verify_jss(d)
    pruned = flux.verify_jss(d, flux.EnumConfig(stable_only=True))
    assert pruned.verdict == full.verdict
    assert len(pruned.polygons) <= len(full.polygons)


def test_report_invariant_and_csv():
    rep = flux.verify_jss(domains.scherk_square())
    assert rep.verdict == (rep.total_flux.passes and all(r.passes for r in rep.per_polygon))
    rows = rep.to_csv().strip().splitlines()
    assert rows[0] == "polygon_id,condition,lhs,rhs,margin,passes"
    assert len(rows) == 2 + len(rep.per_polygon)


def test_condition_b_matches_complement_condition_a():
    d = domains.scherk_square()
    A_O = d.area()
    rep = flux.verify_jss(d)
    areas = [P.area(FLAT) for P in rep.polygons]
    margins = {(r.polygon_id, r.condition): r.margin for r in rep.per_polygon}
    ids = [f"P{i}" for i in range(len(rep.polygons))]
    tol = 2 * flux.tau_flux(d)
    for i, P in enumerate(rep.polygons):
        # the complement shares the interior arcs of P
        inner = {c.sid for c in P.segments if c.provenance != "domain_arc"}
        for j, Q in enumerate(rep.polygons):
            if j != i and abs(areas[i] + areas[j] - A_O) < 1e-8 and inner == {
                    c.sid for c in Q.segments if c.provenance != "domain_arc"}:
                assert abs(margins[ids[i], "B"] - margins[ids[j], "A"]) <= tol


def _square(angle, order):
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    h = math.pi / 2
    corners = [tuple(R @ p) for p in ([-h, -h], [h, -h], [h, h], [-h, h])]
    tags = ["plus", "minus", "plus", "minus"]
    arcs = [(geo.segment(corners[i], corners[(i + 1) % 4], tag=tags[i]), (i, (i + 1) % 4)) for i in range(4)]
    arcs = [arcs[i] for i in order]
    return geo.PolygonalDomain(FLAT, tuple(a for a, _ in arcs), tuple(corners), 0.0, tuple(e for _, e in arcs))


@pytest.mark.parametrize("angle,order", [(0.3, (0, 1, 2, 3)), (1.1, (2, 0, 3, 1)), (-2.0, (3, 2, 1, 0))])
def test_verdict_invariant_under_motion_and_relabeling(angle, order):
    rep = flux.verify_jss(_square(angle, order))
    assert rep.verdict
    assert len(rep.polygons) == 4


def test_enumeration_budget():
    with pytest.raises(EnumerationBudget):
        flux.enumerate_generalized_polygons(domains.scherk_square(), flux.EnumConfig(max_corners=3))
