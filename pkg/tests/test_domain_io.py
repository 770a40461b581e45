import math
from pathlib import Path

import numpy as np
import pytest

from jsslab import domain_io, domains, flux, stability
from jsslab.errors import ParseError

INPUTS = Path(__file__).resolve().parents[1] / "inputs"


def test_scherk_file_matches_builder():
    d = domain_io.load_domain(INPUTS / "scherk.yaml")
    ref = domains.scherk_square()
    assert np.allclose(d.corners, ref.corners)
    assert [a.tag for a in d.arcs] == [a.tag for a in ref.arcs]
    assert flux.verify_jss(d).verdict


@pytest.mark.parametrize("build", [domains.scherk_square, lambda: domains.rectangle(math.pi, 0.9 * math.pi)])
def test_round_trip(build):
    d = build()
    text = domain_io.dump(domain_io.domain_document(d))
    back = domain_io.parse_domain(text)
    assert np.array_equal(np.asarray(back.corners), np.asarray(d.corners))
    assert domain_io.dump(domain_io.domain_document(back)) == text


BAD = [
    ("schema: jss-domain/1\nmetric: {kind: flat\n", 3),
    ("schema: jss-domain/2\n", 1),
    ("schema: jss-domain/1\nmetric: {kind: flat}\nH0: -1\ncorners: [[0, 0]]\narcs: []\n", 3),
    ("schema: jss-domain/1\nmetric: {kind: flat}\nH0: 0\ncorners: [[0, 0], [1, 0], [0, 1]]\n"
     "arcs:\n- {ends: [0, 1], tag: plus}\n- {ends: [1, 2], tag: sideways}\n- {ends: [2, 0], tag: minus}\n", 7),
    ("schema: jss-domain/1\nmetric: {kind: flat}\nH0: 0\ncorners: [[0, 0], [1, 0], [0, 1]]\n"
     "arcs:\n- {ends: [0, 7], tag: plus}\n", 6),
    ("schema: jss-domain/1\nmetric: {kind: chart, g11: 1 +, g12: 0, g22: 1}\n", 2),
]


@pytest.mark.parametrize("text,line", BAD)
def test_parse_errors_carry_position(text, line):
    with pytest.raises(ParseError) as e:
        domain_io.parse_domain(text, "bad.yaml")
    assert e.value.line == line and e.value.column >= 1
    assert "bad.yaml" in str(e.value)


def test_curved_metric_auto_arcs():
    text = ("schema: jss-domain/1\nmetric: {kind: round_sphere, radius: 1}\nH0: 0\n"
            "corners: [[0, 0], [0.5, 0], [0, 0.5]]\n"
            "arcs:\n- {ends: [0, 1], tag: plus}\n- {ends: [1, 2], tag: minus}\n- {ends: [2, 0], tag: plus}\n")
    d = domain_io.parse_domain(text)
    assert d.metric.kind == "round_sphere" and len(d.arcs) == 3


def test_closed_arc():
    text = ("schema: jss-domain/1\nmetric: {kind: flat}\nH0: 0\ncorners: []\n"
            "arcs:\n- {closed: true, tag: plus, x: cos(2*pi*t), y: sin(2*pi*t)}\n")
    d = domain_io.parse_domain(text)
    assert d.arcs[0].tag == "plus"


def test_radial_files():
    a = domain_io.load_radial(INPUTS / "schwarzschild.yaml")
    b = domain_io.load_radial(INPUTS / "schwarzschild_kt.yaml")
    r = np.linspace(2.5, 50, 7)
    assert np.allclose(a.phi2(r), 1 / (1 - 2 / r))
    assert np.allclose(b.kt(r), -0.1 * r**-3)
    assert b.q == 2 and b.beta == 3


def test_coefficient_files():
    c = domain_io.load_coefficients(INPUTS / "interval.yaml")
    assert isinstance(c.mesh, stability.CurveMesh) and c.mesh.n == 1000
    c = domain_io.load_coefficients(INPUTS / "drift.yaml")
    assert np.allclose(c.X, 1.0)
    c = domain_io.load_coefficients(INPUTS / "horizon_sphere.yaml")
    assert c.mesh.closed


def test_coefficient_field_forms():
    text = ("schema: mots-coeffs/1\nmesh: {kind: interval, length: 1, nodes: 5}\n"
            "fields: {mu: [0, 1, 2, 3, 4], hk2: s^2, scal: 2}\n")
    c = domain_io.parse_coefficients(text)
    assert np.array_equal(c.mu, [0, 1, 2, 3, 4])
    assert np.allclose(c.hk2, np.linspace(0, 1, 5) ** 2)
    with pytest.raises(ParseError) as e:
        domain_io.parse_coefficients(text.replace("[0, 1, 2, 3, 4]", "[0, 1]"))
    assert e.value.line == 3
    with pytest.raises(ParseError):
        domain_io.parse_coefficients(text.replace("scal", "bogus"))


def test_format_float():
    assert domain_io.format_float(0.1) == "0.10000000000000001"
    assert float(domain_io.format_float(math.pi)) == math.pi
    assert domain_io.format_float(float("inf")) == "inf"
