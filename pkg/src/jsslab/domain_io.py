"""Readers for the YAML input formats.

``jss-domain/1``::

    schema: jss-domain/1
    name: scherk
    metric: {kind: flat}          # flat | round_sphere | hyperbolic (radius) | chart (g11, g12, g22 in x, y)
    H0: 0
    corners: [[-1.5707963267948966, -1.5707963267948966], ...]
    arcs:
      - {ends: [0, 1], tag: plus}                         # straight chord (H0 = 0) or constant curvature arc
      - {ends: [1, 2], tag: minus, param: auto}          # constant_curvature_arcs, shortest solution
      - {closed: true, tag: plus, x: "cos(2*pi*t)", y: "sin(2*pi*t)"}

``jang-radial/1``::

    schema: jang-radial/1
    n: 3
    phi2: "1/(1 - 2/r)"
    k_r: "0"
    k_t: "0"
    r_min: 2

or ``preset: schwarzschild`` with ``m``, or ``preset: flat``.

``mots-coeffs/1``::

    schema: mots-coeffs/1
    mesh: {kind: interval, length: 1, nodes: 1000}   # interval | circle | polyline | grid
    potential: "0"                                   # or the individual fields below
    fields: {X: "1", hk2: 0, scal: 0, J_nu: 0, mu: 0}

Field entries are numbers, lists with one value per node, or expressions in
``s`` (curves) or ``x``, ``y`` (grids). ``radial`` with ``data`` (a
``jang-radial/1`` mapping) and ``r`` fills the sphere terms instead.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from . import exprs, geometry as geo, jang, stability
from .errors import JSSError, ParseError


class _Map(dict):
    marks: dict
    mark: tuple


class _Seq(list):
    marks: list
    mark: tuple


def _pos(node):
    return (node.start_mark.line + 1, node.start_mark.column + 1)


class _Loader(yaml.SafeLoader):
    def construct_mapping(self, node, deep=False):
        out = _Map(super().construct_mapping(node, deep=True))
        out.mark = _pos(node)
        out.marks = {self.construct_object(k, deep=True): _pos(v) for k, v in node.value}
        return out

    def construct_sequence(self, node, deep=False):
        out = _Seq(super().construct_sequence(node, deep=True))
        out.mark = _pos(node)
        out.marks = [_pos(v) for v in node.value]
        return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _Loader.construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _Loader.construct_sequence)


class _Reader:
    def __init__(self, text, source):
        self.source = source
        try:
            self.doc = yaml.load(text, Loader=_Loader)
        except yaml.MarkedYAMLError as e:
            m = e.problem_mark
            raise ParseError(str(e.problem), m.line + 1, m.column + 1, source) from None
        if not isinstance(self.doc, dict):
            raise ParseError("top level must be a mapping", 1, 1, source)

    def fail(self, msg, where=None, key=None):
        pos = None
        if key is not None and isinstance(where, _Map):
            pos = where.marks.get(key)
        if pos is None:
            pos = getattr(where, "mark", (None, None))
        raise ParseError(msg, pos[0], pos[1], self.source)

    def get(self, m, key, kind=None, default=...):
        if key not in m:
            if default is ...:
                self.fail(f"missing key {key!r}", m)
            return default
        v = m[key]
        if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (float, (int, float)):
            self.fail(f"key {key!r} has the wrong type", m, key)
        return v

    def number(self, m, key, default=...):
        v = self.get(m, key, default=default)
        if v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"key {key!r} must be a number", m, key)
        return float(v)

    def expr(self, m, key, variables, default=...):
        v = self.get(m, key, default=default)
        if v is default and default is not ...:
            return v
        try:
            return exprs.parse(str(v), variables)
        except (ValueError, JSSError) as e:
            self.fail(f"bad expression for {key!r}: {e}", m, key)

    def schema(self, expected):
        s = self.get(self.doc, "schema", str)
        if s != expected:
            self.fail(f"expected schema {expected}, found {s}", self.doc, "schema")


def _read_text(path):
    try:
        return Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read file: {e.strerror}", source=str(path)) from None


# --------------------------------------------------------------------------
# jss-domain/1


def _metric(rd, m):
    kind = rd.get(m, "kind", str)
    if kind == "flat":
        return geo.MetricField.flat()
    if kind in ("round_sphere", "hyperbolic"):
        radius = rd.number(m, "radius", default=1.0)
        return getattr(geo.MetricField, kind)(radius)
    if kind == "chart":
        comps = [str(rd.get(m, key)) for key in ("g11", "g12", "g22")]
        try:
            return geo.MetricField.from_expressions(*comps)
        except (ValueError, JSSError) as e:
            rd.fail(f"bad chart metric: {e}", m)
    rd.fail(f"unknown metric kind {kind!r}", m, "kind")


def parse_domain(text, source="<string>"):
    rd = _Reader(text, source)
    rd.schema("jss-domain/1")
    doc = rd.doc
    metric = _metric(rd, rd.get(doc, "metric", dict))
    H0 = rd.number(doc, "H0", default=0.0)
    if H0 < 0:
        rd.fail("H0 must be non-negative", doc, "H0")
    corners_raw = rd.get(doc, "corners", list, default=[])
    corners = []
    for i, c in enumerate(corners_raw):
        if (not isinstance(c, list) or len(c) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in c)):
            pos = corners_raw.marks[i]
            raise ParseError("a corner is a pair of numbers", pos[0], pos[1], source)
        corners.append((float(c[0]), float(c[1])))
    arcs_raw = rd.get(doc, "arcs", list)
    if not arcs_raw:
        rd.fail("at least one arc is required", doc, "arcs")
    arcs, arc_corners = [], []
    for i, a in enumerate(arcs_raw):
        if not isinstance(a, dict):
            pos = arcs_raw.marks[i]
            raise ParseError("an arc is a mapping", pos[0], pos[1], source)
        arc, ends = _arc(rd, a, metric, H0, corners, i)
        arcs.append(arc)
        arc_corners.append(ends)
    try:
        return geo.PolygonalDomain(metric, tuple(arcs), tuple(corners), H0, tuple(arc_corners),
                                   name=str(doc.get("name", "")))
    except (ValueError, JSSError) as e:
        rd.fail(f"invalid domain: {e}", doc)


def _arc(rd, a, metric, H0, corners, i):
    tag = rd.get(a, "tag", str)
    if tag not in ("plus", "minus", "interior"):
        rd.fail(f"unknown tag {tag!r}", a, "tag")
    outward = a.get("outward", 1)
    if outward not in (1, -1):
        rd.fail("outward must be 1 or -1", a, "outward")
    name = str(a.get("name", f"arc{i}"))
    if a.get("closed", False):
        if "x" not in a or "y" not in a:
            rd.fail("a closed arc needs x and y expressions in t", a)
        rd.expr(a, "x", ("t",))
        rd.expr(a, "y", ("t",))
        c = geo.expression_curve(str(a["x"]), str(a["y"]), tag=tag, outward=outward, closed=True, name=name)
        return c, None
    ends = rd.get(a, "ends", list)
    if len(ends) != 2 or not all(isinstance(e, int) and not isinstance(e, bool) for e in ends):
        rd.fail("ends must be two corner indices", a, "ends")
    if not all(0 <= e < len(corners) for e in ends):
        rd.fail("corner index out of range", a, "ends")
    p, q = corners[ends[0]], corners[ends[1]]
    if "x" in a or "y" in a:
        rd.expr(a, "x", ("t",))
        rd.expr(a, "y", ("t",))
        c = geo.expression_curve(str(a["x"]), str(a["y"]), tag=tag, outward=outward, name=name)
        for end, pt in ((0.0, p), (1.0, q)):
            if np.linalg.norm(c(end) - np.asarray(pt)) > 1e-7:
                rd.fail("arc expressions do not end at its corners", a)
        return c, tuple(ends)
    param = a.get("param", "auto")
    if param not in ("auto", "segment"):
        rd.fail("param must be auto or segment", a, "param")
    if param == "segment" or (H0 == 0 and metric.kind == "flat"):
        return geo.segment(p, q, tag=tag, outward=outward, name=name), tuple(ends)
    try:
        found = geo.constant_curvature_arcs(metric, p, q, H0)
    except JSSError as e:
        rd.fail(f"no constant curvature arc: {e}", a)
    want = a.get("bulge")
    if want is not None:
        found = [c for c in found if c.outward == want] or found
    best = min(found, key=lambda c: geo.arc_length(metric, c))
    return best.with_tag(tag), tuple(ends)


def load_domain(path):
    return parse_domain(_read_text(path), str(path))


# --------------------------------------------------------------------------
# jang-radial/1


def _radial_from_mapping(rd, m):
    preset = m.get("preset")
    if preset is not None:
        if preset == "schwarzschild":
            mass = rd.number(m, "m", default=1.0)
            if mass <= 0:
                rd.fail("mass must be positive", m, "m")
            kt = m.get("k_t")
            kt_f = None
            if kt is not None:
                e = rd.expr(m, "k_t", ("r",))
                kt_f = e
            return jang.schwarzschild(mass, kt_f)
        if preset == "flat":
            return jang.flat(int(rd.number(m, "n", default=3)))
        rd.fail(f"unknown preset {preset!r}", m, "preset")
    n = rd.get(m, "n", int)
    if not 3 <= n <= 7:
        rd.fail("n must lie in 3..7", m, "n")
    for key in ("phi2", "k_r", "k_t"):
        if key in m:
            rd.expr(m, key, ("r",))
    try:
        return jang.from_expressions(n, str(rd.get(m, "phi2")), str(m.get("k_r", "0")),
                                     str(m.get("k_t", "0")), rd.number(m, "r_min", default=0.0),
                                     rd.number(m, "q", default=1.0), rd.number(m, "beta", default=3.0),
                                     str(m.get("name", "")))
    except (ValueError, JSSError) as e:
        rd.fail(f"invalid radial data: {e}", m)


def parse_radial(text, source="<string>"):
    rd = _Reader(text, source)
    rd.schema("jang-radial/1")
    return _radial_from_mapping(rd, rd.doc)


def load_radial(path):
    return parse_radial(_read_text(path), str(path))


# --------------------------------------------------------------------------
# mots-coeffs/1


def _coeff_mesh(rd, m):
    kind = rd.get(m, "kind", str)
    if kind == "interval":
        return stability.CurveMesh.interval(rd.number(m, "length"), int(rd.number(m, "nodes")))
    if kind == "circle":
        return stability.CurveMesh.circle(rd.number(m, "radius"), int(rd.number(m, "nodes")))
    if kind == "polyline":
        pts = rd.get(m, "points", list)
        try:
            return stability.CurveMesh.polyline(np.asarray(pts, dtype=float), bool(m.get("closed", False)))
        except (ValueError, TypeError):
            rd.fail("points must be a list of coordinate pairs", m, "points")
    if kind == "grid":
        per = m.get("periodic", [False, False])
        mask = m.get("mask")
        return stability.GridPatch(int(rd.number(m, "nx")), int(rd.number(m, "ny")), rd.number(m, "hx"),
                                   rd.number(m, "hy"), None if mask is None else np.asarray(mask, bool),
                                   (bool(per[0]), bool(per[1])))
    rd.fail(f"unknown mesh kind {kind!r}", m, "kind")


def _node_field(rd, m, key, mesh, vector=False):
    v = m[key]
    if isinstance(mesh, stability.CurveMesh):
        pts, variables = (mesh.s,), ("s",)
    else:
        I, J = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny), indexing="ij")
        pts, variables = ((I * mesh.hx).ravel(), (J * mesh.hy).ravel()), ("x", "y")
    if isinstance(v, bool):
        rd.fail(f"field {key!r} has the wrong type", m, key)
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, list):
        arr = np.asarray(v, dtype=float)
        if arr.shape[0] != mesh.n:
            rd.fail(f"field {key!r} needs one entry per node", m, key)
        return arr
    if vector and not isinstance(mesh, stability.CurveMesh):
        rd.fail(f"field {key!r} on a grid needs a list of pairs", m, key)
    e = rd.expr(m, key, variables)
    return np.broadcast_to(np.asarray(e(*pts), dtype=float), (mesh.n,)).copy()


def parse_coefficients(text, source="<string>"):
    rd = _Reader(text, source)
    rd.schema("mots-coeffs/1")
    doc = rd.doc
    if "radial" in doc:
        rad = rd.get(doc, "radial", dict)
        data = _radial_from_mapping(rd, rd.get(rad, "data", dict))
        r = rd.number(rad, "r")
        if r < data.r_min:
            rd.fail("sphere radius below the data domain", rad, "r")
        return stability.sphere_coefficients(data, r, int(rd.number(rad, "nodes", default=64)))
    mesh = _coeff_mesh(rd, rd.get(doc, "mesh", dict))
    fields = rd.get(doc, "fields", dict, default=_Map())
    vals = {}
    for key in fields:
        if key not in ("X", "hk2", "scal", "J_nu", "mu", "div_X", "X2"):
            rd.fail(f"unknown field {key!r}", fields, key)
        vals[key] = _node_field(rd, fields, key, mesh, vector=key == "X")
    if "potential" in doc:
        V = _node_field(rd, doc, "potential", mesh)
        return stability.StabilityCoefficients.from_potential(mesh, V, vals.get("X"))
    try:
        return stability.StabilityCoefficients(mesh, **vals)
    except ValueError as e:
        rd.fail(str(e), fields)


def load_coefficients(path):
    return parse_coefficients(_read_text(path), str(path))


# --------------------------------------------------------------------------
# writers used by the examples and tests


def domain_document(domain):
    """A ``jss-domain/1`` mapping for a flat domain with straight sides."""
    if domain.metric.kind != "flat":
        raise ValueError("only flat domains are written")
    arcs = []
    for arc, ends in zip(domain.arcs, domain.arc_corners):
        if ends is None:
            raise ValueError("closed arcs are not written")
        arcs.append({"ends": list(ends), "tag": arc.tag, "param": "segment"})
    return {"schema": "jss-domain/1", "name": domain.name, "metric": {"kind": "flat"},
            "H0": float(domain.H0), "corners": [[float(x), float(y)] for x, y in domain.corners],
            "arcs": arcs}


def dump(doc):
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def format_float(x):
    return f"{x:.17g}" if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
