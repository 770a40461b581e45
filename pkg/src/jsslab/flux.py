"""Generalized polygons and the flux inequalities for Scherk-type graphs.

Two independent enumerators are provided. ``enumerate_generalized_polygons``
works on the faces of the arrangement of all candidate arcs and keeps the
unions of faces whose boundary is made of whole arcs. ``enumerate_by_subsets``
tries every subset of candidate arcs and keeps the closed, non-crossing ones
whose even-odd interior lies in the domain. Both report polygons by the
sorted tuple of arc ids they use, which serves as canonical form.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import polygonize, unary_union

from . import geometry as geo
from .errors import EnumerationBudget, NoArcFound, NotClosed, NotProperSubset

POLY_N = 240


@dataclass(frozen=True)
class EnumConfig:
    max_corners: int = 12
    stable_only: bool = False
    interior_arcs: bool = True
    closed_curves: tuple = ()
    # (xmin, xmax, ymin, ymax, n) grid of centers for flat circles of radius 1/H0
    auto_circle_grid: tuple = ()
    budget: int = 1 << 16
    stability_floor: float = -1e-3


@dataclass(frozen=True)
class Candidate:
    sid: str
    curve: geo.CurveSegment
    provenance: str  # "domain_arc", "interior_arc" or "closed_curve"
    index: int
    ends: tuple  # corner indices, or None for closed curves
    length: float
    line: np.ndarray = field(compare=False, repr=False)


@dataclass(frozen=True)
class GeneralizedPolygon:
    """Subdomain bounded by whole candidate arcs and closed curves."""

    ids: tuple
    segments: tuple  # Candidate entries in id order
    loops: tuple  # tuples of (CurveSegment, forward), outer loops counter-clockwise

    @property
    def provenance(self):
        return tuple((c.provenance, c.index) for c in self.segments)

    @property
    def boundary_chain(self):
        return [pair for loop in self.loops for pair in loop]

    def perimeter(self):
        return sum(c.length for c in self.segments)

    def length_tagged(self, tag):
        return sum(
            c.length for c in self.segments if c.provenance == "domain_arc" and c.curve.tag == tag
        )

    def area(self, metric):
        return geo.area(metric, list(self.loops))


@dataclass(frozen=True)
class FluxRecord:
    lhs: float
    rhs: float
    passes: bool


@dataclass(frozen=True)
class PolygonRecord:
    polygon_id: str
    condition: str
    lhs: float
    rhs: float
    margin: float
    passes: bool


@dataclass
class FluxReport:
    total_flux: FluxRecord
    per_polygon: list
    polygons: list
    verdict: bool
    notes: list = field(default_factory=list)
    unpruned_verdict: bool | None = None

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["polygon_id", "condition", "lhs", "rhs", "margin", "passes"])
        t = self.total_flux
        w.writerow(["Omega", "total", f"{t.lhs:.17g}", f"{t.rhs:.17g}", f"{t.rhs - t.lhs:.17g}", t.passes])
        for r in self.per_polygon:
            w.writerow([r.polygon_id, r.condition, f"{r.lhs:.17g}", f"{r.rhs:.17g}",
                        f"{r.margin:.17g}", r.passes])
        return buf.getvalue()

    def to_text(self):
        t = self.total_flux
        lines = [
            f"total flux: lhs={t.lhs:.12g} rhs={t.rhs:.12g} {'pass' if t.passes else 'FAIL'}",
            f"polygons checked: {len(self.polygons)}",
        ]
        for poly_id, poly in zip(_poly_ids(self.polygons), self.polygons):
            lines.append(f"  {poly_id}: arcs {' '.join(poly.ids)}")
        for r in self.per_polygon:
            flag = "pass" if r.passes else "FAIL"
            lines.append(
                f"  {r.polygon_id} {r.condition}: lhs={r.lhs:.12g} rhs={r.rhs:.12g} margin={r.margin:.3e} {flag}"
            )
        lines.extend(f"note: {n}" for n in self.notes)
        lines.append(f"verdict: {'pass' if self.verdict else 'FAIL'}")
        return "\n".join(lines)


def _poly_ids(polys):
    return [f"P{i}" for i in range(len(polys))]


def tau_flux(domain):
    return 1e-7 * domain.diameter()


# --------------------------------------------------------------------------
# candidates


def _same_curve(a, b, tol):
    if a.shape != b.shape:
        return False
    return np.max(np.abs(a - b)) < tol or np.max(np.abs(a - b[::-1])) < tol


def arc_stability(metric, curve, H0, closed=False, n=400):
    """Smallest eigenvalue of ``-d^2/ds^2 - (H0^2 + K)`` on the curve.

    Dirichlet conditions for arcs, periodic ones for closed curves. The
    curve is stable in the sense of the second variation when the value is
    non-negative.
    """
    t = np.linspace(0.0, 1.0, n + 1)
    sp = geo.speed(metric, curve, t)
    # cumulative arc length by the trapezoid rule on a fine grid
    s = np.concatenate([[0.0], np.cumsum(0.5 * (sp[1:] + sp[:-1]) * np.diff(t))])
    V = H0**2 + metric.gauss_curvature(curve(t))
    return stability_from_samples(s, V, closed)


def stability_from_samples(s, V, closed=False):
    """Smallest eigenvalue of ``-d^2/ds^2 - V`` from samples at arc lengths ``s``.

    For closed curves the last sample repeats the first one.
    """
    s = np.asarray(s, dtype=float)
    V = np.asarray(V, dtype=float)
    h = np.diff(s)
    if np.any(h <= 0):
        raise ValueError("arc lengths must increase strictly")
    n = len(s) - 1
    if closed:
        m = n
        A = np.zeros((m, m))
        for i in range(m):
            hl, hr = h[i - 1], h[i]
            A[i, i] = 2.0 / (hl * hr) - V[i]
            A[i, (i - 1) % m] -= 2.0 / (hl * (hl + hr))
            A[i, (i + 1) % m] -= 2.0 / (hr * (hl + hr))
    else:
        m = n - 1
        if m < 1:
            raise ValueError("at least three samples are needed")
        A = np.zeros((m, m))
        for k in range(m):
            hl, hr = h[k], h[k + 1]
            A[k, k] = 2.0 / (hl * hr) - V[k + 1]
            if k > 0:
                A[k, k - 1] = -2.0 / (hl * (hl + hr))
            if k < m - 1:
                A[k, k + 1] = -2.0 / (hr * (hl + hr))
    return float(np.min(np.linalg.eigvals(A).real))


def _snapped(line, ends, corners):
    """Pin polyline endpoints to the exact corner coordinates."""
    line = line.copy()
    if ends is None:
        line[-1] = line[0]
    else:
        line[0] = corners[ends[0]]
        line[-1] = corners[ends[1]]
    return line


def _inside_strict(region, pts, tol):
    boundary = region.boundary
    return all(region.contains(Point(p)) and boundary.distance(Point(p)) > tol for p in pts)


def candidate_segments(domain, config=EnumConfig()):
    """Domain arcs, interior constant-curvature arcs and closed curves."""
    metric = domain.metric
    region = domain.polygon()
    diam = domain.diameter()
    tol = 1e-6 * diam
    out = []
    corners = domain.corner_array
    for i, arc in enumerate(domain.arcs):
        line = _snapped(arc.polyline(POLY_N), domain.arc_corners[i], corners)
        out.append(Candidate(f"A{i}", arc, "domain_arc", i, domain.arc_corners[i],
                             geo.arc_length(metric, arc), line))
    if config.interior_arcs:
        k = 0
        for i, j in itertools.combinations(range(len(corners)), 2):
            try:
                arcs = geo.constant_curvature_arcs(metric, corners[i], corners[j], domain.H0)
            except NoArcFound:
                continue
            for arc in arcs:
                line = _snapped(arc.polyline(POLY_N), (i, j), corners)
                if any(_same_curve(line, c.line, 1e-6 * diam) for c in out):
                    continue
                if not _inside_strict(region, line[5:-5:5], tol):
                    continue
                out.append(Candidate(f"I{k}", arc.with_tag("interior"), "interior_arc", k, (i, j),
                                     geo.arc_length(metric, arc), line))
                k += 1
    closed = list(config.closed_curves)
    if config.auto_circle_grid and domain.H0 > 0 and metric.kind == "flat":
        x0, x1, y0, y1, n = config.auto_circle_grid
        R = 1.0 / domain.H0
        for cx in np.linspace(x0, x1, int(n)):
            for cy in np.linspace(y0, y1, int(n)):
                closed.append(geo.circle_arc((cx, cy), R, 0.0, 2 * math.pi, tag="interior"))
    for k, curve in enumerate(closed):
        line = _snapped(curve.polyline(POLY_N), None, corners)
        if not _inside_strict(region, line[::7], tol):
            continue
        out.append(Candidate(f"E{k}", curve, "closed_curve", k, None,
                             geo.arc_length(metric, curve), line))
    return out


def _prune_unstable(metric, H0, cands, floor):
    keep, dropped = [], []
    for c in cands:
        if c.provenance == "domain_arc":
            keep.append(c)
            continue
        lam = arc_stability(metric, c.curve, H0, closed=c.provenance == "closed_curve")
        (keep if lam >= floor else dropped).append(c)
    return keep, dropped


# --------------------------------------------------------------------------
# polygon assembly


def _ring_signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _point_in_ring(p, ring):
    x, y = ring[:, 0], ring[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    cond = (y > p[1]) != (y2 > p[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x + (p[1] - y) * (x2 - x) / (y2 - y)
    return bool(np.count_nonzero(cond & (p[0] < xi)) % 2)


def _assemble_loops(segments, corners, tol):
    """Chain candidate segments into closed loops with consistent orientation."""
    loops = []
    open_segs = [c for c in segments if c.ends is None]
    loops.extend([[(c, True)] for c in open_segs])
    rest = [c for c in segments if c.ends is not None]
    used = [False] * len(rest)
    for i, c in enumerate(rest):
        if used[i]:
            continue
        used[i] = True
        loop = [(c, True)]
        start, cur = c.ends
        while cur != start:
            for j, d in enumerate(rest):
                if used[j]:
                    continue
                if d.ends[0] == cur:
                    used[j] = True
                    loop.append((d, True))
                    cur = d.ends[1]
                    break
                if d.ends[1] == cur:
                    used[j] = True
                    loop.append((d, False))
                    cur = d.ends[0]
                    break
            else:
                raise NotClosed("segments do not close into loops")
        loops.append(loop)
    rings = []
    for loop in loops:
        pts = np.concatenate([(c.line if fwd else c.line[::-1])[:-1] for c, fwd in loop])
        rings.append(pts)
    out = []
    for k, (loop, ring) in enumerate(zip(loops, rings)):
        depth = sum(
            _point_in_ring(ring[0] * (1 - 1e-9) + ring[len(ring) // 2] * 1e-9, other)
            for m, other in enumerate(rings)
            if m != k
        )
        want_ccw = depth % 2 == 0
        if (_ring_signed_area(ring) > 0) != want_ccw:
            loop = [(c, not fwd) for c, fwd in reversed(loop)]
        out.append(tuple((c.curve, fwd) for c, fwd in loop))
    return tuple(out)


def _make_polygon(segs, corners, tol):
    segs = sorted(segs, key=lambda c: _sid_key(c.sid))
    return GeneralizedPolygon(
        tuple(c.sid for c in segs), tuple(segs), _assemble_loops(segs, corners, tol)
    )


def _sid_key(sid):
    return ("AIE".index(sid[0]), int(sid[1:]))


def _segments_cross(a, b, ends_tol):
    """True when polylines ``a`` and ``b`` meet away from their endpoints."""
    la, lb = LineString(a.line), LineString(b.line)
    inter = la.intersection(lb)
    if inter.is_empty:
        return False
    pts = []
    for g in getattr(inter, "geoms", [inter]):
        pts.extend(np.asarray(g.coords))
    endpoints = [a.line[0], a.line[-1], b.line[0], b.line[-1]]
    for p in pts:
        if a.ends is None and b.ends is None:
            return True
        if min(np.linalg.norm(p - e) for e in endpoints) > ends_tol:
            return True
    return False


# --------------------------------------------------------------------------
# enumerator 1: faces of the arrangement


def _arrangement_faces(cands, region, tol):
    lines = [LineString(c.line) for c in cands]
    noded = unary_union(lines)
    faces = [f for f in polygonize(noded) if f.area > tol**2 and region.contains(f.representative_point())]
    return faces


def enumerate_generalized_polygons(domain, config=EnumConfig(), candidates=None):
    """All generalized polygons built from the candidate arcs, ``Omega`` included.

    The result is sorted by number of arcs then by arc ids, so it is
    deterministic for a given input.
    """
    if len(domain.corners) > config.max_corners:
        raise EnumerationBudget(
            f"{len(domain.corners)} corners exceed max_corners={config.max_corners}"
        )
    cands = candidates if candidates is not None else candidate_segments(domain, config)
    if config.stable_only and candidates is None:
        cands, _ = _prune_unstable(domain.metric, domain.H0, cands, config.stability_floor)
    diam = domain.diameter()
    tol = 1e-6 * diam
    region = domain.polygon()
    faces = _arrangement_faces(cands, region, tol)
    if 2 ** len(faces) > config.budget:
        raise EnumerationBudget(f"{len(faces)} faces exceed the subset budget {config.budget}")
    seg_lines = [LineString(c.line) for c in cands]
    seg_zones = [ln.buffer(1e-9 * diam + 1e-12, cap_style=2) for ln in seg_lines]
    found = {}
    for r in range(1, len(faces) + 1):
        for combo in itertools.combinations(range(len(faces)), r):
            U = unary_union([faces[i] for i in combo])
            B = U.boundary
            used = []
            ok = True
            for c, zone, ln in zip(cands, seg_zones, seg_lines):
                frac = B.intersection(zone).length / ln.length
                if frac > 0.999:
                    used.append(c)
                elif frac > 1e-3:
                    ok = False
                    break
            if not ok or not used:
                continue
            if abs(sum(ln.length for c, ln in zip(cands, seg_lines) if c in used) - B.length) > 1e-6 * B.length:
                continue
            if any(_segments_cross(a, b, 1e-5 * diam) for a, b in itertools.combinations(used, 2)):
                continue
            key = tuple(sorted((c.sid for c in used), key=_sid_key))
            if key not in found:
                found[key] = _make_polygon(used, domain.corner_array, tol)
    return [found[k] for k in sorted(found, key=lambda k: (len(k), [_sid_key(s) for s in k]))]


# --------------------------------------------------------------------------
# enumerator 2: subsets of candidate arcs


def _parity(p, cands):
    count = 0
    for c in cands:
        ring = c.line
        x, y = ring[:-1, 0], ring[:-1, 1]
        x2, y2 = ring[1:, 0], ring[1:, 1]
        cond = (y > p[1]) != (y2 > p[1])
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x + (p[1] - y) * (x2 - x) / (y2 - y)
        count += int(np.count_nonzero(cond & (p[0] < xi)))
    return count % 2


def _polyline_cross(a, b, ends_tol):
    """Numpy segment-segment intersection test, ignoring shared endpoints."""
    P, Q = a.line, b.line
    p0, p1 = P[:-1], P[1:]
    q0, q1 = Q[:-1], Q[1:]
    d1 = p1 - p0
    d2 = q1 - q0
    denom = d1[:, None, 0] * d2[None, :, 1] - d1[:, None, 1] * d2[None, :, 0]
    w = q0[None, :, :] - p0[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[..., 0] * d2[None, :, 1] - w[..., 1] * d2[None, :, 0]) / denom
        t = (w[..., 0] * d1[:, None, 1] - w[..., 1] * d1[:, None, 0]) / denom
    hit = (np.abs(denom) > 1e-300) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
    if not np.any(hit):
        return False
    ii, jj = np.nonzero(hit)
    pts = p0[ii] + s[ii, jj, None] * d1[ii]
    ends = np.array([P[0], P[-1], Q[0], Q[-1]])
    if a.ends is None and b.ends is None:
        return True
    dist = np.min(np.linalg.norm(pts[:, None, :] - ends[None], axis=-1), axis=1)
    return bool(np.any(dist > ends_tol))


def _side_probes(c, probe):
    m = len(c.line) // 2
    tan = c.line[m + 1] - c.line[m - 1]
    nrm = np.array([-tan[1], tan[0]]) / np.linalg.norm(tan)
    return c.line[m] + probe * nrm, c.line[m] - probe * nrm


def enumerate_by_subsets(domain, config=EnumConfig(), candidates=None):
    """Brute-force oracle over subsets of candidate arcs."""
    cands = candidates if candidates is not None else candidate_segments(domain, config)
    if 2 ** len(cands) > config.budget:
        raise EnumerationBudget(f"{len(cands)} candidates exceed the subset budget")
    diam = domain.diameter()
    region_poly = domain.polygon()
    rings = [np.asarray(region_poly.exterior.coords)] + [
        np.asarray(h.coords) for h in region_poly.interiors
    ]

    def in_domain(p):
        return sum(_point_in_ring(p, r) for r in rings) % 2 == 1

    cross = {}
    for a, b in itertools.combinations(range(len(cands)), 2):
        cross[a, b] = _polyline_cross(cands[a], cands[b], 1e-5 * diam)
    probe = 1e-4 * diam
    found = []
    for r in range(1, len(cands) + 1):
        for combo in itertools.combinations(range(len(cands)), r):
            deg = {}
            for i in combo:
                if cands[i].ends is not None:
                    for e in cands[i].ends:
                        deg[e] = deg.get(e, 0) + 1
            if any(v % 2 for v in deg.values()):
                continue
            if any(cross[a, b] for a, b in itertools.combinations(combo, 2)):
                continue
            sub = [cands[i] for i in combo]
            ok = True
            for c in sub:
                for q in _side_probes(c, probe):
                    if _parity(q, sub) and not in_domain(q):
                        ok = False
            # the region may touch the domain boundary only along its own arcs
            for c in cands:
                if not ok or c in sub or c.provenance != "domain_arc":
                    continue
                for q in _side_probes(c, probe):
                    if in_domain(q) and _parity(q, sub):
                        ok = False
            if ok:
                found.append(tuple(sorted((c.sid for c in sub), key=_sid_key)))
    return sorted(found, key=lambda k: (len(k), [_sid_key(s) for s in k]))


# --------------------------------------------------------------------------
# flux checks


def check_total_flux(domain):
    """Total flux balance: plus length against H0 area plus minus length."""
    m = domain.metric
    plus = sum(geo.arc_length(m, a) for a in domain.arcs_tagged("plus"))
    minus = sum(geo.arc_length(m, a) for a in domain.arcs_tagged("minus"))
    rhs = domain.H0 * domain.area() + minus
    passes = abs(plus - rhs) <= tau_flux(domain) * max(1.0, abs(plus))
    return FluxRecord(plus, rhs, bool(passes))


def check_polygon_flux(domain, P, polygon_id="P", omega_area=None):
    """Conditions A and B for a proper generalized polygon ``P``."""
    m = domain.metric
    A_P = P.area(m)
    A_O = domain.area() if omega_area is None else omega_area
    if abs(A_P - A_O) <= geo.TAU_AREA * max(1.0, A_O):
        raise NotProperSubset("polygon coincides with the domain; use check_total_flux")
    perim = P.perimeter()
    tol = tau_flux(domain)
    out = []
    for cond, tag, sign in (("A", "plus", 1.0), ("B", "minus", -1.0)):
        lhs = 2.0 * P.length_tagged(tag)
        rhs = perim + sign * domain.H0 * A_P
        margin = rhs - lhs
        out.append(PolygonRecord(polygon_id, cond, lhs, rhs, margin, bool(margin > tol)))
    return out


def _verify(domain, polys):
    A_O = domain.area()
    records = []
    proper = []
    for P in polys:
        if abs(P.area(domain.metric) - A_O) <= geo.TAU_AREA * max(1.0, A_O):
            continue
        proper.append(P)
    for pid, P in zip(_poly_ids(proper), proper):
        records.extend(check_polygon_flux(domain, P, pid, A_O))
    return proper, records


def verify_jss(domain, config=EnumConfig()):
    """Total flux plus both conditions for every proper generalized polygon."""
    total = check_total_flux(domain)
    cands = candidate_segments(domain, config)
    notes = []
    if domain.H0 > 0 and not config.closed_curves and not config.auto_circle_grid:
        notes.append("no candidate closed curves supplied; closed-curve polygons skipped")
    unpruned = None
    if config.stable_only:
        kept, dropped = _prune_unstable(domain.metric, domain.H0, cands, config.stability_floor)
        polys = enumerate_generalized_polygons(domain, config, kept)
        proper, records = _verify(domain, polys)
        verdict = total.passes and all(r.passes for r in records)
        if dropped:
            notes.append("pruned unstable arcs: " + " ".join(c.sid for c in dropped))
            _, all_records = _verify(domain, enumerate_generalized_polygons(domain, config, cands))
            unpruned = total.passes and all(r.passes for r in all_records)
            if unpruned != verdict:
                notes.append(f"unpruned verdict differs: {'pass' if unpruned else 'FAIL'}")
    else:
        polys = enumerate_generalized_polygons(domain, config, cands)
        proper, records = _verify(domain, polys)
        verdict = total.passes and all(r.passes for r in records)
    return FluxReport(total, records, proper, bool(verdict), notes, unpruned)
