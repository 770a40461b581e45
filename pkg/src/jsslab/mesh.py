"""Triangle meshes for the auxiliary domain (domain plus boundary crescents).

Crescents are meshed in fiber coordinates ``(theta, d)`` where the point is
``exp_{gamma(theta)}(d nu(theta))``; each crescent gets a structured mesh of
``layers`` rows whose innermost row sits on the arc itself. The domain part
is a Delaunay triangulation of boundary samples plus a hexagonal lattice of
interior points. Disks of radius ``r_corner`` around corners are excised.

With ``mirror="diagonal"`` only the part of the geometry with ``y >= x`` is
meshed and the result is reflected, which makes the mesh exactly symmetric
under ``(x, y) -> (y, x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree
from shapely.geometry import LineString, Point, Polygon

from . import geometry as geo
from .errors import MeshQuality, OffsetTooLarge

MARKERS = ("outer_crescent_plus", "outer_crescent_minus", "corner_hole", "artificial")


@dataclass
class Crescent:
    """Collar ``{exp(t Theta(theta) nu(theta)) : 0 < t < epsilon}`` over one arc."""

    arc_index: int
    tag: str
    curve: geo.CurveSegment
    epsilon: float
    profile: object = geo.default_profile
    outer: geo.CurveSegment | None = None

    @property
    def sign(self):
        return 1 if self.tag == "plus" else -1


@dataclass
class AuxiliaryDomain:
    domain: geo.PolygonalDomain
    epsilon: float
    crescents: list
    r_corner: float = 0.0


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    # -1 for the domain part, otherwise the crescent index
    region: np.ndarray
    # fiber coordinates (theta, d, layer fraction) for crescent nodes, nan elsewhere
    fiber: np.ndarray
    on_arc: np.ndarray
    mirror: np.ndarray | None = None
    crescents: list = field(default_factory=list)
    h: float = 0.0

    @property
    def n(self):
        return len(self.vertices)

    def dirichlet_nodes(self):
        mask = np.isin(self.boundary_markers, ["outer_crescent_plus", "outer_crescent_minus"])
        return np.unique(self.boundary_edges[mask])

    def triangle_areas(self):
        v = self.vertices[self.triangles]
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def check(self):
        a = self.triangle_areas()
        if np.any(a <= 0):
            raise MeshQuality(f"{np.count_nonzero(a <= 0)} triangles with non-positive area")
        edges = np.sort(np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                        self.triangles[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshQuality("non-conforming mesh: an edge is shared by more than two triangles")
        return True

    def omega_nodes(self):
        return self.region < 0


# --------------------------------------------------------------------------
# auxiliary geometry


def _arc_polyline(curve, n=400):
    return curve.polyline(n)


def build_auxiliary_domain(domain, epsilon, profiles=None, r_corner=0.0):
    """Crescents over every plus and minus arc, checked for collisions.

    Crescents of arcs that do not share a corner must be disjoint, and so
    must the inner collars of width ``2 epsilon`` on which the cutoff lives.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    crescents = []
    for i, arc in enumerate(domain.arcs):
        if arc.tag not in ("plus", "minus"):
            continue
        prof = geo.default_profile if profiles is None else profiles[i]
        if arc.closed and profiles is None:
            prof = geo.unit_profile
        outer = geo.exponential_offset(domain.metric, arc, prof, epsilon)
        crescents.append(Crescent(i, arc.tag, arc, epsilon, prof, outer))
    region = domain.polygon()
    shapes, collars = [], []
    for c in crescents:
        inner = c.curve.polyline(200)
        out = c.outer.polyline(200)
        ring = np.concatenate([inner, out[::-1]]) if not c.curve.closed else None
        if ring is not None:
            shapes.append(Polygon(ring).buffer(0))
        else:
            shapes.append(Polygon(out).buffer(0).symmetric_difference(Polygon(inner).buffer(0)))
        collars.append(LineString(inner).buffer(2 * epsilon).intersection(region))
    for a in range(len(crescents)):
        for b in range(a + 1, len(crescents)):
            ca = domain.arc_corners[crescents[a].arc_index]
            cb = domain.arc_corners[crescents[b].arc_index]
            if ca is not None and cb is not None and set(ca) & set(cb):
                continue
            if shapes[a].intersection(shapes[b]).area > 1e-12:
                raise OffsetTooLarge(f"crescents over arcs {crescents[a].arc_index} and "
                                     f"{crescents[b].arc_index} overlap")
            if collars[a].intersection(collars[b]).area > 1e-12:
                raise OffsetTooLarge(f"cutoff collars of arcs {crescents[a].arc_index} and "
                                     f"{crescents[b].arc_index} overlap")
    return AuxiliaryDomain(domain, epsilon, crescents, r_corner)


# --------------------------------------------------------------------------
# meshing helpers


def _arclength_table(curve, metric, n=2001):
    t = np.linspace(0.0, 1.0, n)
    sp = geo.speed(metric, curve, t)
    s = np.concatenate([[0.0], np.cumsum(0.5 * (sp[1:] + sp[:-1]) * np.diff(t))])
    return t, s


def _resample(points, h):
    """Points along a polyline at spacing close to ``h``, endpoints kept."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(1, int(math.ceil(s[-1] / h - 1e-9)))
    targets = np.linspace(0.0, s[-1], n + 1)
    out = np.stack([np.interp(targets, s, points[:, 0]), np.interp(targets, s, points[:, 1])], axis=1)
    out[0], out[-1] = points[0], points[-1]
    return out


def _hex_lattice(bounds, h, origin=(0.0, 0.0)):
    x0, y0, x1, y1 = bounds
    dy = h * math.sqrt(3) / 2
    j0 = int(math.floor((y0 - origin[1]) / dy)) - 1
    j1 = int(math.ceil((y1 - origin[1]) / dy)) + 1
    pts = []
    for j in range(j0, j1 + 1):
        y = origin[1] + j * dy
        shift = 0.5 * h if j % 2 else 0.0
        i0 = int(math.floor((x0 - origin[0] - shift) / h)) - 1
        i1 = int(math.ceil((x1 - origin[0] - shift) / h)) + 1
        xs = origin[0] + shift + h * np.arange(i0, i1 + 1)
        pts.append(np.stack([xs, np.full_like(xs, y)], axis=1))
    return np.concatenate(pts)


class _NodeTable:
    """Deduplicates nodes by exact coordinates."""

    def __init__(self):
        self.index = {}
        self.coords = []
        self.region = []
        self.fiber = []
        self.on_arc = []

    def add(self, p, region=-1, fiber=(np.nan, np.nan, np.nan), on_arc=False):
        key = (float(p[0]) + 0.0, float(p[1]) + 0.0)
        if key in self.index:
            k = self.index[key]
            if on_arc:
                self.on_arc[k] = True
            return k
        k = len(self.coords)
        self.index[key] = k
        self.coords.append(key)
        self.region.append(region)
        self.fiber.append(tuple(fiber))
        self.on_arc.append(on_arc)
        return k


def _trim_params(curve, metric, corners, ends, r):
    """Parameter interval of ``curve`` outside the corner disks."""
    t, s = _arclength_table(curve, metric)
    if ends is None or r <= 0:
        return 0.0, 1.0, t, s
    pts = curve(t)
    d0 = np.linalg.norm(pts - corners[ends[0]], axis=1)
    d1 = np.linalg.norm(pts - corners[ends[1]], axis=1)
    i0 = int(np.argmax(d0 >= r))
    i1 = len(t) - 1 - int(np.argmax(d1[::-1] >= r))

    def refine(fn, a, b):
        for _ in range(60):
            m = 0.5 * (a + b)
            if fn(m):
                b = m
            else:
                a = m
        return b

    ta = refine(lambda x: np.linalg.norm(curve(x) - corners[ends[0]]) >= r, t[max(i0 - 1, 0)], t[i0])
    tb = 1.0 - refine(lambda x: np.linalg.norm(curve(1.0 - x) - corners[ends[1]]) >= r,
                      1.0 - t[min(i1 + 1, len(t) - 1)], 1.0 - t[i1])
    return ta, tb, t, s


def _uniform_params(t, s, ta, tb, n):
    sa, sb = np.interp([ta, tb], t, s)
    targets = np.linspace(sa, sb, n + 1)
    out = np.interp(targets, s, t)
    out[0], out[-1] = ta, tb
    return out


def _crescent_block(aux, ci, h, layers, nodes, tris, bedges, markers):
    dom = aux.domain
    c = aux.crescents[ci]
    metric = dom.metric
    corners = dom.corner_array
    ends = None if c.curve.closed else dom.arc_corners[c.arc_index]
    ta, tb, t, s = _trim_params(c.curve, metric, corners, ends, aux.r_corner)
    length = np.interp(tb, t, s) - np.interp(ta, t, s)
    n = max(4, 2 * int(math.ceil(length / h / 2)))
    th = _uniform_params(t, s, ta, tb, n)
    if c.curve.closed:
        th = th[:-1]
    base = c.curve(th)
    nu = geo.outward_normal(metric, c.curve, th)
    prof = np.asarray(c.profile(th), dtype=float) * np.ones_like(th)
    ids = np.zeros((len(th), layers + 1), dtype=int)
    for j in range(layers + 1):
        frac = j / layers
        d = c.epsilon * prof * frac
        pts = base if j == 0 else geo.exp_map(metric, base, d[:, None] * nu)
        for i in range(len(th)):
            ids[i, j] = nodes.add(pts[i], region=-1 if j == 0 else ci,
                                  fiber=(th[i], d[i], frac), on_arc=j == 0)
    ncol = len(th) if c.curve.closed else len(th) - 1
    # outward normal on the right of travel means the crescent is on the right
    flip = c.curve.outward > 0
    for i in range(ncol):
        i2 = (i + 1) % len(th)
        first_half = i < ncol / 2
        for j in range(layers):
            a, b, cc, d = ids[i, j], ids[i2, j], ids[i2, j + 1], ids[i, j + 1]
            quad_t = [(a, b, cc), (a, cc, d)] if first_half else [(a, b, d), (b, cc, d)]
            for tri in quad_t:
                tris.append(tri[::-1] if flip else tri)
        bedges.append((ids[i, layers], ids[i2, layers]))
        markers.append(f"outer_crescent_{c.tag}")
    if not c.curve.closed:
        for j in range(layers):
            for i in (0, len(th) - 1):
                bedges.append((ids[i, j], ids[i, j + 1]))
                markers.append("corner_hole")
    arc_nodes = [ids[i, 0] for i in range(len(th))]
    return arc_nodes, th


def _hole_arc_points(corner, p_start, p_end, region, h):
    """Circle arc around ``corner`` from ``p_start`` to ``p_end`` inside ``region``."""
    r = np.linalg.norm(p_start - corner)
    a0 = math.atan2(*(p_start - corner)[::-1])
    a1 = math.atan2(*(p_end - corner)[::-1])
    best = None
    for da in ((a1 - a0) % (2 * math.pi), (a1 - a0) % (2 * math.pi) - 2 * math.pi):
        mid = corner + 1.05 * r * np.array([math.cos(a0 + da / 2), math.sin(a0 + da / 2)])
        if region.contains(Point(mid)):
            best = da
    if best is None:
        best = (a1 - a0) % (2 * math.pi)
    n = max(2, int(math.ceil(abs(best) * r / h)))
    ang = a0 + best * np.linspace(0.0, 1.0, n + 1)
    pts = corner + r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pts[0], pts[-1] = p_start, p_end
    return pts


def _mirror_partner(aux, ci):
    mid = aux.crescents[ci].curve(0.5)[::-1]
    for cj, d in enumerate(aux.crescents):
        if np.linalg.norm(d.curve(0.5) - mid) < 1e-9:
            return cj
    raise MeshQuality("domain is not symmetric under (x, y) -> (y, x)")


def _clip_to_half(arc, corner, r):
    """Part of a hole arc with ``y >= x``, ending exactly on the diagonal."""
    keep = arc[:, 1] - arc[:, 0] > 1e-12
    if keep.all():
        return arc
    if not keep.any():
        return None
    if corner[0] != corner[1]:
        return arc[keep]
    cands = [corner + sgn * r / math.sqrt(2) for sgn in (-1.0, 1.0)]
    if keep[0]:
        last = arc[np.argmin(keep) - 1]
        x = min(cands, key=lambda c: np.linalg.norm(c - last))
        return np.concatenate([arc[: np.argmin(keep)], [x]])
    first_kept = int(np.argmax(keep))
    x = min(cands, key=lambda c: np.linalg.norm(c - arc[first_kept]))
    return np.concatenate([[x], arc[first_kept:]])


def _in_half(p, mirror):
    if mirror is None:
        return np.ones(len(p), dtype=bool)
    return p[:, 1] - p[:, 0] >= -1e-12


def _collar_points(aux, arc_chains, thetas, h, first, ratio, mirror):
    """Rows of points inside the domain parallel to each meshed arc."""
    metric = aux.domain.metric
    arcs = [aux.crescents[ci].curve.polyline(800) for ci in range(len(aux.crescents))]
    arc_lines = [LineString(a) for a in arcs]
    out, owner, spacing = [], [], []
    deltas = []
    dlt = first
    while dlt < 0.75 * h:
        deltas.append(dlt)
        dlt *= ratio
    for ci, th in thetas.items():
        c = aux.crescents[ci]
        inner = th[1:-1] if not c.curve.closed else th
        base = c.curve(inner)
        nu = geo.outward_normal(metric, c.curve, inner)
        for dlt in deltas:
            pts = geo.exp_map(metric, base, -dlt * nu)
            P = shapely.points(pts)
            ok = np.ones(len(pts), dtype=bool)
            for cj, ln in enumerate(arc_lines):
                if cj != ci:
                    ok &= shapely.distance(P, ln) > 1.5 * dlt
            if mirror is not None:
                ok &= (pts[:, 1] - pts[:, 0]) / math.sqrt(2) > 0.5 * dlt
            if aux.r_corner > 0:
                for corner in aux.domain.corner_array:
                    ok &= np.linalg.norm(pts - corner, axis=1) > aux.r_corner + 0.5 * dlt
            out.append(pts[ok])
            spacing.append(np.full(np.count_nonzero(ok), dlt))
    if not out:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(out), np.concatenate(spacing)


def _domain_part(aux, arc_chains, h, nodes, tris, bedges, markers, mirror, thetas=None,
                 collar_first=None, collar_ratio=1.5):
    dom = aux.domain
    region = dom.polygon()
    corners = dom.corner_array
    for c in corners:
        region = region.difference(Point(c).buffer(aux.r_corner, 256))
    # boundary linework as polylines of nodes
    lines = []
    for ci, chain in arc_chains.items():
        lines.append(np.array([nodes.coords[k] for k in chain]))
    # corner hole arcs joining consecutive trimmed arcs
    if aux.r_corner > 0:
        ends_at = {}
        for ci, cres in enumerate(aux.crescents):
            if cres.curve.closed:
                continue
            if ci in arc_chains:
                chain = arc_chains[ci]
                p0 = np.array(nodes.coords[chain[0]])
                p1 = np.array(nodes.coords[chain[-1]])
            else:
                partner = _mirror_partner(aux, ci)
                chain = arc_chains[partner]
                p0 = np.array(nodes.coords[chain[-1]])[::-1]
                p1 = np.array(nodes.coords[chain[0]])[::-1]
            a, b = dom.arc_corners[cres.arc_index]
            ends_at.setdefault(a, []).append(p0)
            ends_at.setdefault(b, []).append(p1)
        for k, pts in sorted(ends_at.items()):
            if len(pts) != 2:
                continue
            arc = _hole_arc_points(corners[k], pts[0], pts[1], region, h)
            if mirror is not None:
                arc = _clip_to_half(arc, corners[k], aux.r_corner)
                if arc is None:
                    continue
            lines.append(arc)
            for p, q in zip(arc[:-1], arc[1:]):
                bedges.append((p, q))
                markers.append("corner_hole")
    if mirror is not None:
        diag = shapely.intersection(region, LineString([(-1e6, -1e6), (1e6, 1e6)]))
        for g in getattr(diag, "geoms", [diag]):
            xs = np.asarray(g.coords)[:, 0]
            lo, hi = xs.min(), xs.max()
            # snap to the exact crossings with corner circles centered on the diagonal
            for c in corners:
                if c[0] == c[1] and aux.r_corner > 0:
                    for sgn in (-1.0, 1.0):
                        x = c[0] + sgn * aux.r_corner / math.sqrt(2)
                        if abs(x - lo) < 1e-6:
                            lo = x
                        if abs(x - hi) < 1e-6:
                            hi = x
            n = max(1, int(math.ceil((hi - lo) * math.sqrt(2) / h)))
            v = np.linspace(lo, hi, n + 1)
            lines.append(np.stack([v, v], axis=1))
    bpts = np.concatenate(lines)
    bpts = bpts[_in_half(bpts, mirror)]
    # interior lattice points away from the linework
    lat = _hex_lattice(region.bounds, h, origin=(0.0, 0.0))
    inside = shapely.contains_xy(region, lat[:, 0], lat[:, 1])
    lat = lat[inside & _in_half(lat, mirror)]
    linework = shapely.MultiLineString([ln for ln in lines])
    dist = shapely.distance(shapely.points(lat), linework)
    lat = lat[dist > 0.55 * h]
    collar = np.zeros((0, 2))
    if thetas and collar_first is not None and collar_first < 0.75 * h:
        collar, _ = _collar_points(aux, arc_chains, thetas, h, collar_first, collar_ratio, mirror)
        if len(collar):
            inside = shapely.contains_xy(region, collar[:, 0], collar[:, 1])
            collar = collar[inside]
            dd, _ = cKDTree(collar).query(lat)
            lat = lat[dd > 0.55 * h]
    pts = np.concatenate([bpts, collar, lat])
    pts = np.unique(pts, axis=0)
    tri = Delaunay(pts)
    simp = tri.simplices
    cen = pts[simp].mean(axis=1)
    keep = shapely.contains_xy(region, cen[:, 0], cen[:, 1]) & _in_half(cen, mirror)
    if mirror is not None:
        keep &= cen[:, 1] - cen[:, 0] > 0
    simp = simp[keep]
    ids = np.array([nodes.add(p) for p in pts])
    for s in simp:
        a, b, c = ids[s]
        pa, pb, pc = (np.array(nodes.coords[k]) for k in (a, b, c))
        cross = (pb - pa)[0] * (pc - pa)[1] - (pb - pa)[1] * (pc - pa)[0]
        tris.append((a, b, c) if cross > 0 else (a, c, b))
    return lines


def mesh_auxiliary(aux, h, layers=None, mirror=None, collar_first=None, collar_ratio=1.5):
    """Conforming triangle mesh of the auxiliary domain at size ``h``.

    Inside the domain, rows of points parallel to each arc are added at
    distances ``collar_first * collar_ratio**j`` below ``h`` so the steep
    layer next to the arcs is resolved; ``collar_first`` defaults to the
    crescent layer thickness at the middle of the arc.
    """
    aux_ratio = collar_ratio
    if layers is None:
        layers = max(4, int(math.ceil(3 * aux.epsilon / h)))
    if aux.r_corner <= 0:
        aux.r_corner = 2 * h
    nodes = _NodeTable()
    tris, bedges, markers = [], [], []
    chains, thetas = {}, {}
    for ci, c in enumerate(aux.crescents):
        if mirror is not None:
            mid = c.curve(0.5)
            if mid[1] - mid[0] < 0:
                continue
        chain, th = _crescent_block(aux, ci, h, layers, nodes, tris, bedges, markers)
        chains[ci] = chain
        thetas[ci] = th
    first = aux.epsilon / layers if collar_first is None else collar_first
    _domain_part(aux, chains, h, nodes, tris, bedges, markers, mirror, thetas, first, aux_ratio)
    # hole edges were stored as coordinate pairs; convert to node ids where present
    fixed_edges, fixed_markers = [], []
    for e, m in zip(bedges, markers):
        if isinstance(e[0], np.ndarray):
            ka = nodes.index.get((float(e[0][0]) + 0.0, float(e[0][1]) + 0.0))
            kb = nodes.index.get((float(e[1][0]) + 0.0, float(e[1][1]) + 0.0))
            if ka is None or kb is None:
                continue
            e = (ka, kb)
        fixed_edges.append(e)
        fixed_markers.append(m)
    V = np.array(nodes.coords, dtype=float)
    T = np.array(tris, dtype=int)
    E = np.array(fixed_edges, dtype=int).reshape(-1, 2)
    M = np.array(fixed_markers, dtype=object)
    R = np.array(nodes.region, dtype=int)
    F = np.array(nodes.fiber, dtype=float)
    A = np.array(nodes.on_arc, dtype=bool)
    mirror_map = None
    if mirror is not None:
        V, T, E, M, R, F, A, mirror_map = _reflect(aux, V, T, E, M, R, F, A)
    mesh = TriangleMesh(V, T, E, M, R, F, A, mirror_map, aux.crescents, h)
    _check_boundary_recovered(mesh)
    mesh.check()
    return mesh


def mesh_region(region, h):
    """Plain triangle mesh of a domain without crescents.

    ``region`` is a PolygonalDomain or a shapely polygon. Boundary edges are
    marked with the tag of their arc (``boundary`` for shapely input) and
    every vertex belongs to the domain part.
    """
    if isinstance(region, geo.PolygonalDomain):
        rings = []
        for loop in region.boundary_loops():
            pts = [c.polyline(2000) if fwd else c.polyline(2000)[::-1] for c, fwd in loop]
            tags = [c.tag for c, _ in loop]
            rings.append(list(zip(pts, tags)))
        poly = region.polygon(2000)
    else:
        poly = region
        rings = [[(np.asarray(poly.exterior.coords), "boundary")]]
        rings += [[(np.asarray(r.coords), "boundary")] for r in poly.interiors]
    pieces, tags = [], []
    for ring in rings:
        for pts, tag in ring:
            pieces.append(_resample(np.asarray(pts, dtype=float), h))
            tags.append(tag)
    bpts = np.unique(np.concatenate(pieces), axis=0)
    lat = _hex_lattice(poly.bounds, h)
    lat = lat[shapely.contains_xy(poly, lat[:, 0], lat[:, 1])]
    lines = shapely.MultiLineString([p for p in pieces])
    lat = lat[shapely.distance(shapely.points(lat), lines) > 0.55 * h]
    pts = np.concatenate([bpts, lat])
    simp = Delaunay(pts).simplices
    cen = pts[simp].mean(axis=1)
    simp = simp[shapely.contains_xy(poly, cen[:, 0], cen[:, 1])]
    d1 = pts[simp[:, 1]] - pts[simp[:, 0]]
    d2 = pts[simp[:, 2]] - pts[simp[:, 0]]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    used = np.unique(simp)
    remap = np.full(len(pts), -1)
    remap[used] = np.arange(len(used))
    V, T = pts[used], remap[simp]
    tree = cKDTree(V)
    edges, markers = [], []
    for piece, tag in zip(pieces, tags):
        _, ids = tree.query(piece)
        for a, b in zip(ids[:-1], ids[1:]):
            if a != b:
                edges.append((a, b))
                markers.append(tag)
    n = len(V)
    mesh = TriangleMesh(V, T, np.array(edges, dtype=int).reshape(-1, 2), np.array(markers, dtype=object),
                        np.full(n, -1), np.full((n, 3), np.nan), np.zeros(n, dtype=bool), None, [], h)
    mesh.check()
    return mesh


def _reflect(aux, V, T, E, M, R, F, A):
    """Append the mirror image across ``y = x`` and merge diagonal nodes."""
    n = len(V)
    on_diag = V[:, 0] == V[:, 1]
    W = V[:, ::-1].copy()
    new_index = np.empty(n, dtype=int)
    extra = np.flatnonzero(~on_diag)
    new_index[on_diag] = np.flatnonzero(on_diag)
    new_index[extra] = n + np.arange(len(extra))
    V2 = np.concatenate([V, W[extra]])
    # crescent correspondence: mirrored arc midpoints
    cmap = {}
    for ci, c in enumerate(aux.crescents):
        mid = c.curve(0.5)[::-1]
        for cj, d in enumerate(aux.crescents):
            if np.linalg.norm(d.curve(0.5) - mid) < 1e-9:
                cmap[ci] = cj
    R2 = np.concatenate([R, np.array([cmap.get(r, r) if r >= 0 else r for r in R[extra]], dtype=int)])
    F2 = np.concatenate([F, F[extra]])
    A2 = np.concatenate([A, A[extra]])
    T2 = np.concatenate([T, new_index[T][:, ::-1]])
    E2 = np.concatenate([E, new_index[E]])
    swap = {"outer_crescent_plus": "outer_crescent_minus", "outer_crescent_minus": "outer_crescent_plus"}
    M2 = np.concatenate([M, np.array([swap.get(m, m) for m in M], dtype=object)])
    mirror_map = np.concatenate([new_index, np.empty(len(extra), dtype=int)])
    mirror_map[n:] = extra
    # fiber coordinates of mirrored nodes refer to the mirrored arc, whose parameter runs backwards
    F2[n:, 0] = 1.0 - F2[n:, 0]
    return V2, T2, E2, M2, R2, F2, A2, mirror_map


def _check_boundary_recovered(mesh):
    edges = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                                    mesh.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    boundary = uniq[counts == 1]
    have = {tuple(e) for e in np.sort(mesh.boundary_edges, axis=1)}
    missing = [e for e in map(tuple, boundary) if e not in have]
    if missing:
        raise MeshQuality(f"{len(missing)} mesh boundary edges do not lie on the declared boundary")
