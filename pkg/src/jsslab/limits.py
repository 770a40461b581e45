"""Classification of the k -> infinity behavior of regularized solutions.

Vertices are labeled by how ``u_k`` moves along the tail of the schedule:
plus and minus when it grows at the rate of the crescent data ``sqrt(k)``,
``omega0`` when it settles. The dispatch then decides between the limit
solution and a retranslation of the family.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import shapely
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import InconclusiveLimit, OffsetTooLarge
from .flux import stability_from_samples
from .pmc import DiscreteScalarField, ElementData, flux_residual, shape_gradients

DIV_FACTOR = 0.5
UNDECIDED_LIMIT = 0.05
STABILITY_FLAG = -1e-3


class Label(enum.IntEnum):
    OMEGA0 = 0
    PLUS = 1
    MINUS = 2
    UNDECIDED = 3


@dataclass
class RegionDecomposition:
    labels: np.ndarray  # Label values per vertex
    limit_field: DiscreteScalarField  # tail values on omega0, nan elsewhere
    interfaces: list  # (tag, segments of shape (m, 2, 2))
    k: float = math.nan
    t_div: float = math.nan

    def fraction(self, label, mask=None):
        lab = self.labels if mask is None else self.labels[mask]
        return float(np.mean(lab == label)) if len(lab) else 0.0


@dataclass(frozen=True)
class FluxProfile:
    curve: geo.CurveSegment
    samples: np.ndarray  # rows (t, g(nu, Du) / W)

    @property
    def values(self):
        return self.samples[:, 1]


@dataclass(frozen=True)
class FluxBalance:
    area_term: float
    capillarity_term: float
    boundary_consistent: float
    boundary_trace: float
    discrepancy: float
    trace_discrepancy: float
    tolerance: float
    trace_coverage: float = 1.0

    @property
    def passes(self):
        return self.discrepancy <= self.tolerance


@dataclass(frozen=True)
class Dispatch:
    kind: str  # CaseC_solution, CaseB_retranslate, CaseBprime_retranslate, Inconsistent
    limit_field: DiscreteScalarField | None = None
    anchor: int | None = None
    reason: str = ""


# --------------------------------------------------------------------------
# classification


def _fields_and_ks(solutions, ks=None):
    if ks is None:
        ks = [s.k for s in solutions]
        fields = [s.u for s in solutions]
    else:
        fields = list(solutions)
    vals = [f.values if isinstance(f, DiscreteScalarField) else np.asarray(f, dtype=float)
            for f in fields]
    ks = [float(k) for k in ks]
    if len(vals) != len(ks):
        raise ValueError("one k per field expected")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k values must increase")
    return fields, np.array(vals), np.array(ks)


def classify_regions(solutions, ks=None, mesh=None, div_factor=DIV_FACTOR,
                     undecided_limit=UNDECIDED_LIMIT, mask=None):
    """Label vertices by the tail behavior of ``u_k``.

    ``solutions`` is a list of solve results (with ``.u`` and ``.k``), or of
    fields together with ``ks``. A vertex diverges to plus infinity when
    ``u_K > T_div = div_factor sqrt(K)`` at the last entry and ``u_k``
    increases along the last three entries; minus is symmetric. Other
    vertices whose last increment stays below ``div_factor`` times the
    increment of ``sqrt(k)`` are ``omega0``; the rest are undecided. ``mask`` restricts the
    undecided count to a subset of vertices.
    """
    fields, U, ks = _fields_and_ks(solutions, ks)
    if len(ks) < 3:
        raise ValueError("at least three schedule entries are needed")
    if mesh is None:
        mesh = fields[0].mesh
    K = ks[-1]
    t_div = div_factor * math.sqrt(K)
    tail = U[-3:]
    rate = div_factor * np.diff(np.sqrt(ks[-3:]))
    inc = np.diff(tail, axis=0)
    last = tail[-1]
    plus = (last > t_div) & np.all(inc > 0, axis=0)
    minus = (last < -t_div) & np.all(inc < 0, axis=0)
    settled = np.abs(inc[-1]) <= rate[-1]
    labels = np.full(len(last), Label.UNDECIDED, dtype=int)
    labels[settled] = Label.OMEGA0
    labels[plus] = Label.PLUS
    labels[minus] = Label.MINUS
    counted = labels if mask is None else labels[mask]
    frac = float(np.mean(counted == Label.UNDECIDED)) if len(counted) else 0.0
    if frac > undecided_limit:
        raise InconclusiveLimit(f"{100 * frac:.1f}% of vertices undecided")
    limit = np.where(labels == Label.OMEGA0, last, np.nan)
    lf = DiscreteScalarField(mesh, limit, f"limit k={K:g}")
    return RegionDecomposition(labels, lf, label_interfaces(mesh, labels), K, t_div)


def label_interfaces(mesh, labels):
    """Segments of the midpoint contour between differently labeled vertices."""
    tri = mesh.triangles
    L = labels[tri]
    V = mesh.vertices
    out = {}
    mixed = ~((L[:, 0] == L[:, 1]) & (L[:, 1] == L[:, 2]))
    for t in np.flatnonzero(mixed):
        ids = tri[t]
        lab = L[t]
        mids = []
        names = set()
        for a, b in ((0, 1), (1, 2), (2, 0)):
            if lab[a] != lab[b]:
                mids.append(0.5 * (V[ids[a]] + V[ids[b]]))
                names.add(tuple(sorted((Label(lab[a]).name.lower(), Label(lab[b]).name.lower()))))
        if len(mids) == 2:
            key = "|".join(next(iter(names)))
            out.setdefault(key, []).append(np.array(mids))
        elif len(mids) == 3:
            cen = V[ids].mean(axis=0)
            for (a, b), m in zip(((0, 1), (1, 2), (2, 0)), mids):
                key = "|".join(sorted((Label(lab[a]).name.lower(), Label(lab[b]).name.lower())))
                out.setdefault(key, []).append(np.array([m, cen]))
    return [(k, np.array(v)) for k, v in sorted(out.items())]


# --------------------------------------------------------------------------
# normal fields and fluxes


def _values(u):
    return u.values if isinstance(u, DiscreteScalarField) else np.asarray(u, dtype=float)


def normal_field(u, metric=None, mesh=None):
    """Per-triangle ``Du / sqrt(1 + |Du|^2)`` as chart vector components.

    With a metric the gradient is raised with ``g^{-1}`` and the norm is the
    metric one, so ``|X|_g < 1``.
    """
    if mesh is None:
        mesh = u.mesh
    B, _ = shape_gradients(mesh)
    p = np.einsum("tij,tj->ti", B, _values(u)[mesh.triangles])
    if metric is None or metric.kind == "flat":
        W = np.sqrt(1.0 + np.einsum("ti,ti->t", p, p))
        return p / W[:, None]
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    q = np.einsum("tij,tj->ti", metric.inverse(cen), p)
    W = np.sqrt(1.0 + np.einsum("ti,ti->t", p, q))
    return q / W[:, None]


def locate(mesh, points, tol=1e-10):
    """Index of a triangle containing each point, ``-1`` when outside."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    V = mesh.vertices[mesh.triangles]
    tree = cKDTree(V.mean(axis=1))
    k = min(24, len(V))
    _, idx = tree.query(points, k=k)
    idx = np.atleast_2d(idx)
    out = np.full(len(points), -1)
    for col in range(k):
        todo = out < 0
        if not todo.any():
            break
        t = idx[todo, col]
        a, b, c = V[t, 0], V[t, 1], V[t, 2]
        p = points[todo]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        l1 = ((p[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (p[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (p[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (p[:, 0] - a[:, 0])) / det
        inside = (l1 >= -tol) & (l2 >= -tol) & (1 - l1 - l2 >= -tol)
        sub = np.flatnonzero(todo)
        out[sub[inside]] = t[inside]
    return out


def boundary_flux_profile(u, curve, d, metric=None, n=201, mesh=None, t_range=(0.0, 1.0)):
    """``g(nu, Du) / W`` along the curve pushed a distance ``d`` into the domain.

    ``nu`` is the unit normal of the parallel curve on the side the curve
    calls outward, so plus arcs give values near ``+1`` for solutions that
    blow up there. ``t_range`` restricts the curve parameter, which keeps
    the samples away from excised corners.
    """
    if mesh is None:
        mesh = u.mesh
    if metric is None:
        metric = geo.MetricField.flat()
    t = np.linspace(t_range[0], t_range[1], n)
    base = curve(t)
    nu0 = geo.outward_normal(metric, curve, t)
    pts = geo.exp_map(metric, base, -d * nu0)
    tri = locate(mesh, pts)
    if np.any(tri < 0):
        raise OffsetTooLarge(f"{np.count_nonzero(tri < 0)} offset samples leave the mesh")
    # outward unit normal at the offset point: direction of the geodesic there
    delta = 1e-6 * max(d, 1e-3)
    ahead = geo.exp_map(metric, base, -(d - delta) * nu0)
    behind = geo.exp_map(metric, base, -(d + delta) * nu0)
    nu = ahead - behind
    nu = nu / metric.norm(pts, nu)[:, None]
    X = normal_field(u, metric, mesh)[tri]
    vals = np.einsum("ni,nij,nj->n", nu, metric.tensor(pts), X)
    return FluxProfile(curve, np.column_stack([t, vals]))


def _polygon_loops(P, n=2000):
    """Closed chart polylines of the boundary loops of ``P``."""
    loops = P.loops if hasattr(P, "loops") else P
    out = []
    for loop in loops:
        pts = []
        for curve, forward in loop:
            line = curve.polyline(n)
            pts.append(line if forward else line[::-1])
        ring = np.concatenate([p[:-1] for p in pts] + [pts[-1][-1:]])
        out.append(ring)
    return out


def _trace_flux(metric, mesh, X, rings, inset):
    """``sum sqrt(g) (X^1 dy - X^2 dx)`` over the rings, outward orientation.

    Returns the flux and the covered fraction of the chart length.
    """
    total = covered = length = 0.0
    for ring in rings:
        seg = np.diff(ring, axis=0)
        mid = 0.5 * (ring[1:] + ring[:-1])
        ln = np.linalg.norm(seg, axis=1)
        keep = ln > 0
        seg, mid, ln = seg[keep], mid[keep], ln[keep]
        # probe just inside the region: the left of travel for counter-clockwise rings
        signed = 0.5 * np.sum(ring[:-1, 0] * ring[1:, 1] - ring[1:, 0] * ring[:-1, 1])
        left = np.column_stack([-seg[:, 1], seg[:, 0]]) / ln[:, None]
        if signed < 0:
            left = -left
        tri = locate(mesh, mid + inset * left)
        # stretches outside the mesh (excised corners) are skipped and reported
        hit = tri >= 0
        covered += float(np.sum(ln[hit]))
        length += float(np.sum(ln))
        Xm = X[tri[hit]]
        contrib = metric.sqrt_det(mid[hit]) * (Xm[:, 0] * seg[hit, 1] - Xm[:, 1] * seg[hit, 0])
        total += float(np.sum(contrib)) * (1.0 if signed > 0 else -1.0)
    return total, covered / length


def flux_balance(metric, u, P, k=math.inf, Hk=None, mesh=None, inset=None):
    """Both sides of the divergence identity for ``div X = H_k + u / k`` on ``P``.

    The consistent boundary flux is ``-sum A(u)_i`` over the vertices in the
    closed polygon, which makes the identity exact for a discrete solution up
    to the Newton residual. The trace flux integrates ``g(nu, X)`` along the
    polygon boundary with ``X`` from the adjacent triangles.
    """
    if mesh is None:
        mesh = u.mesh
    vals = _values(u)
    el = ElementData.build(metric, mesh)
    Hk = np.zeros(mesh.n) if Hk is None else np.broadcast_to(np.asarray(Hk, dtype=float), (mesh.n,))
    rings = _polygon_loops(P)
    polys = [shapely.Polygon(r) for r in rings]
    polys.sort(key=lambda p: -p.area)
    region = polys[0]
    for hole in polys[1:]:
        region = region.difference(hole)
    scale = math.sqrt(region.area)
    tol = max(1e-9 * scale, 1e-3 * mesh.h)
    inside = shapely.contains_xy(region.buffer(tol), mesh.vertices[:, 0], mesh.vertices[:, 1])
    idx = np.flatnonzero(inside)
    area_term = float(np.sum(el.mass[idx] * Hk[idx]))
    cap = 0.0 if math.isinf(k) else float(np.sum(el.mass[idx] * vals[idx]) / k)
    A = flux_residual(el, mesh, vals)
    consistent = -float(np.sum(A[idx]))
    X = normal_field(vals, metric, mesh)
    if inset is None:
        inset = 0.25 * mesh.h if mesh.h > 0 else 1e-6 * scale
    trace, coverage = _trace_flux(metric, mesh, X, rings, inset)
    perim = sum(float(np.sum(np.sqrt(np.einsum("ni,nij,nj->n", np.diff(r, axis=0),
                                                metric.tensor(0.5 * (r[1:] + r[:-1])),
                                                np.diff(r, axis=0))))) for r in rings)
    return FluxBalance(area_term, cap, consistent, trace,
                       abs(consistent - area_term - cap), abs(trace - area_term - cap),
                       1e-8 * perim, coverage)


# --------------------------------------------------------------------------
# equicontinuity and stability diagnostics


@dataclass(frozen=True)
class ModulusTable:
    deltas: tuple
    omegas: tuple

    @property
    def monotone(self):
        return all(b <= a + 1e-14 for a, b in zip(self.omegas, self.omegas[1:]))


def equicontinuity_check(family, mask=None, deltas=(0.04, 0.02, 0.01), metric=None):
    """Empirical modulus of continuity of the normal fields of a family.

    ``omega(delta)`` is the largest ``|X(p) - X(q)|`` over the family and
    over triangle centroids ``p, q`` within ``delta`` whose vertices all lie in
    ``mask``. ``deltas`` are taken in decreasing order.
    """
    deltas = tuple(sorted((float(d) for d in deltas), reverse=True))
    mesh = family[0].mesh
    tri = mesh.triangles
    keep = np.ones(len(tri), dtype=bool) if mask is None else np.all(np.asarray(mask)[tri], axis=1)
    cen = mesh.vertices[tri].mean(axis=1)[keep]
    tree = cKDTree(cen)
    pairs = tree.query_pairs(deltas[0], output_type="ndarray")
    dist = np.linalg.norm(cen[pairs[:, 0]] - cen[pairs[:, 1]], axis=1) if len(pairs) else np.zeros(0)
    worst = np.zeros(len(pairs))
    for f in family:
        X = normal_field(f, metric, mesh)[keep]
        if len(pairs):
            worst = np.maximum(worst, np.linalg.norm(X[pairs[:, 0]] - X[pairs[:, 1]], axis=1))
    omegas = tuple(float(worst[dist <= d].max()) if np.any(dist <= d) else 0.0 for d in deltas)
    return ModulusTable(deltas, omegas)


def interface_rayleigh(metric, polyline, H0, closed=False):
    """Smallest eigenvalue of ``-d^2/ds^2 - (H0^2 + K)`` along an interface polyline.

    Returns ``(value, flagged)``; values below ``-1e-3`` are flagged unstable.
    """
    pts = np.asarray(polyline, dtype=float)
    if closed and np.linalg.norm(pts[0] - pts[-1]) > 0:
        pts = np.vstack([pts, pts[:1]])
    seg = np.diff(pts, axis=0)
    mid = 0.5 * (pts[1:] + pts[:-1])
    ds = np.sqrt(np.einsum("ni,nij,nj->n", seg, metric.tensor(mid), seg))
    s = np.concatenate([[0.0], np.cumsum(ds)])
    V = H0**2 + metric.gauss_curvature(pts)
    lam = stability_from_samples(s, V, closed)
    return lam, lam < STABILITY_FLAG


# --------------------------------------------------------------------------
# dispatch


def _adjacency(mesh, mask):
    tri = mesh.triangles
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e = e[mask[e[:, 0]] & mask[e[:, 1]]]
    return sps.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(mesh.n, mesh.n))


def retranslation_anchor(mesh, values, labels, omega, label):
    """Anchor vertex for the retranslation of a family diverging on ``label``.

    For minus labels each connected component of the labeled part of the
    domain contributes its vertex of minimal ``u``, and the component
    minimum with the largest value wins; plus labels use maxima and the
    smallest of them.
    """
    sel = omega & (labels == label)
    if not sel.any():
        return None
    _, comp = connected_components(_adjacency(mesh, sel), directed=False)
    best, best_val = None, None
    sign = 1.0 if label == Label.MINUS else -1.0
    for c in np.unique(comp[sel]):
        ids = np.flatnonzero(sel & (comp == c))
        i = ids[np.argmin(sign * values[ids])]
        if best is None or sign * values[i] > sign * best_val:
            best, best_val = int(i), values[i]
    return best


def interior_mask(prob):
    """Domain vertices outside the collar where the cutoff ``chi`` is active.

    Within that collar the regularized equation is not the limit equation
    and vertices next to the arcs follow the crescent data at finite ``k``.
    """
    return (prob.mesh.region < 0) & (prob.chi == 0)


def case_dispatch(decomposition, report, solutions=None, omega=None, mesh=None):
    """Case C, Case b or b' retranslation, or an inconsistency verdict.

    ``omega`` masks the domain vertices taken into account (all domain
    vertices by default, see ``interior_mask``); undecided vertices are
    ignored. ``report`` is the flux report (or a plain verdict).
    """
    lab = decomposition.labels
    if mesh is None:
        mesh = decomposition.limit_field.mesh
    if omega is None:
        omega = mesh.region < 0
    verdict = getattr(report, "verdict", report)
    decided = omega & (lab != Label.UNDECIDED)
    if not decided.any():
        return Dispatch("Inconsistent", reason="no decided vertex in the domain")
    inner = lab[decided]
    last = None
    if solutions is not None:
        last = _fields_and_ks(solutions)[1][-1] if hasattr(solutions[0], "k") else _values(solutions[-1])
    if np.all(inner == Label.OMEGA0):
        return Dispatch("CaseC_solution", limit_field=decomposition.limit_field)
    if np.all(inner == Label.MINUS):
        vals = last if last is not None else np.zeros(mesh.n)
        return Dispatch("CaseB_retranslate", anchor=retranslation_anchor(mesh, vals, lab, omega, Label.MINUS))
    if np.all(inner == Label.PLUS):
        vals = last if last is not None else np.zeros(mesh.n)
        return Dispatch("CaseBprime_retranslate",
                        anchor=retranslation_anchor(mesh, vals, lab, omega, Label.PLUS))
    counts = {Label(v).name.lower(): int(np.count_nonzero(inner == v)) for v in np.unique(inner)}
    why = "domain splits into " + ", ".join(f"{n}={c}" for n, c in sorted(counts.items()))
    if verdict:
        why += " although the flux conditions hold"
    return Dispatch("Inconsistent", reason=why)


@dataclass
class LimitRun:
    dispatch: Dispatch
    decompositions: list = field(default_factory=list)
    anchors: list = field(default_factory=list)
    path: list = field(default_factory=list)  # dispatch kinds in order


def analyze_limit(solutions, report, omega=None, max_retranslations=2, mask=None, **kw):
    """Classify, dispatch and retranslate until a terminal case is reached."""
    fields, U, ks = _fields_and_ks(solutions)
    mesh = fields[0].mesh
    run = LimitRun(None)
    for _ in range(max_retranslations + 1):
        dec = classify_regions([DiscreteScalarField(mesh, u) for u in U], ks, mesh, mask=mask, **kw)
        run.decompositions.append(dec)
        disp = case_dispatch(dec, report, [DiscreteScalarField(mesh, u) for u in U], omega, mesh)
        run.dispatch = disp
        run.path.append(disp.kind)
        if disp.kind not in ("CaseB_retranslate", "CaseBprime_retranslate") or disp.anchor is None:
            return run
        run.anchors.append(disp.anchor)
        U = U - U[:, disp.anchor][:, None]
    return run
