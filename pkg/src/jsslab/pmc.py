"""Capillarity-regularized prescribed mean curvature solves.

The discrete problem is the P1 Galerkin form of

    div(Du / W) = H_k + u / k,    W = sqrt(1 + |Du|^2_g),

with mass lumping for the zeroth-order terms and metric coefficients taken at
triangle centroids. Its residual is the gradient of the strictly convex
energy

    E(u) = sum_T |T|_g W_T + sum_i M_i (H_k,i u_i + u_i^2 / (2k)),

so damped Newton with an Armijo test on ``E`` converges from any start.
Dirichlet data ``+sqrt(k)`` and ``-sqrt(k)`` are imposed on the outer edges
of plus and minus crescents; corner holes carry the natural condition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import FiberInversionFailure, MeshQuality, SolveFailure
from .mesh import TriangleMesh

log = logging.getLogger(__name__)

TAU_NEWTON = 1e-9
MAX_ITER = 200
ARMIJO_FACTOR = 0.5
DAMPING_FLOOR = 2.0**-20


# --------------------------------------------------------------------------
# fields and element data


@dataclass
class DiscreteScalarField:
    """Nodal values of a P1 function on a triangle mesh."""

    mesh: TriangleMesh
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n,):
            raise ValueError("one value per mesh vertex expected")

    def gradient(self):
        """Chart gradient per triangle, shape ``(T, 2)``."""
        B, _ = shape_gradients(self.mesh)
        return np.einsum("tij,tj->ti", B, self.values[self.mesh.triangles])

    def __call__(self, points):
        return interpolate(self.mesh, self.values, points)


def shape_gradients(mesh):
    """Gradients of the three barycentric functions and chart areas."""
    V = mesh.vertices[mesh.triangles]
    d1 = V[:, 1] - V[:, 0]
    d2 = V[:, 2] - V[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise MeshQuality("degenerate or inverted triangle")
    inv = np.empty((len(V), 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    # rows of inv are gradients of the local coordinates (xi, eta)
    B = np.empty((len(V), 2, 3))
    B[:, :, 1] = inv[:, 0, :]
    B[:, :, 2] = inv[:, 1, :]
    B[:, :, 0] = -B[:, :, 1] - B[:, :, 2]
    return B, 0.5 * det


@dataclass
class ElementData:
    B: np.ndarray
    area: np.ndarray  # chart area
    ginv: np.ndarray
    sqrtg: np.ndarray
    mass: np.ndarray  # lumped nodal mass in the metric
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def build(cls, metric, mesh):
        B, area = shape_gradients(mesh)
        cen = mesh.vertices[mesh.triangles].mean(axis=1)
        ginv = metric.inverse(cen)
        sqrtg = metric.sqrt_det(cen)
        w = area * sqrtg / 3.0
        mass = np.bincount(mesh.triangles.ravel(), np.repeat(w, 3), minlength=mesh.n)
        rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        cols = np.tile(mesh.triangles, (1, 3)).ravel()
        return cls(B, area, ginv, sqrtg, mass, rows, cols)


def interpolate(mesh, values, points):
    """Barycentric interpolation; ``nan`` outside the mesh."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    V = mesh.vertices[mesh.triangles]
    cen = V.mean(axis=1)
    tree = cKDTree(cen)
    k = min(16, len(cen))
    _, idx = tree.query(points, k=k)
    idx = np.atleast_2d(idx)
    out = np.full(len(points), np.nan)
    for col in range(k):
        todo = np.isnan(out)
        if not todo.any():
            break
        t = idx[todo, col]
        a, b, c = V[t, 0], V[t, 1], V[t, 2]
        p = points[todo]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        l1 = ((p[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (p[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (p[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (p[:, 0] - a[:, 0])) / det
        l0 = 1 - l1 - l2
        inside = (l0 >= -1e-10) & (l1 >= -1e-10) & (l2 >= -1e-10)
        vals = values[mesh.triangles[t]]
        res = l0 * vals[:, 0] + l1 * vals[:, 1] + l2 * vals[:, 2]
        sub = np.flatnonzero(todo)
        out[sub[inside]] = res[inside]
    return out


def _flux_terms(el, u, tris):
    p = np.einsum("tij,tj->ti", el.B, u[tris])
    q = np.einsum("tij,tj->ti", el.ginv, p)
    W = np.sqrt(1.0 + np.einsum("ti,ti->t", p, q))
    return p, q, W


def flux_residual(el, mesh, u):
    """``A(u)_i = int g(Du, D phi_i) / W`` with centroid metric coefficients."""
    _, q, W = _flux_terms(el, u, mesh.triangles)
    loc = (el.area * el.sqrtg / W)[:, None] * np.einsum("tij,ti->tj", el.B, q)
    return np.bincount(mesh.triangles.ravel(), loc.ravel(), minlength=mesh.n)


def flux_jacobian(el, mesh, u):
    _, q, W = _flux_terms(el, u, mesh.triangles)
    D = el.ginv / W[:, None, None] - np.einsum("ti,tj->tij", q, q) / W[:, None, None] ** 3
    K = np.einsum("tai,tab,tbj->tij", el.B, D, el.B) * (el.area * el.sqrtg)[:, None, None]
    return sps.csr_matrix((K.ravel(), (el.rows, el.cols)), shape=(mesh.n, mesh.n))


def mean_curvature_operator(metric, mesh, u, el=None):
    """Lumped nodal values of ``div(Du / W)``.

    Boundary nodes carry the one-sided weak value, which includes the
    boundary flux; only interior nodes approximate the pointwise operator.
    """
    if el is None:
        el = ElementData.build(metric, mesh)
    vals = u.values if isinstance(u, DiscreteScalarField) else np.asarray(u, dtype=float)
    return DiscreteScalarField(mesh, -flux_residual(el, mesh, vals) / el.mass, "H(u)")


def boundary_nodes(mesh):
    edges = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                                    mesh.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


# --------------------------------------------------------------------------
# crescent barriers


def fiber_point(metric, crescent, theta, d):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = np.broadcast_to(np.asarray(d, dtype=float), theta.shape)
    base = crescent.curve(theta)
    nu = geo.outward_normal(metric, crescent.curve, theta)
    return geo.exp_map(metric, base, d[:, None] * nu)


def fiber_coordinates(metric, crescent, points, tol=1e-12):
    """Invert ``x = exp_{gamma(theta)}(d nu(theta))`` for points of a crescent."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    line_t = np.linspace(0.0, 1.0, 2001)
    line = crescent.curve(line_t)
    tree = cKDTree(line)
    _, near = tree.query(points)
    theta = line_t[near]
    nu = geo.outward_normal(metric, crescent.curve, theta)
    g = metric.tensor(line[near])
    d = np.einsum("ni,nij,nj->n", points - line[near], g, nu)
    for _ in range(50):
        X = fiber_point(metric, crescent, theta, d)
        F = X - points
        if np.max(np.abs(F)) < tol:
            break
        ht, hd = 1e-7, 1e-7
        Jt = (fiber_point(metric, crescent, theta + ht, d) - fiber_point(metric, crescent, theta - ht, d)) / (2 * ht)
        Jd = (fiber_point(metric, crescent, theta, d + hd) - fiber_point(metric, crescent, theta, d - hd)) / (2 * hd)
        det = Jt[:, 0] * Jd[:, 1] - Jt[:, 1] * Jd[:, 0]
        dt = (F[:, 0] * Jd[:, 1] - F[:, 1] * Jd[:, 0]) / det
        dd = (Jt[:, 0] * F[:, 1] - Jt[:, 1] * F[:, 0]) / det
        theta = theta - dt
        d = d - dd
    else:
        raise FiberInversionFailure("fiber inversion did not converge")
    width = crescent.epsilon * np.asarray(crescent.profile(np.clip(theta, 0, 1)), dtype=float)
    bad = (theta < -1e-9) | (theta > 1 + 1e-9) | (d < -1e-9) | (d > width * (1 + 1e-7) + 1e-12)
    if np.any(bad):
        raise FiberInversionFailure(f"{np.count_nonzero(bad)} points outside the crescent fiber chart")
    return theta, d


def barrier_from_fiber(crescent, theta, d, floor=None):
    """``sign * log(d / (epsilon Theta(theta)))``; plus sign for plus crescents."""
    width = crescent.epsilon * np.asarray(crescent.profile(theta), dtype=float)
    with np.errstate(divide="ignore"):
        val = np.log(np.asarray(d, dtype=float) / width)
    if floor is not None:
        val = np.maximum(val, floor)
    return crescent.sign * val


def crescent_barrier(metric, crescent, points, floor=None):
    """Barrier values at chart points of the crescent.

    For a plus crescent this is the sub solution piece ``log(t / (eps Theta))``,
    which is ``0`` on the outer edge and tends to ``-inf`` at the arc; the
    minus crescent gets the negative of the analogous expression.
    """
    theta, d = fiber_coordinates(metric, crescent, points)
    return barrier_from_fiber(crescent, theta, d, floor)


def _sqrt_G(metric, crescent, theta, d, h=1e-6):
    Xp = fiber_point(metric, crescent, theta + h, d)
    Xm = fiber_point(metric, crescent, theta - h, d)
    X = fiber_point(metric, crescent, theta, d)
    dX = (Xp - Xm) / (2 * h)
    return metric.norm(X, dX)


def _log_profile_slope(crescent, theta, h=1e-7):
    lp = lambda t: np.log(np.asarray(crescent.profile(t), dtype=float))
    return (lp(theta + h) - lp(theta - h)) / (2 * h)


def barrier_mean_curvature(metric, crescent, theta, d):
    """``div(Du / W)`` of the crescent barrier in fiber coordinates.

    In the coordinates ``(theta, d)`` the metric is ``G dtheta^2 + dd^2``
    and the barrier is ``s (log d - log eps - log Theta(theta))``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    s = crescent.sign

    def parts(th, dd):
        sg = _sqrt_G(metric, crescent, th, dd)
        ud = s / dd
        ut = -s * _log_profile_slope(crescent, th)
        W = np.sqrt(1.0 + ut**2 / sg**2 + ud**2)
        return sg, ud, ut, W

    ht = 1e-5
    hd = 1e-4 * d
    sg0, _, _, _ = parts(theta, d)
    sgp, udp, _, Wp = parts(theta, d + hd)
    sgm, udm, _, Wm = parts(theta, d - hd)
    dd_term = (sgp * udp / Wp - sgm * udm / Wm) / (2 * hd)
    sgp, _, utp, Wp = parts(theta + ht, d)
    sgm, _, utm, Wm = parts(theta - ht, d)
    dt_term = (utp / (sgp * Wp) - utm / (sgm * Wm)) / (2 * ht)
    return (dd_term + dt_term) / sg0


# --------------------------------------------------------------------------
# regularization data


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass
class RegularizationParams:
    k: float
    epsilon: float
    C: float
    chi: np.ndarray
    schedule: tuple = (1.0, 4.0, 16.0, 64.0)

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")


@dataclass
class Problem:
    """Everything that does not depend on ``k``."""

    metric: geo.MetricField
    mesh: TriangleMesh
    el: ElementData
    H: np.ndarray
    chi: np.ndarray
    dirichlet: np.ndarray
    dirichlet_sign: np.ndarray
    barrier: np.ndarray  # nodal barrier values on crescents (nan elsewhere)
    C: float
    H0: float
    epsilon: float
    crescent_H_dev: float

    def H_k(self, k):
        return self.H - self.chi / math.sqrt(k)

    def dirichlet_values(self, k):
        return self.dirichlet_sign * math.sqrt(k)


def cutoff_field(mesh, aux):
    """``chi``: ``+-1`` on crescents, smoothstep to ``0`` over ``2 eps`` inside."""
    from shapely import distance, points
    from shapely.geometry import LineString

    chi = np.zeros(mesh.n)
    omega = mesh.region < 0
    pts = points(mesh.vertices[omega])
    for ci, c in enumerate(aux.crescents):
        line = LineString(c.curve.polyline(800))
        dist = distance(pts, line)
        chi[omega] += c.sign * smoothstep(1.0 - dist / (2 * aux.epsilon))
        chi[mesh.region == ci] = c.sign
    return np.clip(chi, -1.0, 1.0)


def prepare_problem(aux, mesh, C=None):
    """Assemble ``H``, ``chi``, barriers and Dirichlet data on ``mesh``."""
    dom = aux.domain
    metric = dom.metric
    el = ElementData.build(metric, mesh)
    H = np.full(mesh.n, float(dom.H0))
    barrier = np.full(mesh.n, np.nan)
    dev = 0.0
    for ci, c in enumerate(aux.crescents):
        idx = np.flatnonzero(mesh.region == ci)
        theta, d = mesh.fiber[idx, 0], mesh.fiber[idx, 1]
        hvals = barrier_mean_curvature(metric, c, theta, d)
        H[idx] = hvals
        barrier[idx] = barrier_from_fiber(c, theta, d)
        dev = max(dev, float(np.max(np.abs(hvals - dom.H0)))) if len(idx) else dev
    chi = cutoff_field(mesh, aux)
    if mesh.mirror is not None:
        # the reflection swaps plus and minus data, so the data are odd under it
        if dom.H0 != 0:
            raise ValueError("mirror meshes require H0 = 0")
        H = 0.5 * (H - H[mesh.mirror])
        chi = 0.5 * (chi - chi[mesh.mirror])
        barrier = 0.5 * (barrier - barrier[mesh.mirror])
    if C is None:
        C = float(np.max(np.abs(H)) + 1.0) * 1.01
    dn = mesh.dirichlet_nodes()
    sign = np.zeros(len(dn))
    plus_edges = mesh.boundary_edges[mesh.boundary_markers == "outer_crescent_plus"]
    plus = np.isin(dn, plus_edges)
    sign[plus] = 1.0
    sign[~plus] = -1.0
    return Problem(metric, mesh, el, H, chi, dn, sign, barrier, C, float(dom.H0),
                   aux.epsilon, dev)


# --------------------------------------------------------------------------
# Newton solver


@dataclass
class SolveResult:
    u: DiscreteScalarField
    k: float
    iterations: int
    residual: float
    substeps: list = field(default_factory=list)
    perron_rounds: int = 0


def energy(prob, u, k, Hk):
    _, _, W = _flux_terms(prob.el, u, prob.mesh.triangles)
    return float(np.sum(prob.el.area * prob.el.sqrtg * W)
                 + np.sum(prob.el.mass * (Hk * u + u * u / (2 * k))))


def residual(prob, u, k, Hk):
    return flux_residual(prob.el, prob.mesh, u) + prob.el.mass * (Hk + u / k)


def newton(prob, u0, k, free, Hk=None, tol=TAU_NEWTON, max_iter=MAX_ITER):
    """Damped Newton on the free nodes; returns ``(u, iterations, residual)``."""
    if Hk is None:
        Hk = prob.H_k(k)
    u = u0.copy()
    bound = prob.C * k
    np.clip(u, -bound, bound, out=u)
    mass = prob.el.mass[free]
    E = energy(prob, u, k, Hk)
    res = np.inf
    for it in range(max_iter + 1):
        R = residual(prob, u, k, Hk)[free]
        res = float(np.max(np.abs(R) / mass)) if len(free) else 0.0
        if res <= tol:
            return u, it, res
        if it == max_iter:
            break
        K = flux_jacobian(prob.el, prob.mesh, u) + sps.diags(prob.el.mass / k)
        K = K[free][:, free].tocsc()
        step = spla.spsolve(K, -R)
        slope = float(R @ step)
        alpha = 1.0
        while True:
            trial = u.copy()
            trial[free] += alpha * step
            np.clip(trial, -bound, bound, out=trial)
            Et = energy(prob, trial, k, Hk)
            if Et <= E + 1e-4 * alpha * slope or abs(Et - E) <= 1e-15 * max(1.0, abs(E)):
                break
            alpha *= ARMIJO_FACTOR
            if alpha < DAMPING_FLOOR:
                raise SolveFailure(f"line search stalled at k={k:g}", res)
        u, E = trial, Et
    raise SolveFailure(f"Newton did not converge at k={k:g} after {max_iter} iterations", res)


def _free_nodes(prob):
    mask = np.ones(prob.mesh.n, dtype=bool)
    mask[prob.dirichlet] = False
    return np.flatnonzero(mask)


def perron_sweep(prob, u, k, tol=TAU_NEWTON, max_rounds=5):
    """Local crescent resolves with the current trace; keep pointwise maxima.

    Returns the updated field and the number of rounds that changed it.
    """
    mesh = prob.mesh
    free_all = _free_nodes(prob)
    rounds = 0
    for _ in range(max_rounds):
        cand = u.copy()
        for ci in range(len(mesh.crescents)):
            local = np.flatnonzero(mesh.region == ci)
            local = np.setdiff1d(local, prob.dirichlet)
            if not len(local):
                continue
            # only unknowns of this crescent move; everything else is trace data
            v, _, _ = newton(prob, u, k, local, tol=tol)
            cand = np.maximum(cand, v)
        if np.max(np.abs(cand - u)) <= 10 * tol * max(1.0, k):
            return u, rounds
        rounds += 1
        u, _, _ = newton(prob, cand, k, free_all, tol=tol)
    return u, rounds


def solve_regularized(prob, k, warm_start=None, tol=TAU_NEWTON, max_iter=MAX_ITER, sweep=True):
    """Largest discrete solution below ``C k`` with crescent Dirichlet data."""
    mesh = prob.mesh
    free = _free_nodes(prob)
    if warm_start is None:
        u0 = np.zeros(mesh.n)
    else:
        u0 = np.array(warm_start.values if isinstance(warm_start, DiscreteScalarField) else warm_start,
                      dtype=float)
    u0[prob.dirichlet] = prob.dirichlet_values(k)
    u, its, res = newton(prob, u0, k, free, tol=tol, max_iter=max_iter)
    rounds = 0
    if sweep:
        u, rounds = perron_sweep(prob, u, k, tol)
        res = float(np.max(np.abs(residual(prob, u, k, prob.H_k(k))[free]) / prob.el.mass[free]))
    return SolveResult(DiscreteScalarField(mesh, u, f"u_k={k:g}"), k, its, res, [], rounds)


def solve_schedule(prob, schedule=(1, 4, 16, 64), tol=TAU_NEWTON, max_iter=MAX_ITER, sweep=True,
                   max_depth=6):
    """Warm-started continuation over ``schedule`` with internal substeps."""
    results = []
    prev = None
    k_prev = None
    for k in schedule:
        subs = []

        def attempt(k_target, start, k_from, depth):
            try:
                return solve_regularized(prob, k_target, start, tol, max_iter, sweep=False)
            except SolveFailure:
                if depth >= max_depth or k_from is None:
                    raise
                k_mid = math.sqrt(k_from * k_target)
                subs.append(k_mid)
                mid = attempt(k_mid, start, k_from, depth + 1)
                return attempt(k_target, mid.u, k_mid, depth + 1)

        r = attempt(float(k), prev, k_prev, 0)
        if sweep:
            u, rounds = perron_sweep(prob, r.u.values, float(k), tol)
            r = SolveResult(DiscreteScalarField(prob.mesh, u, f"u_k={k:g}"), float(k), r.iterations,
                            r.residual, subs, rounds)
        else:
            r.substeps = subs
        log.info("k=%g iterations=%d residual=%.3e substeps=%s", k, r.iterations, r.residual, subs)
        results.append(r)
        prev, k_prev = r.u, float(k)
    return results
