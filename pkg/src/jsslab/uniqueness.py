"""Diagnostics around uniqueness of blow-up solutions.

The integrand ``g(Du - Dv, Du/W(u) - Dv/W(v))`` with ``W(u) = sqrt(1 + |Du|^2)``
is non-negative by convexity of ``p -> sqrt(1 + |p|^2)`` and vanishes only
where ``Du = Dv``. The sphere flux ``int_{|x|=r} g(Du, D|x|)`` of a blow-up
solution tends to a horizon area as ``r`` grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ExtrapolationFailure
from .pmc import DiscreteScalarField, shape_gradients

TAU_UNIQUE_REL = 1e-6
DECAY_SLOPE_TOL = 0.15
DECAY_K_TOL = 0.2


def nitsche_integrand(metric, du, dv, point=None):
    """Integrand for coordinate gradients ``du``, ``dv`` (shape ``(..., 2)``).

    ``metric`` may be None (flat) or a MetricField evaluated at ``point``.
    """
    a = np.asarray(du, dtype=float)
    b = np.asarray(dv, dtype=float)
    if metric is None or getattr(metric, "kind", "") == "flat":
        G = None
    else:
        G = metric.inverse(np.asarray(point, dtype=float))

    def dot(x, y):
        if G is None:
            return np.einsum("...i,...i->...", x, y)
        return np.einsum("...i,...ij,...j->...", x, G, y)

    Wa = np.sqrt(1.0 + dot(a, a))
    Wb = np.sqrt(1.0 + dot(b, b))
    return dot(a - b, a / Wa[..., None] - b / Wb[..., None])


@dataclass(frozen=True)
class SolutionPair:
    u: DiscreteScalarField
    v: DiscreteScalarField

    def __post_init__(self):
        if self.u.mesh is not self.v.mesh and not (
                np.array_equal(self.u.mesh.vertices, self.v.mesh.vertices)
                and np.array_equal(self.u.mesh.triangles, self.v.mesh.triangles)):
            raise ValueError("fields of a pair must share one mesh")
        if not (np.all(np.isfinite(self.u.values)) and np.all(np.isfinite(self.v.values))):
            raise ValueError("fields of a pair must be finite")

    def swapped(self):
        return SolutionPair(self.v, self.u)


@dataclass(frozen=True)
class UniquenessDefect:
    value: float
    area: float
    tolerance: float

    @property
    def certified(self):
        return self.value <= self.tolerance


def _region_mask(mesh, region):
    if region is None:
        return np.ones(len(mesh.triangles), dtype=bool)
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return region
    import shapely

    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    return shapely.contains_xy(getattr(region, "polygon", region), cen[:, 0], cen[:, 1])


def uniqueness_defect(pair, region=None, metric=None):
    """``int_region`` of the integrand with the tolerance ``1e-6 area (1 + max|Du|^2)``.

    ``region`` is a triangle mask, a shapely geometry, or None for the whole
    mesh (triangles are selected by centroid).
    """
    mesh = pair.u.mesh
    B, chart_area = shape_gradients(mesh)
    mask = _region_mask(mesh, region)
    du = np.einsum("tij,tj->ti", B, pair.u.values[mesh.triangles])[mask]
    dv = np.einsum("tij,tj->ti", B, pair.v.values[mesh.triangles])[mask]
    cen = mesh.vertices[mesh.triangles].mean(axis=1)[mask]
    if metric is None or metric.kind == "flat":
        w = chart_area[mask]
        n2 = np.maximum(np.einsum("ti,ti->t", du, du), np.einsum("ti,ti->t", dv, dv))
    else:
        w = chart_area[mask] * metric.sqrt_det(cen)
        G = metric.inverse(cen)
        n2 = np.maximum(np.einsum("ti,tij,tj->t", du, G, du), np.einsum("ti,tij,tj->t", dv, G, dv))
    f = nitsche_integrand(metric, du, dv, cen)
    area = float(np.sum(w))
    tol = TAU_UNIQUE_REL * area * (1.0 + (float(np.max(n2)) if len(n2) else 0.0))
    return UniquenessDefect(float(np.sum(f * w)), area, tol)


def radial_uniqueness_defect(a, b):
    """Defect of two radial solutions on a common grid (``|S^{n-1}| r^{n-1} phi dr`` volume)."""
    if not np.array_equal(a.r, b.r):
        raise ValueError("radial solutions must share one grid")
    data = a.data
    mid, pa = a.slopes()
    _, pb = b.slopes()
    phi = data.phi(mid)
    n = data.n
    sphere = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    # |Du|_g = |u'| / phi
    qa, qb = pa / phi, pb / phi
    f = (qa - qb) * (qa / np.sqrt(1 + qa**2) - qb / np.sqrt(1 + qb**2))
    w = sphere * mid ** (n - 1) * phi * np.diff(a.r)
    area = float(np.sum(w))
    tol = TAU_UNIQUE_REL * area * (1.0 + float(np.max(np.maximum(qa**2, qb**2))))
    return UniquenessDefect(float(np.sum(f * w)), area, tol)


# --------------------------------------------------------------------------
# horizon flux


@dataclass(frozen=True)
class HorizonFlux:
    limit: float
    radii: np.ndarray
    fluxes: np.ndarray
    levels: tuple
    spread: float

    @property
    def raw(self):
        """Flux on the outermost rung of the ladder."""
        return float(self.fluxes[0])


def _limit_member(solutions):
    if not isinstance(solutions, (list, tuple)):
        return solutions
    return min(solutions, key=lambda s: s.t)


def horizon_area_flux(solutions, beta=3.0, rungs=5, ratio=2.0, rtol=1e-2):
    """Sphere flux extrapolated to infinity on the ladder ``r_max / ratio^j``.

    The member with the smallest ``t`` is used (the ``t = 0`` limit when it is
    present, since the capillarity term makes ``u_t`` decay exponentially).
    Two Richardson levels remove ``r^{2-beta}`` and ``r^{2(2-beta)}`` terms.
    """
    sol = _limit_member(solutions)
    R = float(sol.r[-1])
    radii = R / ratio ** np.arange(rungs) * (1 - 1e-9)
    F, _ = sol.sphere_flux(radii)
    if not np.all(np.isfinite(F)):
        raise ExtrapolationFailure("sphere flux is not finite on the ladder")
    table = [F]
    for p in (beta - 2, 2 * (beta - 2)):
        c = ratio**p
        prev = table[-1]
        # prev[j] at radius r_j, prev[j + 1] at r_j / ratio
        table.append((c * prev[:-1] - prev[1:]) / (c - 1))
    best = table[-1]
    if len(best) < 2:
        raise ExtrapolationFailure("ladder too short for two Richardson levels")
    spread = float(np.max(np.abs(np.diff(best[:2]))))
    scale = max(abs(float(best[0])), 1e-12)
    if spread > rtol * scale and spread > 1e-12:
        raise ExtrapolationFailure(f"Richardson ladder not converged (spread {spread:.3g})")
    return HorizonFlux(float(best[0]), radii, F, tuple(np.asarray(t) for t in table), spread)


# --------------------------------------------------------------------------
# decay


@dataclass(frozen=True)
class DecayFit:
    slope: float
    K: float
    K_doubled: float | None
    passes: bool


def _decay_samples(solution):
    if hasattr(solution, "slopes"):
        mid, du = solution.slopes()
        u = 0.5 * (solution.u[1:] + solution.u[:-1])
        return mid, u, du
    arrs = [np.asarray(a, dtype=float) for a in solution]
    if len(arrs) == 3:
        return tuple(arrs)
    r, u = arrs
    return r, u, np.gradient(u, r)


def _fit(solution, beta):
    r, u, du = _decay_samples(solution)
    R = r[-1]
    sel = r >= 0.5 * R
    y = np.log(np.abs(u[sel]) + r[sel] * np.abs(du[sel]))
    x = np.log(r[sel])
    slope = float(np.polyfit(x, y, 1)[0])
    K = float(np.exp(np.mean(y - (2 - beta) * x)))
    return slope, K


def decay_check(solution, beta=3.0, doubled=None):
    """Fit ``log(|u| + r |u'|)`` against ``log r`` on the outer half ``[r_max / 2, r_max]``.

    ``solution`` is a RadialSolution, a pair ``(r, u)`` (``u'`` by finite
    differences) or a triple ``(r, u, u')``. Passes when the
    slope is within 0.15 of ``2 - beta`` and, when ``doubled`` (the same
    problem with twice the outer radius) is given, the fitted ``K`` moves by
    at most 20%.
    """
    slope, K = _fit(solution, beta)
    ok = abs(slope - (2 - beta)) <= DECAY_SLOPE_TOL
    K2 = None
    if doubled is not None:
        s2, K2 = _fit(doubled, beta)
        ok = ok and abs(s2 - (2 - beta)) <= DECAY_SLOPE_TOL and abs(K2 - K) <= DECAY_K_TOL * K
    return DecayFit(slope, K, K2, bool(ok))
