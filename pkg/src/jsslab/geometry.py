"""Metrics, curves and polygonal domains on a single two-dimensional chart.

Everything here is immutable and side-effect free. Chart points are numpy
arrays of shape ``(..., 2)``; curves are parameterized over ``[0, 1]``.

Sign convention for geodesic curvature: a curve carries an ``outward`` flag
(``+1`` when the outward normal lies to the right of the direction of
travel). The reported curvature is ``-g(D_T T, nu_out)`` for the unit tangent
``T``, so a counter-clockwise circle with the outward normal pointing away
from its center has curvature ``+1/R``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.optimize import root

from .errors import (
    DegenerateCurve,
    NoArcFound,
    NotClosed,
    OffsetTooLarge,
    QuadratureFailure,
)

TAU_QUAD = 1e-10
TAU_ODE = 1e-10
TAU_CURV = 1e-6
TAU_AREA = 1e-8
TAU_CLOSE = 1e-8
TAU_EMBED = 1e-9
TAU_SPEED = 1e-9

TAGS = ("plus", "minus", "interior")


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricField:
    """A Riemannian metric on one chart.

    ``kind`` is one of ``flat``, ``round_sphere`` (stereographic chart),
    ``hyperbolic`` (Poincare disk) or ``chart``. For ``chart`` metrics the
    components and their first partial derivatives are callables of
    ``(x, y)``; ``derivatives[c][k]`` is the ``k``-th partial of component
    ``c`` in the order ``g11, g12, g22``.
    """

    kind: str = "flat"
    radius: float = 1.0
    components: Optional[tuple] = field(default=None, compare=False)
    derivatives: Optional[tuple] = field(default=None, compare=False)
    label: str = ""

    @classmethod
    def flat(cls):
        return cls("flat")

    @classmethod
    def round_sphere(cls, radius=1.0):
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        return cls("round_sphere", float(radius))

    @classmethod
    def hyperbolic(cls, radius=1.0):
        if radius <= 0:
            raise ValueError("hyperbolic radius must be positive")
        return cls("hyperbolic", float(radius))

    @classmethod
    def chart(cls, g11, g12, g22, derivatives, label=""):
        return cls("chart", 1.0, (g11, g12, g22), tuple(tuple(d) for d in derivatives), label)

    @classmethod
    def from_expressions(cls, g11, g12, g22):
        """Chart metric from expression strings; derivatives are exact."""
        from .exprs import parse

        comps = [parse(e) for e in (g11, g12, g22)]
        derivs = [(c.diff("x"), c.diff("y")) for c in comps]
        label = f"[{g11}, {g12}, {g22}]"
        return cls.chart(*comps, derivatives=derivs, label=label)

    # conformal factor lambda for the two space-form charts (g = lambda^2 delta)
    def _conformal(self, p):
        s = p[..., 0] ** 2 + p[..., 1] ** 2
        R = self.radius
        if self.kind == "round_sphere":
            lam = 2.0 * R / (1.0 + s)
            dlam = -(lam**2)[..., None] * p / R
        else:
            if np.any(s >= 1.0):
                raise ValueError("point outside the Poincare disk chart")
            lam = 2.0 * R / (1.0 - s)
            dlam = (lam**2)[..., None] * p / R
        return lam, dlam

    def tensor(self, p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (2, 2))
        if self.kind == "flat":
            out[..., 0, 0] = 1.0
            out[..., 1, 1] = 1.0
        elif self.kind in ("round_sphere", "hyperbolic"):
            lam, _ = self._conformal(p)
            out[..., 0, 0] = lam**2
            out[..., 1, 1] = lam**2
        else:
            x, y = p[..., 0], p[..., 1]
            g11, g12, g22 = (c(x, y) for c in self.components)
            out[..., 0, 0] = g11
            out[..., 0, 1] = g12
            out[..., 1, 0] = g12
            out[..., 1, 1] = g22
        return out

    def derivative(self, p):
        """Partial derivatives ``out[..., k, i, j] = d_k g_ij``."""
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (2, 2, 2))
        if self.kind == "flat":
            return out
        if self.kind in ("round_sphere", "hyperbolic"):
            lam, dlam = self._conformal(p)
            for k in range(2):
                d = 2.0 * lam * dlam[..., k]
                out[..., k, 0, 0] = d
                out[..., k, 1, 1] = d
            return out
        x, y = p[..., 0], p[..., 1]
        for c, (i, j) in enumerate(((0, 0), (0, 1), (1, 1))):
            for k in range(2):
                val = self.derivatives[c][k](x, y)
                out[..., k, i, j] = val
                out[..., k, j, i] = val
        return out

    def inverse(self, p):
        return np.linalg.inv(self.tensor(p))

    def sqrt_det(self, p):
        g = self.tensor(p)
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        if np.any(g[..., 0, 0] <= 0) or np.any(det <= 0):
            raise ValueError("metric is not positive definite at a queried point")
        return np.sqrt(det)

    def christoffel(self, p):
        """Christoffel symbols ``out[..., k, i, j] = Gamma^k_ij``."""
        dg = self.derivative(p)
        ginv = self.inverse(p)
        # Gamma_{l i j} = 1/2 (d_i g_lj + d_j g_li - d_l g_ij)
        low = 0.5 * (
            np.einsum("...ilj->...lij", dg)
            + np.einsum("...jli->...lij", dg)
            - dg
        )
        return np.einsum("...kl,...lij->...kij", ginv, low)

    def norm(self, p, v):
        g = self.tensor(p)
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, g, v))

    def inner(self, p, u, v):
        g = self.tensor(p)
        return np.einsum("...i,...ij,...j->...", u, g, v)

    def gauss_curvature(self, p, h=1e-4):
        """Gauss curvature (half the scalar curvature)."""
        p = np.asarray(p, dtype=float)
        if self.kind == "flat":
            return np.zeros(p.shape[:-1])
        if self.kind == "round_sphere":
            return np.full(p.shape[:-1], 1.0 / self.radius**2)
        if self.kind == "hyperbolic":
            return np.full(p.shape[:-1], -1.0 / self.radius**2)
        # R^l_{ijk} = d_j Gamma^l_ik - d_k Gamma^l_ij + Gamma^l_jm Gamma^m_ik - Gamma^l_km Gamma^m_ij
        G = self.christoffel(p)
        dG = np.zeros(p.shape[:-1] + (2, 2, 2, 2))  # [..., d, k, i, j]
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            dG[..., d, :, :, :] = (self.christoffel(p + e) - self.christoffel(p - e)) / (2 * h)
        # R^l_{121}... use R_{1212} = g_{1l} R^l_{212}
        l_idx = range(2)
        Rl = np.zeros(p.shape[:-1] + (2,))
        for l in l_idx:
            Rl[..., l] = (
                dG[..., 0, l, 1, 1]
                - dG[..., 1, l, 1, 0]
                + np.einsum("...m,...m->...", G[..., l, 0, :], G[..., :, 1, 1])
                - np.einsum("...m,...m->...", G[..., l, 1, :], G[..., :, 1, 0])
            )
        g = self.tensor(p)
        R1212 = np.einsum("...l,...l->...", g[..., 0, :], Rl)
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        return R1212 / det

    def area_primitive(self, x, y):
        """``F(x, y)`` with ``dF/dx = sqrt(det g)`` and ``F(0, y) = 0``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "flat":
            return x.copy()
        R2 = self.radius**2
        if self.kind == "round_sphere":
            a2 = 1.0 + y**2
            a = np.sqrt(a2)
            return 4 * R2 * (x / (2 * a2 * (a2 + x**2)) + np.arctan(x / a) / (2 * a2 * a))
        if self.kind == "hyperbolic":
            b2 = 1.0 - y**2
            b = np.sqrt(b2)
            return 4 * R2 * (x / (2 * b2 * (b2 - x**2)) + np.arctanh(x / b) / (2 * b2 * b))

        def one(xv, yv):
            val, _ = _quad(lambda s: float(self.sqrt_det(np.array([s, yv]))), 0.0, xv, epsabs=1e-13)
            return val

        return np.vectorize(one)(x, y)

    def describe(self):
        if self.kind == "chart":
            return {"kind": "chart", "components": self.label}
        if self.kind == "flat":
            return {"kind": "flat"}
        return {"kind": self.kind, "radius": self.radius}


def _quad(f, a, b, epsabs=TAU_QUAD, epsrel=1e-12, limit=400):
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            return quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit)
        except IntegrationWarning as exc:
            raise QuadratureFailure(str(exc)) from None


# --------------------------------------------------------------------------
# curves


def _fd_stencil(t, h):
    """Five-point offsets that keep ``t + k h`` inside ``[0, 1]``."""
    lo = np.clip(np.ceil((0.0 - t) / h - 1e-12), -2, 0)
    hi = np.clip(np.floor((1.0 - t) / h + 1e-12), 0, 2)
    start = np.where(hi - lo >= 4, lo, np.where(lo > -2, lo, hi - 4))
    start = np.clip(start, -4, 0)
    return start


_FD_CACHE = {}


def _fd_weights(offsets, order):
    key = (tuple(offsets), order)
    if key not in _FD_CACHE:
        n = len(offsets)
        A = np.vander(np.asarray(offsets, dtype=float), n, increasing=True).T
        b = np.zeros(n)
        b[order] = math.factorial(order)
        _FD_CACHE[key] = np.linalg.solve(A, b)
    return _FD_CACHE[key]


@dataclass(frozen=True)
class CurveSegment:
    """Parameterized chart curve ``[0, 1] -> chart``.

    ``velocity`` and ``acceleration`` are optional analytic derivatives; when
    absent, fourth-order finite differences confined to ``[0, 1]`` are used.
    """

    func: Callable = field(compare=False)
    velocity: Optional[Callable] = field(default=None, compare=False)
    acceleration: Optional[Callable] = field(default=None, compare=False)
    tag: str = "interior"
    outward: int = 1
    closed: bool = False
    name: str = ""
    fd_step: float = 1e-3

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown curve tag {self.tag!r}")
        if self.outward not in (1, -1):
            raise ValueError("outward must be +1 or -1")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.asarray(self.func(t), dtype=float)

    @property
    def start(self):
        return self(0.0)

    @property
    def end(self):
        return self(1.0)

    def _fd(self, t, order):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        h = self.fd_step
        start = _fd_stencil(t, h)
        out = np.zeros(t.shape + (2,))
        for s in np.unique(start):
            mask = start == s
            offsets = np.arange(int(s), int(s) + 5)
            w = _fd_weights(offsets, order)
            acc = 0.0
            for k, wk in zip(offsets, w):
                acc = acc + wk * self(t[mask] + k * h)
            out[mask] = acc / h**order
        return out

    def d1(self, t):
        scalar = np.ndim(t) == 0
        if self.velocity is not None:
            out = np.asarray(self.velocity(np.asarray(t, dtype=float)), dtype=float)
            if out.shape[-1] != 2:
                out = np.broadcast_to(out, np.shape(t) + (2,))
            return out
        out = self._fd(t, 1)
        return out[0] if scalar else out

    def d2(self, t):
        scalar = np.ndim(t) == 0
        if self.acceleration is not None:
            out = np.asarray(self.acceleration(np.asarray(t, dtype=float)), dtype=float)
            return np.broadcast_to(out, np.shape(t) + (2,)).copy()
        out = self._fd(t, 2)
        return out[0] if scalar else out

    def polyline(self, n=200):
        return self(np.linspace(0.0, 1.0, n))

    def reversed(self):
        f, v, a = self.func, self.velocity, self.acceleration
        return CurveSegment(
            lambda t: f(1.0 - np.asarray(t)),
            None if v is None else (lambda t: -np.asarray(v(1.0 - np.asarray(t)))),
            None if a is None else (lambda t: a(1.0 - np.asarray(t))),
            tag=self.tag,
            outward=-self.outward,
            closed=self.closed,
            name=self.name,
            fd_step=self.fd_step,
        )

    def restrict(self, t0, t1):
        """Sub-curve on ``[t0, t1]`` reparameterized over ``[0, 1]``."""
        f, v, a = self.func, self.velocity, self.acceleration
        L = t1 - t0
        return CurveSegment(
            lambda t: f(t0 + L * np.asarray(t)),
            None if v is None else (lambda t: L * np.asarray(v(t0 + L * np.asarray(t)))),
            None if a is None else (lambda t: L * L * np.asarray(a(t0 + L * np.asarray(t)))),
            tag=self.tag,
            outward=self.outward,
            closed=False,
            name=self.name,
            fd_step=self.fd_step,
        )

    def with_tag(self, tag, outward=None):
        return replace(self, tag=tag, outward=self.outward if outward is None else outward)


def segment(p, q, tag="interior", outward=1, name=""):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    return CurveSegment(
        lambda t: p + np.multiply.outer(np.asarray(t), d),
        lambda t: np.broadcast_to(d, np.shape(t) + (2,)).copy(),
        lambda t: np.zeros(np.shape(t) + (2,)),
        tag=tag,
        outward=outward,
        name=name,
    )


def circle_arc(center, radius, a0, a1, tag="interior", outward=None, name=""):
    """Circle arc from angle ``a0`` to ``a1``.

    By default the outward normal points away from the center, i.e. the arc
    has outward curvature ``+1/radius`` in the flat metric.
    """
    c = np.asarray(center, dtype=float)
    R = float(radius)
    da = a1 - a0
    if outward is None:
        outward = 1 if da > 0 else -1

    def f(t):
        a = a0 + da * np.asarray(t)
        return c + R * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def v(t):
        a = a0 + da * np.asarray(t)
        return R * da * np.stack([-np.sin(a), np.cos(a)], axis=-1)

    def acc(t):
        a = a0 + da * np.asarray(t)
        return -R * da * da * np.stack([np.cos(a), np.sin(a)], axis=-1)

    closed = abs(abs(da) - 2 * math.pi) < 1e-14
    return CurveSegment(f, v, acc, tag=tag, outward=outward, closed=closed, name=name)


def expression_curve(xexpr, yexpr, tag="interior", outward=1, closed=False, name=""):
    """Curve from two expression strings in the variable ``t``."""
    from .exprs import parse

    ex, ey = parse(xexpr, ("t",)), parse(yexpr, ("t",))
    dx, dy = ex.diff("t"), ey.diff("t")
    ddx, ddy = dx.diff("t"), dy.diff("t")
    return CurveSegment(
        lambda t: np.stack([ex(t), ey(t)], axis=-1),
        lambda t: np.stack([dx(t), dy(t)], axis=-1),
        lambda t: np.stack([ddx(t), ddy(t)], axis=-1),
        tag=tag,
        outward=outward,
        closed=closed,
        name=name,
    )


def outward_normal(metric, curve, t):
    """Unit (in ``g``) normal on the declared outward side."""
    t = np.asarray(t, dtype=float)
    p = curve(t)
    v = curve.d1(t)
    eta = np.stack([v[..., 1], -v[..., 0]], axis=-1)  # annihilates v; right side
    n = np.einsum("...ij,...j->...i", metric.inverse(p), eta)
    n = n / metric.norm(p, n)[..., None]
    return curve.outward * n


def geodesic_curvature(metric, curve, t):
    """Signed geodesic curvature with respect to the outward normal."""
    t = np.asarray(t, dtype=float)
    p = curve(t)
    v = curve.d1(t)
    a = curve.d2(t)
    speed = metric.norm(p, v)
    if np.any(speed < TAU_SPEED):
        raise DegenerateCurve("curve speed below tolerance")
    G = metric.christoffel(p)
    cov = a + np.einsum("...kij,...i,...j->...k", G, v, v)
    n = outward_normal(metric, curve, t)
    k = -metric.inner(p, cov, n) / speed**2
    return float(k) if k.ndim == 0 else k


def speed(metric, curve, t):
    return metric.norm(curve(t), curve.d1(t))


def arc_length(metric, curve, t0=0.0, t1=1.0):
    """Length of ``curve`` between parameters ``t0`` and ``t1``."""

    def f(t):
        return float(speed(metric, curve, np.array(t)))

    # split at a few interior points so adaptive quadrature sees long curves well
    knots = np.linspace(t0, t1, 9)
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        val, _ = _quad(f, a, b, epsabs=TAU_QUAD / 8)
        total += val
    return total


def _loops_of(region):
    loops = getattr(region, "loops", region)
    if callable(loops):
        loops = loops()
    return loops


def area(metric, region):
    """Area enclosed by oriented boundary loops via Green's theorem.

    ``region`` is either an object with a ``loops`` attribute or a list of
    loops, each a list of ``(CurveSegment, forward)`` pairs. Outer loops run
    counter-clockwise and holes clockwise; the absolute value is returned.
    """
    loops = _loops_of(region)
    total = 0.0
    for loop in loops:
        pieces = [(c if fwd else c.reversed()) for c, fwd in loop]
        for a, b in zip(pieces, pieces[1:] + pieces[:1]):
            if len(pieces) == 1 and not a.closed:
                gap = np.linalg.norm(a.end - a.start)
            else:
                gap = np.linalg.norm(a.end - b.start)
            if gap > TAU_CLOSE:
                raise NotClosed(f"boundary chain has a gap of {gap:.3e}")
        for c in pieces:

            def f(t, c=c):
                p = c(np.array(t))
                return float(metric.area_primitive(p[0], p[1]) * c.d1(np.array(t))[1])

            knots = np.linspace(0.0, 1.0, 9)
            for a_, b_ in zip(knots[:-1], knots[1:]):
                val, _ = _quad(f, a_, b_, epsabs=1e-13, epsrel=1e-13)
                total += val
    return abs(total)


# --------------------------------------------------------------------------
# exponential map and offsets


def _geodesic_rhs(metric):
    def rhs(_s, y):
        n = y.size // 4
        pos = y[: 2 * n].reshape(n, 2)
        vel = y[2 * n :].reshape(n, 2)
        G = metric.christoffel(pos)
        acc = -np.einsum("nkij,ni,nj->nk", G, vel, vel)
        return np.concatenate([vel.ravel(), acc.ravel()])

    return rhs


def exp_map(metric, base, vec, rtol=1e-12, atol=1e-13):
    """``exp_base(vec)`` for arrays of base points and tangent vectors."""
    base = np.atleast_2d(np.asarray(base, dtype=float))
    vec = np.atleast_2d(np.asarray(vec, dtype=float))
    if metric.kind == "flat":
        return base + vec
    n = base.shape[0]
    y0 = np.concatenate([base.ravel(), vec.ravel()])
    sol = solve_ivp(_geodesic_rhs(metric), (0.0, 1.0), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise OffsetTooLarge(f"geodesic integration failed: {sol.message}")
    return sol.y[: 2 * n, -1].reshape(n, 2)


def focal_margin(metric, curve, offsets, samples=65):
    """Smallest Jacobi-field ratio ``J(s)`` along the offset fibers.

    ``J`` solves ``J'' + K J = 0`` with ``J(0) = 1`` and ``J'(0) = kappa``
    using the local Gauss curvature ``K`` and outward curvature ``kappa``.
    Values near zero signal focal points.
    """
    t = np.linspace(0.0, 1.0, samples)
    s = np.broadcast_to(np.asarray(offsets(t), dtype=float), t.shape)
    try:
        kap = geodesic_curvature(metric, curve, t)
    except DegenerateCurve:
        kap = np.zeros_like(t)
    K = metric.gauss_curvature(curve(t))
    worst = np.inf
    for frac in np.linspace(0.0, 1.0, 21)[1:]:
        ss = frac * s
        sq = np.sqrt(np.abs(K))
        with np.errstate(invalid="ignore", divide="ignore"):
            J = np.where(
                K > 1e-14,
                np.cos(sq * ss) + kap * np.sin(sq * ss) / np.where(sq > 0, sq, 1),
                np.where(
                    K < -1e-14,
                    np.cosh(sq * ss) + kap * np.sinh(sq * ss) / np.where(sq > 0, sq, 1),
                    1.0 + kap * ss,
                ),
            )
        worst = min(worst, float(np.min(J)))
    return worst


def exponential_offset(metric, curve, profile=None, distance=0.0, tag=None):
    """The curve ``theta -> exp_theta(distance * profile(theta) * nu(theta))``."""
    if profile is None:
        profile = default_profile
    if focal_margin(metric, curve, lambda t: distance * profile(t)) < 0.05:
        raise OffsetTooLarge("offset distance reaches the focal radius estimate")

    def f(t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        base = curve(tt)
        nu = outward_normal(metric, curve, tt)
        vec = (distance * np.asarray(profile(tt), dtype=float))[:, None] * nu
        out = exp_map(metric, base, vec)
        return out[0] if scalar else out

    return CurveSegment(
        f, tag=curve.tag if tag is None else tag, outward=curve.outward, closed=curve.closed
    )


def default_profile(t):
    return np.sin(np.pi * np.asarray(t, dtype=float))


def unit_profile(t):
    return np.ones_like(np.asarray(t, dtype=float))


# --------------------------------------------------------------------------
# constant curvature arcs


def _flat_cc_arcs(p, q, H0):
    d = np.linalg.norm(q - p)
    if H0 == 0:
        return [segment(p, q)]
    R = 1.0 / H0
    if d > 2 * R * (1 + 1e-12):
        raise NoArcFound(f"chord {d:.6g} exceeds the diameter {2 * R:.6g}")
    a = min(d / 2, R)
    h = math.sqrt(max(R * R - a * a, 0.0))
    u = (q - p) / d
    left = np.array([-u[1], u[0]])
    m = 0.5 * (p + q)
    half = math.asin(a / R)
    arcs = []
    # center on the left: counter-clockwise about it, bulging right
    cL = m + h * left
    aL = math.atan2(p[1] - cL[1], p[0] - cL[0])
    arcs.append(circle_arc(cL, R, aL, aL + 2 * half))
    # center on the right: clockwise, bulging left
    cR = m - h * left
    aR = math.atan2(p[1] - cR[1], p[0] - cR[0])
    arcs.append(circle_arc(cR, R, aR, aR - 2 * half))
    return arcs


def _cc_rhs(metric, kappa, side):
    # unit-speed curve with D_T T = kappa * n_side, n_side the unit normal on `side`
    def rhs(_s, y):
        p, v = y[:2], y[2:]
        G = metric.christoffel(p)
        acc = -np.einsum("kij,i,j->k", G, v, v)
        eta = np.array([v[1], -v[0]])  # right side covector
        n = metric.inverse(p) @ eta
        n = n / metric.norm(p, n)
        return np.concatenate([v, acc - side * kappa * n])

    return rhs


def constant_curvature_arcs(metric, p, q, H0, n_angles=24, max_length=None):
    """All arcs from ``p`` to ``q`` with outward geodesic curvature ``H0``.

    Each returned arc has its ``outward`` flag set so that the outward
    curvature is ``+H0``. Flat metrics use closed-form circle geometry; other
    metrics shoot on the curvature ODE over initial angle and length.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.linalg.norm(q - p) < TAU_EMBED:
        raise NoArcFound("endpoints coincide")
    if metric.kind == "flat":
        return _flat_cc_arcs(p, q, H0)

    gp = metric.tensor(p)
    # g-orthonormal frame at p
    e1 = np.array([1.0, 0.0]) / math.sqrt(gp[0, 0])
    e2 = np.array([-gp[0, 1], gp[0, 0]])
    e2 = e2 / math.sqrt(e2 @ gp @ e2)
    chord = float(metric.norm(0.5 * (p + q), q - p))
    if max_length is None:
        max_length = 4.0 * chord if H0 == 0 else min(4.0 * chord, 2 * math.pi / H0)

    found = []
    sides = (1,) if H0 == 0 else (1, -1)
    for side in sides:
        rhs = _cc_rhs(metric, H0, side)

        def shoot(params, rhs=rhs):
            ang, L = params
            v0 = math.cos(ang) * e1 + math.sin(ang) * e2
            sol = solve_ivp(rhs, (0, L), np.concatenate([p, v0]), method="DOP853",
                            rtol=1e-11, atol=1e-12)
            return sol.y[:2, -1] - q

        start_dir = np.linalg.solve(np.stack([e1, e2], axis=1), q - p)
        ang0 = math.atan2(start_dir[1], start_dir[0])
        for k in range(n_angles):
            ang = ang0 + (k - n_angles // 2) * (math.pi / n_angles)
            try:
                res = root(shoot, [ang, chord], method="hybr", options={"xtol": 1e-12})
            except (ValueError, RuntimeError):
                continue
            if not res.success or np.linalg.norm(res.fun) > 1e-9:
                continue
            ang_s, L = res.x
            if L <= 0 or L > max_length:
                continue
            if any(abs(L - L2) < 1e-7 and abs(math.remainder(ang_s - a2, 2 * math.pi)) < 1e-6
                   for a2, L2, s2 in found if s2 == side):
                continue
            found.append((ang_s, L, side))
    if not found:
        raise NoArcFound("shooting found no constant curvature arc")
    arcs = []
    for ang_s, L, side in found:
        v0 = math.cos(ang_s) * e1 + math.sin(ang_s) * e2
        sol = solve_ivp(_cc_rhs(metric, H0, side), (0, L), np.concatenate([p, v0]),
                        method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True)
        dense = sol.sol

        def f(t, dense=dense, L=L):
            t = np.asarray(t, dtype=float)
            out = dense(np.clip(t, 0, 1) * L)[:2]
            return out.T if t.ndim else out

        def v(t, dense=dense, L=L):
            t = np.asarray(t, dtype=float)
            out = L * dense(np.clip(t, 0, 1) * L)[2:]
            return out.T if t.ndim else out

        # side=+1 bends toward the left normal, so the outward side is the right
        arcs.append(CurveSegment(f, v, outward=side))
    return arcs


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class PolygonalDomain:
    """Domain bounded by constant-curvature arcs and closed curves.

    ``arcs`` are stored so that the outward normal of each arc points out of
    the domain. Non-closed arcs have corners (indices into ``corners``) as
    endpoints, recorded in ``arc_corners``.
    """

    metric: MetricField
    arcs: tuple
    corners: tuple
    H0: float = 0.0
    arc_corners: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.H0 < 0:
            raise ValueError("H0 must be non-negative")
        if not self.arc_corners:
            object.__setattr__(self, "arc_corners", tuple(self._infer_corners()))

    def _infer_corners(self):
        out = []
        for arc in self.arcs:
            if arc.closed:
                out.append(None)
                continue
            ends = []
            for pt in (arc.start, arc.end):
                d = [np.linalg.norm(pt - np.asarray(c)) for c in self.corners]
                if not d or min(d) > 1e-7:
                    raise ValueError("arc endpoint is not a corner")
                ends.append(int(np.argmin(d)))
            out.append(tuple(ends))
        return out

    @property
    def corner_array(self):
        return np.asarray(self.corners, dtype=float).reshape(-1, 2)

    def arcs_tagged(self, tag):
        return [a for a in self.arcs if a.tag == tag]

    def validate(self, samples=9):
        """Raise ``ValueError`` when a domain hypothesis fails."""
        ts = np.linspace(0.05, 0.95, samples)
        for i, arc in enumerate(self.arcs):
            if arc.tag not in ("plus", "minus"):
                raise ValueError(f"arc {i} must be tagged plus or minus")
            want = self.H0 if arc.tag == "plus" else -self.H0
            k = geodesic_curvature(self.metric, arc, ts)
            if np.max(np.abs(k - want)) > TAU_CURV * max(1.0, self.H0) * 10:
                raise ValueError(
                    f"arc {i} ({arc.tag}) has outward curvature {np.mean(k):.6g}, expected {want:.6g}"
                )
        for tag in ("plus", "minus"):
            seen = {}
            for i, (arc, ends) in enumerate(zip(self.arcs, self.arc_corners)):
                if arc.tag != tag or ends is None:
                    continue
                for c in set(ends):
                    if c in seen:
                        raise ValueError(f"{tag} arcs {seen[c]} and {i} share corner {c}")
                    seen[c] = i
        return True

    def area(self):
        return area(self.metric, self.boundary_loops())

    def boundary_loops(self):
        """Boundary as loops of ``(arc, forward)`` pairs, outer loop CCW."""
        closed = [[(a, True)] for a in self.arcs if a.closed]
        open_idx = [i for i, a in enumerate(self.arcs) if not a.closed]
        loops = []
        remaining = set(open_idx)
        while remaining:
            i = min(remaining)
            remaining.remove(i)
            loop = [(self.arcs[i], True)]
            start_c, cur = self.arc_corners[i]
            while cur != start_c:
                nxt = None
                for j in sorted(remaining):
                    a, b = self.arc_corners[j]
                    if a == cur:
                        nxt, fwd, cur = j, True, b
                        break
                    if b == cur:
                        nxt, fwd, cur = j, False, a
                        break
                if nxt is None:
                    raise NotClosed("boundary arcs do not form closed loops")
                remaining.remove(nxt)
                loop.append((self.arcs[nxt], fwd))
            loops.append(loop)
        return loops + closed

    def diameter(self):
        pts = np.concatenate([a.polyline(64) for a in self.arcs])
        d = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def polygon(self, n=400):
        """Shapely polygon of the chart region (polyline approximation)."""
        from shapely.geometry import Polygon
        from shapely.ops import unary_union

        rings = []
        for loop in self.boundary_loops():
            pts = []
            for c, fwd in loop:
                seg = c.polyline(n)
                pts.append(seg if fwd else seg[::-1])
            rings.append(np.concatenate(pts))
        polys = [Polygon(r).buffer(0) for r in rings]
        # the ring enclosing all others is the outer boundary
        polys.sort(key=lambda p: -p.area)
        region = polys[0]
        for hole in polys[1:]:
            region = region.difference(hole)
        return unary_union(region)
