"""Rotationally symmetric Jang equation.

Initial data ``g = phi^2 dr^2 + r^2 sigma`` and ``k = k_r dr^2 + k_t r^2 sigma``
on ``r > r_min`` with ``sigma`` the round metric of the unit ``(n-1)``-sphere.
For a radial function ``u`` write ``s = u' / sqrt(phi^2 + u'^2)`` (the radial
component of ``Du / sqrt(1 + |Du|^2)`` in the unit normal of the spheres).
Then

    H(u)     = (r^{n-1} s)' / (phi r^{n-1}),
    tr(k)(u) = k_r / (phi^2 + u'^2) + (n - 1) k_t,

and the regularized Jang equation ``H(u) + tr(k)(u) = t u`` is solved with a
P1 Galerkin scheme on a grid clustered at the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.linalg import solve_banded

from . import exprs
from .errors import DomainError, SolveFailure

TAU_NEWTON = 1e-10
MAX_ITER = 100
BLOWUP_THRESHOLD = 10.0
HORIZON_OFFSET = 1e-10
N_ELEMENTS = 3000
GAUSS = (0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3))


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class RadialInitialData:
    """Radial initial data given by callables of ``r`` (vectorized)."""

    n: int
    phi2: object
    dphi2: object
    k_r: object
    k_t: object
    r_min: float = 0.0
    q: float = 1.0
    beta: float = 3.0
    label: str = ""

    def __post_init__(self):
        if not 3 <= self.n <= 7:
            raise DomainError("dimension must lie in 3..7")

    def phi(self, r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(np.asarray(self.phi2(np.asarray(r, dtype=float)), dtype=float))

    def inv_phi(self, r):
        """``1 / phi``; zero where ``phi`` is infinite."""
        with np.errstate(divide="ignore", invalid="ignore"):
            p2 = np.asarray(self.phi2(np.asarray(r, dtype=float)), dtype=float)
            return np.where(np.isinf(p2), 0.0, 1.0 / np.sqrt(p2))

    def dphi(self, r):
        return 0.5 * np.asarray(self.dphi2(np.asarray(r, dtype=float)), dtype=float) / self.phi(r)

    def kr(self, r):
        return np.broadcast_to(np.asarray(self.k_r(np.asarray(r, dtype=float)), dtype=float),
                               np.shape(r))

    def kt(self, r):
        return np.broadcast_to(np.asarray(self.k_t(np.asarray(r, dtype=float)), dtype=float),
                               np.shape(r))

    def trace_k(self, r):
        """``tr_g(k) = k_r / phi^2 + (n - 1) k_t``."""
        return self.kr(r) / self.phi(r) ** 2 + (self.n - 1) * self.kt(r)

    def asymptotic_flatness(self, r_grid=None):
        """Largest sampled ``(|phi^2 - 1| + r |(phi^2)'|) r^q`` and ``|tr k| r^beta``."""
        if r_grid is None:
            r_grid = np.geomspace(max(10.0, 10 * self.r_min), 1e6, 200)
        p2 = np.asarray(self.phi2(r_grid), dtype=float)
        dp2 = np.asarray(self.dphi2(r_grid), dtype=float)
        af = np.max((np.abs(p2 - 1) + r_grid * np.abs(dp2)) * r_grid**self.q)
        tr = np.max(np.abs(self.trace_k(r_grid)) * r_grid**self.beta)
        return float(af), float(tr)


def _const(c):
    return lambda r: np.full(np.shape(r), float(c))


def from_expressions(n, phi2, k_r="0", k_t="0", r_min=0.0, q=1.0, beta=3.0, label=""):
    """Radial data from expressions in ``r`` of the expression language."""
    P = exprs.parse(phi2, ("r",))
    dP = P.diff("r")
    KR = exprs.parse(k_r, ("r",))
    KT = exprs.parse(k_t, ("r",))
    return RadialInitialData(int(n), P, dP, KR, KT, float(r_min), float(q), float(beta), label)


def schwarzschild(m=1.0, k_t=None):
    """Time-symmetric Schwarzschild slice ``phi^2 = 1 / (1 - 2m / r)``; optional ``k_t``."""
    def phi2(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return 1.0 / (1.0 - 2.0 * m / r)

    def dphi2(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return -2.0 * m / (r - 2.0 * m) ** 2

    kt = _const(0.0) if k_t is None else k_t
    return RadialInitialData(3, phi2, dphi2, _const(0.0), kt, 2.0 * m, 1.0, 3.0, f"schwarzschild m={m:g}")


def flat(n=3):
    return RadialInitialData(n, _const(1.0), _const(0.0), _const(0.0), _const(0.0), 0.0, 1.0,
                             3.0, "flat")


# --------------------------------------------------------------------------
# barriers


def _check_barrier_args(lam, beta, r=None):
    if not lam >= 1:
        raise DomainError("Lambda must be at least 1")
    if not beta > 2:
        raise DomainError("beta must exceed 2")
    if r is not None and np.any(np.asarray(r) < lam):
        raise DomainError("r must be at least Lambda")


def _b1(x, beta):
    # s^(beta-1) = cosh(tau) turns the endpoint singularity into a smooth integrand
    tau0 = math.acosh(x ** (beta - 1)) if x > 1 else 0.0
    e = (2.0 - beta) / (beta - 1.0)
    # log cosh(tau) = tau + log1p(exp(-2 tau)) - log 2 keeps large tau finite
    f = lambda tau: math.exp(e * (tau + math.log1p(math.exp(-2 * tau)) - math.log(2))) / (beta - 1.0)
    val, err = integrate.quad(f, tau0, math.inf, epsabs=1e-13, epsrel=1e-13, limit=500)
    return val


def barrier_b_lambda(lam, beta, r):
    """``b_Lambda(r) = Lambda int_{r/Lambda}^inf ds / sqrt(s^(2 beta - 2) - 1)``."""
    _check_barrier_args(lam, beta, r)
    r = np.asarray(r, dtype=float)
    out = np.array([lam * _b1(x, beta) for x in np.atleast_1d(r / lam)])
    return out.reshape(r.shape) if r.shape else float(out[0])


def barrier_derivative(lam, beta, r):
    """``b_Lambda'(r) = -1 / sqrt((r / Lambda)^(2 beta - 2) - 1)``."""
    _check_barrier_args(lam, beta)
    r = np.asarray(r, dtype=float)
    if np.any(r <= lam):
        raise DomainError("the derivative needs r > Lambda")
    return -1.0 / np.sqrt((r / lam) ** (2 * beta - 2) - 1.0)


def barrier_second_derivative(lam, beta, r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= lam):
        raise DomainError("the derivative needs r > Lambda")
    a = 2 * beta - 2
    x = r / lam
    return 0.5 * (x**a - 1.0) ** -1.5 * a * x ** (a - 1) / lam


def barrier_b_lambda_closed(lam, beta, r):
    """Incomplete beta function form of ``b_Lambda``."""
    _check_barrier_args(lam, beta, r)
    a = (beta - 2.0) / (2.0 * beta - 2.0)
    z = (np.asarray(r, dtype=float) / lam) ** (-(2.0 * beta - 2.0))
    return lam * special.beta(a, 0.5) * special.betainc(a, 0.5, z) / (2.0 * beta - 2.0)


@dataclass(frozen=True)
class RadialFunction:
    """A radial function with its first two derivatives (vectorized callables)."""

    f: object
    df: object
    d2f: object

    def __neg__(self):
        return RadialFunction(lambda r: -self.f(r), lambda r: -self.df(r), lambda r: -self.d2f(r))


def barrier_function(lam, beta):
    _check_barrier_args(lam, beta)
    return RadialFunction(lambda r: barrier_b_lambda_closed(lam, beta, r),
                          lambda r: barrier_derivative(lam, beta, r),
                          lambda r: barrier_second_derivative(lam, beta, r))


# --------------------------------------------------------------------------
# geometry of spheres and the Jang operator


def expansion_scalars(data, r):
    """``(theta+, theta-)`` of the coordinate sphere, normal toward infinity."""
    r = np.asarray(r, dtype=float)
    H = (data.n - 1) * data.inv_phi(r) / r
    tr = (data.n - 1) * data.kt(r)
    return H + tr, H - tr


def outermost_mots_radius(data, r_max=1e4, samples=4000, tol=1e-10):
    """Largest root of ``theta+``, or None when ``theta+ > 0`` on every sample."""
    lo = data.r_min if data.r_min > 0 else 1e-6
    r = np.geomspace(lo, r_max, samples)
    th = expansion_scalars(data, r)[0]
    ok = np.isfinite(th)
    if ok.all() and np.all(th > 0):
        return None
    idx = np.flatnonzero(ok[:-1] & ok[1:] & (th[:-1] <= 0) & (th[1:] > 0))
    if not len(idx):
        return None
    i = idx[-1]
    a, b = r[i], r[i + 1]
    if th[i] == 0:
        return float(a)
    f = lambda x: float(expansion_scalars(data, x)[0])
    while b - a > tol * max(1.0, a):
        m = 0.5 * (a + b)
        if f(m) <= 0:
            a = m
        else:
            b = m
    return float(0.5 * (a + b))


def jang_operator_radial(data, u, r):
    """``H(u) + tr(k)(u)`` for a radial function ``u`` at radii ``r``.

    ``u`` is a RadialFunction or a callable, in which case derivatives are
    taken by central differences.
    """
    r = np.asarray(r, dtype=float)
    if not isinstance(u, RadialFunction):
        h = 1e-4 * np.maximum(1.0, np.abs(r))
        f = u
        u = RadialFunction(f, lambda x: (f(x + h) - f(x - h)) / (2 * h),
                           lambda x: (f(x + h) - 2 * f(x) + f(x - h)) / h**2)
    p = np.asarray(u.df(r), dtype=float)
    pp = np.asarray(u.d2f(r), dtype=float)
    phi = data.phi(r)
    dphi = data.dphi(r)
    D = phi**2 + p**2
    s = p / np.sqrt(D)
    ds = (pp * phi**2 - p * phi * dphi) / D**1.5
    H = ds / phi + (data.n - 1) * s / (r * phi)
    return H + data.kr(r) / D + (data.n - 1) * data.kt(r)


def barrier_beta(data):
    """Barrier exponent in ``(2, n)``: ``data.beta`` when admissible, else the midpoint."""
    return data.beta if 2 < data.beta < data.n else 0.5 * (2 + data.n)


def lambda0_search(data, beta=None, lam_start=1.0, samples=400, span=100.0, max_doublings=40):
    """Smallest ``Lambda = lam_start 2^j`` with the barrier signs on ``(Lambda, span Lambda]``.

    With ``H(u) = div(Du / sqrt(1 + |Du|^2))`` the comparison argument needs
    ``b = b_Lambda(|x|)`` to be a super solution and ``-b`` a sub solution:
    ``H(b) + tr(k)(b) < 0`` and ``H(-b) + tr(k)(-b) > 0`` at every sample.
    Returns ``(Lambda, grid, values_plus, values_minus)``.
    """
    beta = barrier_beta(data) if beta is None else beta
    lam = lam_start
    for _ in range(max_doublings):
        if lam > data.r_min:
            grid = lam * np.geomspace(1 + 1e-6, span, samples)
            b = barrier_function(lam, beta)
            vp = jang_operator_radial(data, b, grid)
            vm = jang_operator_radial(data, -b, grid)
            if np.all(np.isfinite(vp)) and np.all(vp < 0) and np.all(vm > 0):
                return lam, grid, vp, vm
        lam *= 2.0
    raise SolveFailure("no Lambda found for the barrier signs")


# --------------------------------------------------------------------------
# regularized solves


@dataclass
class RadialSolution:
    r: np.ndarray
    u: np.ndarray
    t: float
    sign: str
    r_h: float | None
    data: RadialInitialData = field(repr=False)
    iterations: int = 0
    residual: float = 0.0

    def slopes(self):
        """Element midpoints and ``u'`` there."""
        return 0.5 * (self.r[1:] + self.r[:-1]), np.diff(self.u) / np.diff(self.r)

    def __call__(self, r):
        return np.interp(r, self.r, self.u)

    def sphere_flux(self, radii):
        """``|S^{n-1}| r^{n-1} u' / phi^2`` on the elements containing ``radii``."""
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        mid, du = self.slopes()
        e = np.clip(np.searchsorted(self.r, radii) - 1, 0, len(du) - 1)
        n = self.data.n
        area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
        rr = mid[e]
        return area * rr ** (n - 1) * du[e] / self.data.phi(rr) ** 2, rr

    def blowup_radius(self, threshold=BLOWUP_THRESHOLD):
        """Largest radius where ``u`` is beyond ``threshold`` on the blow-up side."""
        side = -1.0 if self.sign == "minus" else 1.0
        hit = np.flatnonzero(side * self.u >= threshold)
        return float(self.r[hit[-1]]) if len(hit) else None


def radial_grid(r_h, r_max, n_el=N_ELEMENTS, delta=HORIZON_OFFSET, r0=1e-6):
    """``r = r_h + delta cosh^2 eta`` on a uniform ``eta`` grid (``r_h = 0`` without horizon)."""
    base = 0.0 if r_h is None else r_h
    d = delta if r_h is not None else r0
    eta_max = math.acosh(math.sqrt((r_max - base) / d))
    eta = np.linspace(0.0, eta_max, n_el + 1)
    r = base + d * np.cosh(eta) ** 2
    r[-1] = r_max
    return r


class _MixedSystem:
    """P1 values ``u_i`` at nodes and angles ``theta_e`` with ``s = sin(theta)`` per element.

    Unknowns are interleaved as ``[u_0, theta_0, u_1, ..., u_N]`` and the
    equations as ``[C_0, K_0, C_1, ..., C_N]``, which keeps the Jacobian
    tridiagonal. ``C_i`` is flux balance at node ``i``; ``K_e`` is the
    constitutive law ``u' cos(theta) = phi sin(theta)``. Near the horizon the
    graph is almost vertical and ``s`` saturates, which is harmless in
    ``theta`` but makes Newton in ``u`` alone overshoot.
    """

    def __init__(self, data, r, inflow):
        n = data.n
        self.data, self.r, self.n = data, r, n
        L = np.diff(r)
        self.L = L
        rg = np.stack([r[:-1] + g * L for g in GAUSS])
        wg = 0.5 * L
        self.phig = data.phi(rg)
        self.wv = wg * self.phig * rg ** (n - 1)
        self.Na = np.stack([np.full_like(L, 1 - g) for g in GAUSS])
        self.Nb = 1 - self.Na
        self.a = np.sum(wg * rg ** (n - 1), axis=0) / L
        self.phie = np.sqrt(np.sum(wg * self.phig**2, axis=0) / L)
        self.mass = np.zeros(len(r))
        np.add.at(self.mass, np.arange(len(L)), np.sum(self.wv * self.Na, axis=0))
        np.add.at(self.mass, np.arange(1, len(r)), np.sum(self.wv * self.Nb, axis=0))
        self.kr = data.kr(rg)
        self.kt = data.kt(rg)
        self.inflow = inflow
        self.R = r[-1]
        self.phiR = float(data.phi(self.R))

    def equations(self, u, th, t, jac=False):
        n, N = self.n, len(u)
        sn, cs = np.sin(th), np.cos(th)
        A = self.a * sn
        trk = self.kr * cs**2 / self.phig**2 + (n - 1) * self.kt
        Ta = np.sum(self.wv * trk * self.Na, axis=0)
        Tb = np.sum(self.wv * trk * self.Nb, axis=0)
        C = t * self.mass * u
        C[:-1] += -A - Ta
        C[1:] += A - Tb
        C[0] += self.inflow
        # decay condition u + r u' / (n - 2) = 0 at r_max
        pR = -(n - 2) * u[-1] / self.R
        DR = self.phiR**2 + pR**2
        C[-1] -= self.R ** (n - 1) * pR / math.sqrt(DR)
        p = np.diff(u) / self.L
        K = p * cs - self.phie * sn
        if not jac:
            return C, K
        E = np.arange(N - 1)
        ab = np.zeros((3, 2 * N - 1))
        dtrk = -2 * self.kr * sn * cs / self.phig**2
        ab[1, 0::2] = t * self.mass
        ab[1, -1] += self.R ** (n - 2) * (n - 2) * self.phiR**2 / DR**1.5
        col = 2 * E + 1
        ab[0, col] = -self.a * cs - np.sum(self.wv * dtrk * self.Na, axis=0)  # dC_e / dtheta_e
        ab[2, col] = self.a * cs - np.sum(self.wv * dtrk * self.Nb, axis=0)  # dC_{e+1} / dtheta_e
        ab[2, 2 * E] = -cs / self.L  # dK_e / du_e
        ab[0, 2 * E + 2] = cs / self.L  # dK_e / du_{e+1}
        ab[1, col] = -p * sn - self.phie * cs
        return C, K, ab

    def scales(self, u):
        return (np.maximum(self.r ** (self.n - 1), 1.0),
                self.phie + np.abs(np.diff(u)) / self.L)


def _mixed_newton(sys_, u, th, t, tol, max_iter):
    N = len(u)
    res = math.inf
    for it in range(max_iter + 1):
        C, K, ab = sys_.equations(u, th, t, jac=True)
        sc, sk = sys_.scales(u)
        res = max(float(np.max(np.abs(C) / sc)), float(np.max(np.abs(K) / sk)))
        if res <= tol:
            return u, th, it, res
        if it == max_iter or not np.isfinite(res):
            break
        rhs = np.empty(2 * N - 1)
        rhs[0::2] = -C
        rhs[1::2] = -K
        d = solve_banded((1, 1), ab, rhs)
        du, dth = d[0::2], d[1::2]
        # keep every angle inside (-pi/2, pi/2)
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(dth > 0, (0.5 * math.pi - th) / dth,
                            np.where(dth < 0, (-0.5 * math.pi - th) / dth, np.inf))
        alpha = min(1.0, 0.9 * float(np.min(room)))
        u = u + alpha * du
        th = th + alpha * dth
    raise SolveFailure(f"radial Newton did not converge at t={t:g}", res)


def _constant_flux_profile(data, r, inflow):
    """``u`` with ``r^{n-1} s`` equal to ``inflow``, matching the decay condition at ``r_max``."""
    n = data.n
    mid = 0.5 * (r[1:] + r[:-1])
    s = np.clip(inflow / mid ** (n - 1), -1 + 1e-15, 1 - 1e-15)
    du = data.phi(mid) * s / np.sqrt(1 - s * s)
    u = np.concatenate([[0.0], np.cumsum(du * np.diff(r))])
    uR = -r[-1] * du[-1] / (n - 2)
    return u - u[-1] + uR


def solve_blowup(data, sign="minus", t_schedule=(1e-1, 1e-2, 1e-3, 1e-4), r_max=1000.0,
                 n_el=N_ELEMENTS, delta=HORIZON_OFFSET, tol=TAU_NEWTON, max_iter=MAX_ITER,
                 include_limit=True):
    """Continuation in ``t`` for ``H(u) + tr(k)(u) = t u`` outside the horizon.

    The graph is vertical at the horizon ``r_h``: the flux entering the first
    node is ``r_h^{n-1}`` (``u`` comes up from minus infinity) for
    ``sign="minus"`` and ``-r_h^{n-1}`` for ``"plus"``, which is the weak form
    of infinite boundary values. The grid starts at ``r_h + delta``. At
    ``r_max`` the decay condition ``u + r u' / (n - 2) = 0`` holds. Without a
    horizon the inner flux is zero. With ``include_limit`` the ``t = 0``
    solution is appended.
    """
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    r_h = outermost_mots_radius(data) if sign == "minus" else _outermost_mits_radius(data)
    r = radial_grid(r_h, r_max, n_el, delta)
    inflow = 0.0 if r_h is None else (1.0 if sign == "minus" else -1.0) * r_h ** (data.n - 1)
    sys_ = _MixedSystem(data, r, inflow)
    u = _constant_flux_profile(data, r, inflow)
    th = np.arctan2(np.diff(u) / sys_.L, sys_.phie)
    ts = [float(t) for t in t_schedule]
    if any(t < 0 for t in ts):
        raise DomainError("t must be non-negative")
    # the t = 0 problem starts next to the constant flux profile; continuation
    # then runs upward in t with geometric substeps on failure
    u, th, its, res = _mixed_newton(sys_, u, th, 0.0, tol, max_iter)
    solved = {0.0: (u, th, its, res)}
    t_prev = 0.0
    for t in sorted(set(ts) - {0.0}):
        u, th, its, res = _continue(sys_, u, th, t_prev, t, tol, max_iter)
        solved[t] = (u, th, its, res)
        t_prev = t
    out = [RadialSolution(r, solved[t][0], t, sign, r_h, data, solved[t][2], solved[t][3]) for t in ts]
    if include_limit:
        u, th, its, res = solved[0.0]
        out.append(RadialSolution(r, u, 0.0, sign, r_h, data, its, res))
    return out


def _continue(sys_, u, th, t0, t1, tol, max_iter, depth=12):
    try:
        return _mixed_newton(sys_, u.copy(), th.copy(), t1, tol, max_iter)
    except SolveFailure:
        if depth == 0:
            raise
    tm = math.sqrt(t0 * t1) if t0 > 0 else 0.1 * t1
    u, th, _, _ = _continue(sys_, u, th, t0, tm, tol, max_iter, depth - 1)
    return _continue(sys_, u, th, tm, t1, tol, max_iter, depth - 1)


def _outermost_mits_radius(data, **kw):
    """Largest root of ``theta-``."""
    flipped = RadialInitialData(data.n, data.phi2, data.dphi2, data.k_r,
                                lambda r: -np.asarray(data.kt(r)), data.r_min, data.q, data.beta)
    return outermost_mots_radius(flipped, **kw)


def barrier_sandwich(solution, lam, beta=None, tol=0.0):
    """``max(|u| - b_Lambda)`` over grid radii beyond ``Lambda`` and the pass flag."""
    beta = barrier_beta(solution.data) if beta is None else beta
    sel = solution.r > lam
    b = barrier_b_lambda_closed(lam, beta, solution.r[sel])
    gap = float(np.max(np.abs(solution.u[sel]) - b)) if sel.any() else -math.inf
    return gap, gap <= tol
