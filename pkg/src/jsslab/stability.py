"""MOTS stability operator and its principal eigenvalue.

    L phi = -Lap phi + 2 <X, D phi> + V phi,
    V = Scal/2 - |h + k|^2 / 2 - J(nu) - mu + div X - |X|^2,

discretized by finite differences on a curve (arclength nodes) or on a
structured patch of a flat chart. Boundary nodes carry Dirichlet data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import EigFailure, MeshTopology, NotPrincipal

PECLET_SWITCH = 2.0
TAU_POS = 1e-8
TAU_EIG_REL = 1e-6


@dataclass(frozen=True)
class CurveMesh:
    """Nodes at arclength ``s`` (increasing); for a closed curve ``length`` closes the loop."""

    s: np.ndarray
    closed: bool = False
    length: float | None = None

    @classmethod
    def interval(cls, L, n):
        return cls(np.linspace(0.0, L, n))

    @classmethod
    def circle(cls, radius, n):
        L = 2 * math.pi * radius
        return cls(np.arange(n) * L / n, True, L)

    @classmethod
    def polyline(cls, points, closed=False):
        P = np.asarray(points, dtype=float)
        if closed and np.allclose(P[0], P[-1]):
            P = P[:-1]
        seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        L = s[-1] + np.linalg.norm(P[0] - P[-1]) if closed else None
        return cls(s, closed, L)

    @property
    def n(self):
        return len(self.s)

    def boundary(self):
        b = np.zeros(self.n, dtype=bool)
        if not self.closed:
            b[[0, -1]] = True
        return b

    def spacing(self):
        return float(np.min(np.diff(self.s)))


@dataclass(frozen=True)
class GridPatch:
    """Structured grid ``x_i = i hx``, ``y_j = j hy`` with an optional node mask.

    Nodes on the edge of the grid or next to a masked-out node are Dirichlet
    nodes, unless the direction is periodic.
    """

    nx: int
    ny: int
    hx: float
    hy: float
    mask: np.ndarray | None = None
    periodic: tuple = (False, False)

    @property
    def n(self):
        return self.nx * self.ny

    def active(self):
        return np.ones(self.n, dtype=bool) if self.mask is None else np.asarray(self.mask, bool).ravel()

    def index(self, i, j):
        return i * self.ny + j

    def boundary(self):
        act = self.active().reshape(self.nx, self.ny)
        b = ~act.copy()
        if not self.periodic[0]:
            b[[0, -1], :] = True
        if not self.periodic[1]:
            b[:, [0, -1]] = True
        pad = act
        for axis in (0, 1):
            width = [(1, 1) if a == axis else (0, 0) for a in (0, 1)]
            pad = np.pad(pad, width, mode="wrap" if self.periodic[axis] else "constant")
        near_hole = ~(pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])
        return (b | (near_hole & act)).ravel()

    def spacing(self):
        return min(self.hx, self.hy)


@dataclass
class StabilityCoefficients:
    """Per-node data on a curve or grid patch.

    ``X`` holds the tangential vector (shape ``(n,)`` on curves, ``(n, 2)`` on
    patches). ``div_X`` and ``X2`` default to finite differences of ``X`` and
    ``|X|^2``.
    """

    mesh: object
    X: np.ndarray | None = None
    hk2: np.ndarray | float = 0.0
    scal: np.ndarray | float = 0.0
    J_nu: np.ndarray | float = 0.0
    mu: np.ndarray | float = 0.0
    div_X: np.ndarray | None = None
    X2: np.ndarray | None = None

    def __post_init__(self):
        n = self.mesh.n
        shape = (n,) if isinstance(self.mesh, CurveMesh) else (n, 2)
        self.X = np.zeros(shape) if self.X is None else np.broadcast_to(
            np.asarray(self.X, dtype=float), shape).copy()
        for name in ("hk2", "scal", "J_nu", "mu"):
            setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy())
        if self.X2 is None:
            self.X2 = self.X**2 if self.X.ndim == 1 else np.sum(self.X**2, axis=1)
        if self.div_X is None:
            self.div_X = _divergence(self.mesh, self.X)
        for name in ("X", "hk2", "scal", "J_nu", "mu", "div_X", "X2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"coefficient {name} is not finite")

    def potential(self):
        return 0.5 * self.scal - 0.5 * self.hk2 - self.J_nu - self.mu + self.div_X - self.X2

    @classmethod
    def from_potential(cls, mesh, V, X=None):
        """Coefficients whose zeroth order term equals ``V`` (with ``div X`` and ``|X|^2`` removed)."""
        c = cls(mesh, X=X)
        c.mu = -(np.broadcast_to(np.asarray(V, dtype=float), (mesh.n,)) - c.div_X + c.X2)
        return c


def _divergence(mesh, X):
    if isinstance(mesh, CurveMesh):
        if np.all(X == 0):
            return np.zeros(mesh.n)
        if mesh.closed:
            s = np.concatenate([mesh.s, [mesh.length]])
            x = np.concatenate([X, X[:1]])
            d = np.gradient(x, s)
            d[0] = d[-1] = (X[1] - X[-1]) / (mesh.s[1] + mesh.length - mesh.s[-1])
            return d[:-1]
        return np.gradient(X, mesh.s) if mesh.n > 2 else np.zeros(mesh.n)
    X1 = X[:, 0].reshape(mesh.nx, mesh.ny)
    X2 = X[:, 1].reshape(mesh.nx, mesh.ny)
    return (np.gradient(X1, mesh.hx, axis=0) + np.gradient(X2, mesh.hy, axis=1)).ravel()


def arc_coefficients(L, H0, kappa, n=1001):
    """Interval of length ``L`` carrying the arc Jacobi form ``-phi'' - (H0^2 + kappa) phi``."""
    mesh = CurveMesh.interval(L, n)
    return StabilityCoefficients.from_potential(mesh, -(H0**2 + kappa))


# --------------------------------------------------------------------------
# assembly


def _drift_weights(b, hm, hp):
    """Weights of ``b phi'`` on ``(phi_{i-1}, phi_i, phi_{i+1})``; upwind when ``|b| h > 2``."""
    h = 0.5 * (hm + hp)
    upwind = np.abs(b) * h > PECLET_SWITCH
    wm = np.where(upwind, np.where(b > 0, -b / hm, 0.0), -b / (hm + hp))
    wp = np.where(upwind, np.where(b < 0, b / hp, 0.0), b / (hm + hp))
    w0 = np.where(upwind, np.where(b > 0, b / hm, -b / hp), 0.0)
    return wm, w0, wp


def _assemble_curve(mesh, X, V):
    n = mesh.n
    s = mesh.s
    if mesh.closed:
        prev = np.roll(np.arange(n), 1)
        nxt = np.roll(np.arange(n), -1)
        hp = np.diff(np.concatenate([s, [mesh.length]]))
        hm = np.roll(hp, 1)
    else:
        prev = np.maximum(np.arange(n) - 1, 0)
        nxt = np.minimum(np.arange(n) + 1, n - 1)
        d = np.diff(s)
        hp = np.concatenate([d, [d[-1]]])
        hm = np.concatenate([[d[0]], d])
    if np.any(hp <= 0) or np.any(hm <= 0):
        raise MeshTopology("curve nodes must have increasing arclength")
    cm = -2.0 / (hm * (hm + hp))
    cp = -2.0 / (hp * (hm + hp))
    wm, w0, wp = _drift_weights(2 * X, hm, hp)
    diag = -(cm + cp) + w0 + V
    rows = np.concatenate([np.arange(n)] * 3)
    cols = np.concatenate([np.arange(n), prev, nxt])
    vals = np.concatenate([diag, cm + wm, cp + wp])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _assemble_patch(mesh, X, V):
    nx, ny = mesh.nx, mesh.ny
    I, Jn = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, Jn = I.ravel(), Jn.ravel()
    idx = mesh.index(I, Jn)
    rows, cols, vals = [idx], [idx], [V.copy()]
    for axis, h, nmax in ((0, mesh.hx, nx), (1, mesh.hy, ny)):
        b = 2 * X[:, axis]
        hh = np.full(len(idx), h)
        wm, w0, wp = _drift_weights(b, hh, hh)
        c = -1.0 / h**2
        vals[0] = vals[0] - 2 * c + w0
        for step, w in ((-1, wm), (1, wp)):
            if axis == 0:
                ii, jj = I + step, Jn
                ii = ii % nmax if mesh.periodic[0] else np.clip(ii, 0, nmax - 1)
            else:
                ii, jj = I, Jn + step
                jj = jj % nmax if mesh.periodic[1] else np.clip(jj, 0, nmax - 1)
            rows.append(idx)
            cols.append(mesh.index(ii, jj))
            vals.append(c + w)
    n = mesh.n
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


@dataclass
class StabilityOperator:
    """Operator restricted to the free (non-Dirichlet) nodes."""

    matrix: sp.csr_matrix
    free: np.ndarray
    n: int
    potential: np.ndarray

    def full(self, values):
        out = np.zeros(self.n)
        out[self.free] = values
        return out


def assemble_stability_operator(coeffs):
    mesh = coeffs.mesh
    V = coeffs.potential()
    if isinstance(mesh, CurveMesh):
        A = _assemble_curve(mesh, coeffs.X, V)
    else:
        A = _assemble_patch(mesh, coeffs.X, V)
    free = np.flatnonzero(~mesh.boundary())
    if not len(free):
        raise MeshTopology("no interior nodes")
    A = A[free][:, free].tocsr()
    pattern = (abs(A) + abs(A).T).tocsr()
    ncomp, _ = connected_components(pattern, directed=False)
    if ncomp != 1:
        raise MeshTopology(f"mesh interior has {ncomp} components")
    return StabilityOperator(A, free, mesh.n, V)


# --------------------------------------------------------------------------
# eigenvalue


@dataclass
class Eigenpair:
    value: float
    vector: np.ndarray
    iterations: int


def principal_eigenvalue(op, tol=1e-12, max_iter=20000, shift=None):
    """Inverse power iteration on ``(A + shift I)^-1``; eigenfunction normalized to sup 1."""
    A = op.matrix
    n = A.shape[0]
    if shift is None:
        shift = float(np.max(np.abs(op.potential))) + 1.0
    lu = splu((A + shift * sp.identity(n, format="csr")).tocsc())
    v = np.ones(n)
    lam = math.inf
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        k = int(np.argmax(np.abs(w)))
        rho = w[k]
        if not np.isfinite(rho) or rho == 0:
            raise EigFailure("inverse iteration broke down")
        v_new = w / rho
        lam_new = 1.0 / rho - shift
        done = abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)) and np.max(np.abs(v_new - v)) <= math.sqrt(tol)
        v, lam = v_new, lam_new
        if done:
            break
    else:
        raise EigFailure(f"inverse iteration did not converge in {max_iter} steps")
    if np.min(v) < -TAU_POS:
        raise NotPrincipal(f"eigenfunction changes sign (min {np.min(v):.3g})")
    return Eigenpair(float(lam), op.full(np.maximum(v, 0.0)), it)


@dataclass
class StabilityReport:
    stable: bool
    margin: float
    eigenfunction: np.ndarray
    tolerance: float


def is_stable(coeffs, **kw):
    op = assemble_stability_operator(coeffs)
    ep = principal_eigenvalue(op, **kw)
    tau = TAU_EIG_REL * max(1.0, float(np.max(np.abs(op.potential))))
    return StabilityReport(ep.value >= -tau, ep.value, ep.vector, tau)


# --------------------------------------------------------------------------
# coordinate spheres of radial data


def sphere_terms(data, r, h=1e-5):
    """Constant stability terms of the sphere of radius ``r`` for radial data.

    Returns a dict with ``scal``, ``hk2``, ``mu``, ``J_nu`` and the potential.
    Derivatives of the profiles use central differences with relative step ``h``.
    """
    n = data.n
    r = float(r)
    phi2 = float(data.phi2(np.array(r)))
    ip2 = 0.0 if math.isinf(phi2) else 1.0 / phi2
    kr = float(data.kr(np.array(r)))
    kt = float(data.kt(np.array(r)))
    dr = h * r

    def inv_phi2(x):
        v = float(data.phi2(np.array(x)))
        return 0.0 if math.isinf(v) else 1.0 / v

    def deriv(f):
        if r - dr > data.r_min:
            return (f(r + dr) - f(r - dr)) / (2 * dr)
        return (-3 * f(r) + 4 * f(r + dr) - f(r + 2 * dr)) / (2 * dr)

    # Scal_M = (n-1)/r^2 [(n-2)(1 - phi^-2) - r (phi^-2)']
    d_ip2 = deriv(inv_phi2)
    scal_M = (n - 1) / r**2 * ((n - 2) * (1 - ip2) - r * d_ip2)
    trk = kr * ip2 + (n - 1) * kt
    k2 = kr**2 * ip2**2 + (n - 1) * kt**2
    mu = 0.5 * (scal_M + trk**2 - k2)

    # J(nu) = (a' + (n-1)(a - b)/r) / phi with a = k_r/phi^2 - tr k, b = k_t - tr k
    def a_of(x):
        ip = inv_phi2(x)
        return float(data.kr(np.array(x))) * ip - (float(data.kr(np.array(x))) * ip
                                                    + (n - 1) * float(data.kt(np.array(x))))

    da = deriv(a_of)
    a = kr * ip2 - trk
    b = kt - trk
    J_nu = (da + (n - 1) * (a - b) / r) * math.sqrt(ip2)
    scal_S = (n - 1) * (n - 2) / r**2
    hk2 = (n - 1) * (math.sqrt(ip2) / r + kt) ** 2
    V = 0.5 * scal_S - 0.5 * hk2 - J_nu - mu
    return dict(scal=scal_S, hk2=hk2, mu=mu, J_nu=J_nu, potential=V)


def sphere_coefficients(data, r, n_nodes=64):
    """Coefficients on an equator loop carrying the constant sphere terms.

    All terms are constant on the sphere, so the principal eigenfunction is
    constant and the principal eigenvalue equals the potential on the loop
    as on the sphere.
    """
    t = sphere_terms(data, r)
    mesh = CurveMesh.circle(r, n_nodes)
    return StabilityCoefficients(mesh, hk2=t["hk2"], scal=t["scal"], J_nu=t["J_nu"], mu=t["mu"])
