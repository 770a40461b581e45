import math

import numpy as np
import pytest
from scipy import linalg

from jsslab import jang, stability as st
from jsslab.errors import MeshTopology

PI2 = math.pi**2


def _dense_drift_oracle(L, n, c):
    # -phi'' + 2 c phi' with central differences on the interior nodes
    h = L / (n - 1)
    m = n - 2
    A = np.zeros((m, m))
    for i in range(m):
        A[i, i] = 2 / h**2
        if i > 0:
            A[i, i - 1] = -1 / h**2 - c / h
        if i < m - 1:
            A[i, i + 1] = -1 / h**2 + c / h
    return float(np.min(linalg.eigvals(A).real))


def _eig(coeffs):
    return st.principal_eigenvalue(st.assemble_stability_operator(coeffs))


def test_dirichlet_interval():
    ep = _eig(st.StabilityCoefficients(st.CurveMesh.interval(1.0, 1000)))
    assert ep.value == pytest.approx(PI2, abs=1e-3)
    assert np.all(ep.vector[1:-1] > 0)


def test_drift_against_dense_oracle():
    mesh = st.CurveMesh.interval(1.0, 1000)
    ep = _eig(st.StabilityCoefficients.from_potential(mesh, 0.0, X=1.0))
    oracle = _dense_drift_oracle(1.0, 1000, 1.0)
    assert ep.value == pytest.approx(oracle, abs=1e-3)
    assert ep.value == pytest.approx(1 + PI2, abs=1e-3)
    assert np.all(ep.vector[1:-1] > 0)


def test_circle_kernel_is_constant():
    ep = _eig(st.StabilityCoefficients(st.CurveMesh.circle(2.0, 200)))
    assert abs(ep.value) < 1e-9
    assert np.allclose(ep.vector, 1.0)


@pytest.mark.parametrize("L", [0.5, 1.0, 3.0])
def test_zero_potential_margin(L):
    rep = st.is_stable(st.StabilityCoefficients(st.CurveMesh.interval(L, 1001)))
    assert rep.stable and rep.margin == pytest.approx((math.pi / L) ** 2, rel=1e-5)


@pytest.mark.parametrize("L", [0.5, 1.0, 3.0])
def test_shifted_potential_unstable(L):
    mesh = st.CurveMesh.interval(L, 1001)
    rep = st.is_stable(st.StabilityCoefficients.from_potential(mesh, -2 * (math.pi / L) ** 2))
    assert not rep.stable and rep.margin == pytest.approx(-((math.pi / L) ** 2), rel=1e-5)


@pytest.mark.parametrize("H0,kappa", [(0.0, 1.0), (1.0, 0.0), (0.6, 0.64)])
def test_arc_stability_threshold(H0, kappa):
    c = H0**2 + kappa
    L = math.pi / math.sqrt(c)
    assert st.is_stable(st.arc_coefficients(L, H0, kappa)).margin == pytest.approx(0, abs=1e-4)
    assert st.is_stable(st.arc_coefficients(0.9 * L, H0, kappa)).stable
    assert not st.is_stable(st.arc_coefficients(1.1 * L, H0, kappa)).stable


def test_grid_rectangle():
    a, b, nx, ny = 1.0, 2.0, 81, 161
    grid = st.GridPatch(nx, ny, a / (nx - 1), b / (ny - 1))
    ep = _eig(st.StabilityCoefficients(grid))
    assert ep.value == pytest.approx(PI2 * (1 / a**2 + 1 / b**2), rel=1e-3)
    assert np.all(ep.vector[~grid.boundary()] > 0)


def test_grid_periodic_strip():
    nx, ny = 60, 41
    grid = st.GridPatch(nx, ny, 2 * math.pi / nx, 1.0 / (ny - 1), periodic=(True, False))
    assert _eig(st.StabilityCoefficients(grid)).value == pytest.approx(PI2, rel=1e-3)


def test_disconnected_patch():
    mask = np.ones((21, 21), bool)
    mask[10, :] = False
    grid = st.GridPatch(21, 21, 0.05, 0.05, mask=mask)
    with pytest.raises(MeshTopology):
        st.assemble_stability_operator(st.StabilityCoefficients(grid))


def test_two_node_interval_has_no_interior():
    with pytest.raises(MeshTopology):
        st.assemble_stability_operator(st.StabilityCoefficients(st.CurveMesh.interval(1.0, 2)))


def test_horizon_sphere_schwarzschild():
    # on r = 2m the terms reduce to Scal_S / 2 = 1 / r^2
    c = st.sphere_coefficients(jang.schwarzschild(1.0), 2.0)
    rep = st.is_stable(c)
    assert rep.stable and rep.margin == pytest.approx(0.25, abs=1e-6)


def test_flat_sphere_terms():
    t = st.sphere_terms(jang.flat(), 1.0)
    assert t["mu"] == pytest.approx(0, abs=1e-8) and t["J_nu"] == 0
    assert t["potential"] == pytest.approx(0.5 * 2 - 0.5 * 2 * 1, abs=1e-8)


@pytest.mark.parametrize("V", [-3.0, 0.0, 2.5, 40.0])
def test_eigenfunction_positive(V):
    mesh = st.CurveMesh.polyline(np.column_stack([np.linspace(0, 1, 300), np.sin(np.linspace(0, 3, 300))]))
    x = np.linspace(-1, 1, mesh.n)
    ep = _eig(st.StabilityCoefficients.from_potential(mesh, V + 5 * x**2, X=0.3 * x))
    assert np.all(ep.vector[1:-1] > 0)
