import numpy as np
import pytest

from tofsi.mesh import build_channel_mesh
from tofsi.solid import SolidParams, SolidSolver, compliance, unit_element_stiffness, youngs_modulus


def test_element_stiffness_symmetric_with_rigid_modes():
    m = build_channel_mesh(4, 2, 2.0, 1.0)
    k = unit_element_stiffness(m.element_coords()[:1], 0.3)[0]
    assert np.max(np.abs(k - k.T)) < 1e-12
    ev = np.linalg.eigvalsh(k)
    assert np.sum(np.abs(ev) < 1e-10) == 3
    assert np.all(ev > -1e-10)


def test_youngs_modulus_endpoints_and_derivative():
    p = SolidParams(e_max=1e5, e_min=1e-5, p_e=3.0)
    assert youngs_modulus(0.0, p)[0] == 1e-5
    assert youngs_modulus(1.0, p)[0] == 1e5
    r = np.array([0.2, 0.7])
    cs = np.imag(youngs_modulus(r + 1e-30j, p)[0]) / 1e-30
    assert np.allclose(youngs_modulus(r, p)[1], cs, rtol=1e-14)


def test_params_validation():
    with pytest.raises(ValueError):
        SolidParams(e_max=1.0, e_min=2.0)
    with pytest.raises(ValueError):
        SolidParams(nu=0.5)
    with pytest.raises(ValueError):
        SolidParams(p_e=0.5)


def test_uniform_compression_patch():
    # plane strain, u2 = 0 on the bottom, rollers on the sides would be needed for a
    # uniform field; instead check the exact linear solution by prescribing it
    m = build_channel_mesh(4, 2, 2.0, 1.0)
    s = SolidSolver(m, SolidParams(e_max=1.0, e_min=1e-9), np.arange(3))
    K = s.stiffness(np.ones(m.n_elements)).toarray()
    x, y = m.vcoords.T
    u = np.concatenate([0.01 * x + 0.02 * y, -0.03 * x + 0.005 * y])
    f = K @ u
    # interior nodes carry no force for a linear displacement field
    interior = (x > 0) & (x < 2) & (y > 0) & (y < 1)
    assert np.max(np.abs(f[:m.n_vnodes][interior])) < 1e-13
    assert np.max(np.abs(f[m.n_vnodes:][interior])) < 1e-13


def test_solve_and_compliance():
    m = build_channel_mesh(6, 3, 2.0, 1.0)
    bottom = np.flatnonzero(np.isclose(m.vcoords[:, 1], 0.0))
    s = SolidSolver(m, SolidParams(e_max=10.0), bottom)
    F = np.zeros(s.n)
    top = np.flatnonzero(np.isclose(m.vcoords[:, 1], 1.0))
    F[top] = 1.0
    rho = np.ones(m.n_elements)
    st = s.solve(rho, F)
    assert np.allclose(st.u[s.fixed], 0.0)
    c = compliance(st.u, s.K)
    assert np.isclose(c, F @ st.u)
    assert c > 0
    # energies sum to the compliance
    assert np.isclose(s.element_energies(st.u, rho).sum(), c)
    # halving E doubles the compliance
    s2 = SolidSolver(m, SolidParams(e_max=5.0), bottom)
    st2 = s2.solve(rho, F)
    assert np.isclose(compliance(st2.u, s2.K), 2 * c, rtol=1e-6)


def test_no_fixed_nodes_rejected():
    m = build_channel_mesh(2, 2, 1.0, 1.0)
    with pytest.raises(ValueError):
        SolidSolver(m, SolidParams(), [])
