import numpy as np
import pytest

from tofsi.fem_core import eval_shapes, edge_reference_points
from tofsi.mesh import build_channel_mesh, perturb_mesh
from tofsi.recovery import (RecoveryError, basis_size_for, build_patches, build_recovery_operator, poly_basis,
                            raw_nodal_derivatives, recover)


def _full_basis_nodes(mesh, patches):
    ok = np.ones(mesh.n_vnodes, dtype=bool)
    for p in patches:
        if p.basis_size < 9:
            ok[p.targets] = False
    return ok


def test_basis_sizes():
    assert [basis_size_for(n) for n in (2, 3, 4, 6)] == [4, 6, 9, 9]
    with pytest.raises(RecoveryError):
        basis_size_for(1)
    assert poly_basis(np.array([2.0]), np.array([3.0]), 9).tolist() == [[1, 2, 3, 6, 4, 9, 18, 12, 36]]


def test_patch_structure():
    m = build_channel_mesh(4, 3, 2.0, 1.0)
    patches = build_patches(m)
    assert len(patches) == 5 * 4  # one per corner node
    sizes = {p.center: len(p.members) for p in patches}
    # domain corners have single-element stars that get one neighbour merged in
    assert sizes[0] == 2
    covered = np.zeros(m.n_vnodes, dtype=bool)
    for p in patches:
        covered[p.targets] = True
    assert covered.all()


@pytest.mark.parametrize("mode", ["lines", "nodes"])
def test_linear_fields_exact_everywhere(mode):
    m = perturb_mesh(build_channel_mesh(6, 5, 2.0, 1.0), 0.25, seed=7, mode=mode)
    x, y = m.vcoords.T
    r = recover(m, build_patches(m), 0 * x + 4.0, 2 * x - 3 * y + 1)
    assert np.max(np.abs(r.v1x)) < 1e-12 and np.max(np.abs(r.v1y)) < 1e-12
    assert np.max(np.abs(r.v2x - 2)) < 1e-12 and np.max(np.abs(r.v2y + 3)) < 1e-12


def test_biquadratic_field_exact_on_full_patches():
    m = perturb_mesh(build_channel_mesh(8, 6, 2.0, 1.0), 0.25, seed=2, mode="lines")
    x, y = m.vcoords.T
    p = build_patches(m)
    r = recover(m, p, x ** 2 * y ** 2, x * y ** 2)
    ok = _full_basis_nodes(m, p)
    assert ok.sum() > 20
    assert np.max(np.abs(r.v1x - 2 * x * y ** 2)[ok]) < 1e-11
    assert np.max(np.abs(r.v1y - 2 * x ** 2 * y)[ok]) < 1e-11
    assert np.max(np.abs(r.v2x - y ** 2)[ok]) < 1e-11


def test_operator_equals_direct_recovery(rng):
    m = perturb_mesh(build_channel_mesh(6, 4, 2.0, 1.0), 0.2, seed=5, mode="nodes")
    p = build_patches(m)
    v1, v2 = rng.standard_normal((2, m.n_vnodes))
    a = recover(m, p, v1, v2)
    b = build_recovery_operator(m, p).apply(v1, v2)
    for u, w in zip(a.as_tuple(), b.as_tuple()):
        assert np.max(np.abs(u - w)) < 1e-12


def test_active_subset_and_isolated_element():
    m = build_channel_mesh(4, 3, 2.0, 1.0)
    active = np.zeros(m.n_elements, dtype=bool)
    active[[5, 6]] = True
    patches = build_patches(m, active)
    assert all(set(p.members) <= {5, 6} for p in patches)
    active[:] = False
    active[5] = True
    with pytest.raises(RecoveryError):
        build_patches(m, active)


def test_recovered_field_is_c0_across_edges(rng):
    m = perturb_mesh(build_channel_mesh(5, 4, 2.0, 1.0), 0.2, seed=1, mode="nodes")
    r = recover(m, build_patches(m), *rng.standard_normal((2, m.n_vnodes)))
    s = np.linspace(-1, 1, 7)
    # element e and its right neighbour share e's right edge / the neighbour's left edge
    for e in range(m.n_elements):
        if (e + 1) % m.nx == 0:
            continue
        xi_r, eta_r = edge_reference_points("right", s)
        xi_l, eta_l = edge_reference_points("left", -s)  # CCW runs the other way
        a = eval_shapes("velocity", xi_r, eta_r) @ r.v1x[m.conn[e]]
        b = eval_shapes("velocity", xi_l, eta_l) @ r.v1x[m.conn[e + 1]]
        assert np.max(np.abs(a - b)) < 1e-12


def test_raw_derivatives_discontinuous_but_recovered_smooth():
    m = build_channel_mesh(8, 4, 2.0, 1.0)
    x, y = m.vcoords.T
    v = np.sin(3 * x) * np.cos(2 * y)
    raw = raw_nodal_derivatives(m, v, v)
    rec = recover(m, build_patches(m), v, v)
    exact = 3 * np.cos(3 * x) * np.cos(2 * y)
    inner = (x > 0.3) & (x < 1.7) & (y > 0.3) & (y < 0.7)
    assert np.max(np.abs(rec.v1x - exact)[inner]) < np.max(np.abs(raw[0] - exact)[inner])
