import numpy as np
import pytest

from tofsi.mesh import (DESIGN, FLUID, NONDESIGN, build_channel_mesh, dofmap_for, perturb_mesh, snap_box,
                        tag_regions)


def test_counts():
    m = build_channel_mesh(4, 3, 2.0, 1.0)
    assert m.n_elements == 12
    assert m.n_vnodes == 9 * 7
    assert m.n_pnodes == 5 * 4
    assert np.allclose(m.element_areas().sum(), 2.0)
    dm = dofmap_for(m)
    assert dm.n_fluid == 2 * m.n_vnodes + m.n_pnodes
    assert dm.n_solid == 2 * m.n_vnodes


def test_element_numbering_row_major():
    m = build_channel_mesh(4, 3, 2.0, 1.0)
    c = m.centroids()
    assert np.allclose(c[1] - c[0], [0.5, 0.0])
    assert np.allclose(c[4] - c[0], [0.0, 1.0 / 3.0])


def test_regions(small_mesh):
    m = small_mesh
    assert np.sum(m.region == NONDESIGN) == 6
    assert np.sum(m.region == DESIGN) == 6 * 3 - 6
    assert set(m.solid_elements) == set(np.flatnonzero(m.region != FLUID))


def test_snap_box_exact_and_rounded():
    m = build_channel_mesh(76, 38, 2.0, 1.0)
    d = snap_box(m, (0.3, 0.0, 1.7, 0.8))
    assert np.allclose(d, (11 / 38, 0.0, 65 / 38, 30 / 38))
    c = snap_box(m, (0.975, 0.0, 1.025, 0.5))
    assert np.allclose(c, (37 / 38, 0.0, 39 / 38, 0.5))
    m40 = build_channel_mesh(40, 20, 2.0, 1.0)
    c40 = snap_box(m40, (0.975, 0.0, 1.025, 0.5))
    assert np.isclose(c40[2] - c40[0], 0.05)


@pytest.mark.parametrize("mode", ["lines", "nodes"])
def test_perturbation_keeps_boundary_and_interfaces(small_mesh, mode):
    m = small_mesh
    p = perturb_mesh(m, 0.2, seed=4, mode=mode)
    # boundary nodes stay on their boundary line
    for k, edge in ((0, 0.0), (0, 2.0), (1, 0.0), (1, 1.0)):
        on = np.isclose(m.vcoords[:, k], edge)
        assert np.allclose(p.vcoords[on, k], edge)
    # region interfaces do not move
    x0, x1 = 0.8, 1.2
    on = (np.isclose(m.vcoords[:, 0], x0) | np.isclose(m.vcoords[:, 0], x1)) & (m.vcoords[:, 1] <= 0.5)
    assert np.allclose(p.vcoords[on, 0], m.vcoords[on, 0])
    assert not np.allclose(p.vcoords, m.vcoords)
    assert np.isclose(p.element_areas().sum(), 2.0)
    assert np.all(p.element_areas() > 0)


def test_perturbation_is_seeded(small_mesh):
    a = perturb_mesh(small_mesh, 0.2, seed=1)
    b = perturb_mesh(small_mesh, 0.2, seed=1)
    assert np.array_equal(a.vcoords, b.vcoords)


def test_region_tagging_overlap_rules():
    m = build_channel_mesh(10, 6, 2.0, 1.0)
    t = tag_regions(m, (0.4, 0.0, 1.6, 0.5), [])
    assert np.sum(t.region == NONDESIGN) == 0
