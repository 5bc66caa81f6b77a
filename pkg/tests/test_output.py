import numpy as np
import pytest

from tofsi import output
from tofsi.mesh import build_channel_mesh, tag_regions


def test_pgm_roundtrip_and_values(tmp_path):
    m = tag_regions(build_channel_mesh(10, 6, 2.0, 1.0), (0.4, 0.0, 1.6, 0.5), [])
    d = m.design_elements
    rho = np.linspace(0, 1, d.size)
    img = output.design_image(m, d, rho)
    assert img.shape == (3, 6)
    assert img[-1, 0] == 255 and img[0, -1] == 0  # first element is bottom-left, fully void
    p = tmp_path / "d.pgm"
    output.write_pgm(p, img)
    assert p.read_bytes().startswith(b"P5\n6 3\n255\n")
    assert np.array_equal(output.read_pgm(p), img)


def test_design_image_fills_column_as_solid():
    m = tag_regions(build_channel_mesh(10, 6, 2.0, 1.0), (0.4, 0.0, 1.6, 0.5), [(0.8, 0.0, 1.2, 0.5)])
    img = output.design_image(m, m.design_elements, np.zeros(m.design_elements.size))
    assert img.shape == (3, 6)
    assert (img == 0).sum() == 6 and np.all(img[:, 2:4] == 0)


def test_vtk_and_csv(tmp_path):
    m = build_channel_mesh(3, 2, 2.0, 1.0)
    x, y = m.vcoords.T
    output.write_vtk(tmp_path / "f.vtk", m, point_data={"v": np.column_stack([x, y]), "s": x},
                     cell_data={"rho": np.ones(m.n_elements)})
    text = (tmp_path / "f.vtk").read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0"
    assert f"POINTS {m.n_vnodes} double" in text
    assert f"CELLS 6 60" in text and text.count("28") == 6
    output.write_node_csv(tmp_path / "f.csv", m, {"s": x})
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "x,y,s" and len(rows) == m.n_vnodes + 1


def test_csv_quoting(tmp_path):
    output.write_csv(tmp_path / "q.csv", ["a", "b"], [["x,y", 'say "hi"']])
    assert (tmp_path / "q.csv").read_text().splitlines()[1] == '"x,y","say ""hi"""'


def test_output_dir_manifest(tmp_path):
    out = output.OutputDir(tmp_path / "run")
    out.write_text("a.txt", "hello")
    out.write_text("sub/b.txt", "world")
    man = out.write_manifest().read_text().splitlines()
    assert man[0].startswith("a.txt=") and man[1].startswith("sub/b.txt=")
    assert man[0].split("=")[1] == output.file_hash(tmp_path / "run" / "a.txt")
    with pytest.raises(ValueError):
        out.path("../escape.txt")


def test_design_npz_roundtrip(tmp_path):
    m = build_channel_mesh(4, 2, 2.0, 1.0)
    output.save_design(tmp_path / "d.npz", m, np.array([1, 2]), np.array([0.2, 0.8]))
    nx, ny, e, r = output.load_design(tmp_path / "d.npz")
    assert (nx, ny) == (4, 2) and e.tolist() == [1, 2] and r.tolist() == [0.2, 0.8]


def test_design_fields_roundtrip(tmp_path):
    m = build_channel_mesh(4, 2, 2.0, 1.0)
    output.save_design(tmp_path / "d.npz", m, np.array([1, 2]), np.array([0.2, 0.8]), eroded=np.array([0.1, 0.7]))
    f = output.load_design_fields(tmp_path / "d.npz")
    assert set(f) == {"nominal", "eroded"} and f["eroded"].tolist() == [0.1, 0.7]
