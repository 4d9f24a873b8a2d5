import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradon import io
from gradon.geometry import Domain, make_euclidean
from gradon.phantoms import SHEPP_LOGAN, ball, disk, gaussian, make_phantom, shepp_logan
from gradon.transform import Grid, Projector, ScalarField, make_layout


@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_field_round_trip_bit_exact(tmp_path_factory, size, seed):
    g = Grid(Domain(), size)
    vals = np.random.default_rng(seed).standard_normal(g.shape) * 1e3
    f = ScalarField(g, vals)
    p = io.write_field(tmp_path_factory.mktemp("f") / "x.grtf", f)
    back = io.read_field(p)
    assert back.grid == g
    assert back.values.tobytes() == f.values.tobytes()


def test_field_round_trip_3d(tmp_path):
    g = Grid(Domain(n=3), 5)
    f = ScalarField(g, np.arange(125.0).reshape(5, 5, 5) / 7)
    back = io.read_field(io.write_field(tmp_path / "b.grtf", f))
    assert np.array_equal(back.values, f.values)


def test_sinogram_round_trip_and_header(tmp_path):
    g = Grid(Domain(), 16)
    lay = make_layout(make_euclidean(2), g, 12)
    s = Projector(make_euclidean(2), None, g, lay).forward(disk(g))
    p = io.write_sinogram(tmp_path / "s.grts", s)
    raw = p.read_bytes()
    assert raw[:4] == b"GRTS" and raw[4] == 1 and raw[5] == 2
    back = io.read_sinogram(p)
    assert back.layout.same_as(lay)
    assert back.values.tobytes() == s.values.tobytes()


def test_bad_files(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        io.read_field(tmp_path / "x")
    with pytest.raises(ValueError):
        io.read_sinogram(tmp_path / "x")


def test_csv_uses_seventeen_digits(tmp_path):
    p = io.write_csv(tmp_path / "a.csv", ["v"], [(0.1,), (1 / 3,)])
    lines = p.read_text().splitlines()
    assert lines[1] == "0.10000000000000001"
    assert float(lines[2]) == 1 / 3


def test_field_and_sinogram_csv(tmp_path):
    g = Grid(Domain(), 4)
    f = ScalarField(g, np.arange(16.0).reshape(4, 4))
    rows = io.field_to_csv(tmp_path / "f.csv", f).read_text().splitlines()
    assert rows[0] == "x,y,value" and len(rows) == 17


def test_disk_mass():
    g = Grid(Domain(), 128)
    mass = disk(g).values.sum() * g.cell_volume
    assert abs(mass - np.pi) / np.pi < 5e-3
    mass_ss = disk(g, supersample=4).values.sum() * g.cell_volume
    assert abs(mass_ss - np.pi) < abs(mass - np.pi) + 1e-3


def test_gaussian_peak_and_support():
    g = Grid(Domain(), 129)
    f = gaussian(g, sigma=0.3)
    assert f.values.max() == pytest.approx(1.0)
    assert f.vanishes_on_padding()


def test_shepp_logan_range():
    g = Grid(Domain(), 128)
    f = shepp_logan(g)
    assert SHEPP_LOGAN.shape == (10, 6)
    assert f.values.min() >= 0 and f.values.max() <= 1
    assert f.vanishes_on_padding()


def test_phantom_dispatch():
    g3 = Grid(Domain(n=3), 8)
    assert ball(g3, 0.5).values.sum() > 0
    with pytest.raises(ValueError):
        make_phantom("teapot", Grid(Domain(), 8))
    with pytest.raises(ValueError):
        shepp_logan(g3)
