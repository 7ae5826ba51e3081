import os

import numpy as np
import pytest
from PIL import Image

from mvgeom._base import DomainError, FormatError
from mvgeom.gridio import (FeatureGrid, bilinear_sample, min_pool,
                           read_grid, resize_bilinear, write_grid, write_ppm)


def test_feature_grid_shapes():
    grid = FeatureGrid(np.zeros((3, 4)))
    assert grid.shape == (3, 4, 1)
    assert (grid.height, grid.width, grid.channels) == (3, 4, 1)
    assert FeatureGrid.full(2, 2, 3, 7.).channel(2).tolist() == [[7., 7.],
                                                                 [7., 7.]]
    assert FeatureGrid.zeros(2, 5, 4).same_shape(FeatureGrid.zeros(2, 5, 4))


@pytest.mark.parametrize("data", [np.zeros((0, 2, 1)), np.zeros(4),
                                  np.array([[np.nan]]), np.array([[np.inf]])])
def test_feature_grid_rejects(data):
    with pytest.raises(DomainError):
        FeatureGrid(data)


def test_grid_round_trip_is_bit_exact(tmpdir):
    rng = np.random.default_rng(0)
    grid = FeatureGrid(rng.normal(size=(5, 7, 3)).astype(np.float32))
    path = str(tmpdir.join("g.fgrid"))
    write_grid(grid, path)
    read = read_grid(path)
    assert read.data.dtype == np.float32
    assert read == grid


def test_write_grid_rejects_values_beyond_float32(tmpdir):
    path = str(tmpdir.join("big.fgrid"))
    with pytest.raises(DomainError, match="float32"):
        write_grid(FeatureGrid(np.array([[1., -1e39]])), path)
    assert not tmpdir.join("big.fgrid").check()
    largest = float(np.finfo(np.float32).max)
    write_grid(FeatureGrid(np.array([[largest]])), path)
    assert read_grid(path).data[0, 0, 0] == np.float32(largest)


def test_grid_file_layout(tmpdir):
    path = str(tmpdir.join("one.fgrid"))
    write_grid(FeatureGrid(np.full((1, 1, 1), 0.5)), path)
    with open(path, "rb") as f:
        blob = f.read()
    header = b"FGRID 1\n1 1 1\n"
    assert blob[:len(header)] == header
    assert len(blob) == len(header) + 4
    assert np.frombuffer(blob[len(header):], dtype="<f4")[0] == 0.5


def test_grid_channel_is_fastest(tmpdir):
    data = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    path = str(tmpdir.join("g.fgrid"))
    write_grid(data, path)
    with open(path, "rb") as f:
        payload = f.read()[len(b"FGRID 1\n2 2 3\n"):]
    assert np.frombuffer(payload, dtype="<f4").tolist() == list(range(12))


@pytest.mark.parametrize("blob", [
    b"FGRID 1\n2 2 1\n" + np.zeros(3, dtype="<f4").tobytes(),
    b"FGRID 1\n1 1 1\n" + np.array([np.nan], dtype="<f4").tobytes(),
    b"FGRID 2\n1 1 1\n" + np.zeros(1, dtype="<f4").tobytes(),
    b"FGRID 1\n1 1\n" + np.zeros(1, dtype="<f4").tobytes(),
    b"FGRID 1\n1 a 1\n" + np.zeros(1, dtype="<f4").tobytes(),
    b"FGRID 1\n0 1 1\n",
    b"FGRID 1",
])
def test_read_grid_malformed(tmpdir, blob):
    path = str(tmpdir.join("bad.fgrid"))
    with open(path, "wb") as f:
        f.write(blob)
    with pytest.raises(FormatError):
        read_grid(path)


def test_write_ppm(tmpdir):
    path = str(tmpdir.join("img.ppm"))
    data = np.zeros((2, 3, 3))
    data[0, 0] = [1., 0.5, -1.]
    data[1, 2] = [2., 0., 0.25]
    write_ppm(data, path)
    with open(path, "rb") as f:
        assert f.read(2) == b"P6"
    pixels = np.asarray(Image.open(path))
    assert pixels.shape == (2, 3, 3)
    assert pixels[0, 0].tolist() == [255, 128, 0]
    assert pixels[1, 2].tolist() == [255, 0, 64]

    grey = str(tmpdir.join("grey.ppm"))
    write_ppm(np.full((2, 2, 1), 1.), grey)
    assert np.all(np.asarray(Image.open(grey)) == 255)
    with pytest.raises(DomainError):
        write_ppm(np.zeros((2, 2, 4)), str(tmpdir.join("x.ppm")))
    assert not os.path.exists(str(tmpdir.join("x.ppm")))


@pytest.mark.parametrize("size", [(1, 1), (3, 7), (16, 16), (40, 5)])
def test_resize_constant(size):
    out = resize_bilinear(FeatureGrid.full(4, 6, 2, 7.), *size)
    assert out.shape == size + (2,)
    assert np.all(out.data == 7.)


def test_resize_interpolates_columns():
    grid = FeatureGrid(np.array([[0., 1.], [0., 1.]]))
    out = resize_bilinear(grid, 2, 4)
    np.testing.assert_allclose(out.data[:, :, 0],
                               [[0., 1. / 3, 2. / 3, 1.]] * 2)
    assert np.all(np.diff(out.data[0, :, 0]) > 0)


def test_resize_identity_and_affine():
    rng = np.random.default_rng(1)
    grid = FeatureGrid(rng.normal(size=(5, 6, 2)))
    assert resize_bilinear(grid, 5, 6) == grid

    v, u = np.mgrid[0:9, 0:5]
    ramp = FeatureGrid(2. * u + 3. * v + 1.)
    out = resize_bilinear(ramp, 17, 9)
    vv, uu = np.mgrid[0:17, 0:9]
    np.testing.assert_allclose(out.data[:, :, 0], 2. * uu / 2. +
                               3. * vv / 2. + 1., atol=1e-12)


def test_resize_stays_in_range():
    rng = np.random.default_rng(2)
    grid = FeatureGrid(rng.uniform(size=(7, 7, 1)))
    out = resize_bilinear(grid, 23, 11)
    assert out.data.min() >= grid.data.min()
    assert out.data.max() <= grid.data.max()
    with pytest.raises(DomainError):
        resize_bilinear(grid, 0, 3)


def test_bilinear_sample_inside_flags():
    data = np.arange(6, dtype=np.float64).reshape(2, 3, 1)
    values, inside = bilinear_sample(data, np.array([0.5, 2., 2.5, -0.1]),
                                     np.array([0.5, 1., 0., 0.]))
    np.testing.assert_allclose(values[:2, 0], [2., 5.])
    assert inside.tolist() == [True, True, False, False]


def test_min_pool():
    mask = np.ones((4, 4))
    mask[0, 1] = 0.
    pooled = min_pool(mask, 2, 2)
    assert pooled.data[:, :, 0].tolist() == [[0., 1.], [1., 1.]]
    # Uneven factors cover every source cell.
    uneven = min_pool(mask, 3, 3)
    assert uneven.data[0, 0, 0] == 0. and uneven.data[2, 2, 0] == 1.
    with pytest.raises(DomainError):
        min_pool(mask, 5, 5)
