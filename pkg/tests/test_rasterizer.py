import os

import numpy as np
import pytest

from mvgeom.camera import CameraPose, Intrinsics, RigidPose
from mvgeom.depthmesh import AnchorFeatureMesh, build_anchor_mesh
from mvgeom.gridio import FeatureGrid, read_grid
from mvgeom.metrics import masked_reprojection_error
from mvgeom.rasterizer import render, render_bruteforce
from mvgeom.synthscene import (Box, Plane, SceneSpec, Texture,
                               render_ground_truth, visibility_mask)

from .utils import make_camera, random_mesh, random_rotation

RENDERERS = [render, render_bruteforce]


def _mesh(vertices, triangles, texels):
    texels = np.asarray(texels, dtype=float)
    return AnchorFeatureMesh(vertices, triangles,
                             texels.reshape(1, len(texels), -1), None)


@pytest.mark.parametrize("renderer", RENDERERS)
def test_empty_mesh_gives_empty_mask(renderer):
    mesh = _mesh(np.zeros((3, 3)) + [0, 0, 1], np.zeros((0, 3)),
                 np.ones((3, 2)))
    out = renderer(mesh, make_camera(size=8), 8, 8)
    assert out.mask.shape == (8, 8, 1) and out.features.shape == (8, 8, 2)
    assert not out.mask.data.any() and not out.features.data.any()


@pytest.mark.parametrize("renderer", RENDERERS)
def test_triangle_behind_camera(renderer):
    vertices = [[-1, -1, -1], [1, -1, -1], [0, 1, -1]]
    out = renderer(_mesh(vertices, [[0, 1, 2]], np.ones((3, 1))),
                   make_camera(size=8), 8, 8)
    assert not out.mask.data.any()


@pytest.mark.parametrize("renderer", RENDERERS)
def test_triangle_crossing_near_plane_is_culled(renderer):
    vertices = [[-1, -1, 1], [1, -1, 1], [0, 1, -0.5]]
    out = renderer(_mesh(vertices, [[0, 1, 2]], np.ones((3, 1))),
                   make_camera(size=8), 8, 8)
    assert not out.mask.data.any()


@pytest.mark.parametrize("renderer", RENDERERS)
def test_nearest_triangle_wins(renderer):
    big = [[-5, -5], [5, -5], [0, 5]]
    vertices = [p + [z] for z in (2., 1.) for p in big]
    # The far triangle comes first so the index tie-break cannot help.
    texels = [[0.]] * 3 + [[1.]] * 3
    out = renderer(_mesh(vertices, [[0, 1, 2], [3, 4, 5]], texels),
                   make_camera(size=8, focal=4.), 8, 8)
    covered = out.mask.data[:, :, 0] > 0
    assert covered[3:5, 3:5].all()
    np.testing.assert_allclose(out.features.data[covered], 1.)
    np.testing.assert_allclose(out.depth_buffer.data[covered], 1.)


@pytest.mark.parametrize("renderer", RENDERERS)
def test_axis_aligned_square(renderer):
    cam = CameraPose(Intrinsics(10., 10., 7.5, 7.5, 16, 16),
                     RigidPose.identity())
    x0, x1, y0, y1 = -0.33, 0.27, -0.21, 0.38
    vertices = [[x0, y0, 1.], [x1, y0, 1.], [x0, y1, 1.], [x1, y1, 1.]]
    out = renderer(_mesh(vertices, [[0, 2, 1], [1, 2, 3]], np.ones((4, 1))),
                   cam, 16, 16)
    # Corners project to u in [4.2, 10.2] and v in [5.4, 11.3].
    expected = np.zeros((16, 16))
    expected[6:12, 5:11] = 1.
    np.testing.assert_array_equal(out.mask.data[:, :, 0], expected)


def test_shared_edges_are_drawn_once():
    # A fan of triangles around a vertex sitting on a pixel centre: every
    # pixel centre of the fan is covered exactly once.
    cam = make_camera(size=9, focal=4.)
    center = [0., 0., 1.]
    ring = [[np.cos(a) * 2., np.sin(a) * 2., 1.]
            for a in np.linspace(0, 2 * np.pi, 7)[:-1]]
    vertices = np.array([center] + ring)
    triangles = [[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)]
    texels = np.zeros((7, 1))
    coverage = np.zeros((9, 9))
    for t in range(6):
        one = _mesh(vertices, [triangles[t]], texels)
        coverage += render(one, cam, 9, 9).mask.data[:, :, 0]
    both = render(_mesh(vertices, triangles, texels), cam, 9, 9)
    assert coverage.max() == 1.
    np.testing.assert_array_equal(coverage, both.mask.data[:, :, 0])
    assert coverage[4, 4] == 1.


@pytest.mark.parametrize("seed", range(100))
def test_render_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    size = int(rng.integers(4, 33))
    cam = make_camera(size=size, focal=size * 1.2,
                      rotation=random_rotation(seed, max_angle=0.3),
                      translation=rng.normal(scale=0.2, size=3))
    mesh = random_mesh(seed, int(rng.integers(1, 201)), cam=cam)
    fast = render(mesh, cam, size, size)
    slow = render_bruteforce(mesh, cam, size, size)
    np.testing.assert_array_equal(fast.mask.data, slow.mask.data)
    np.testing.assert_allclose(fast.features.data, slow.features.data,
                               rtol=0, atol=1e-5)
    np.testing.assert_allclose(fast.depth_buffer.data, slow.depth_buffer.data,
                               rtol=1e-7)


def test_self_reprojection_reproduces_texture():
    scene = SceneSpec([Plane(3., texture=Texture("noise", seed=3))])
    cam = make_camera(size=24, rotation=random_rotation(5, max_angle=0.2))
    image, depth = render_ground_truth(scene, cam, 24, 24)
    mesh = build_anchor_mesh(image, depth, cam)
    out = render(mesh, cam, 24, 24)
    covered = out.mask.data[:, :, 0] > 0
    assert covered[1:-1, 1:-1].all()
    np.testing.assert_allclose(out.features.data[covered],
                               image.data[covered], atol=1e-5)
    np.testing.assert_allclose(out.depth_buffer.data[covered],
                               depth.data[covered], rtol=1e-9)


def test_render_resizes_target_camera():
    mesh = random_mesh(1, 50, cam=make_camera(size=32))
    full = render(mesh, make_camera(size=32), 32, 32)
    assert render(mesh, make_camera(size=32), 16, 16).mask.shape == \
        (16, 16, 1)
    assert full.coverage > 0


@pytest.mark.parallel
@pytest.mark.timeout(120)
def test_render_does_not_depend_on_n_jobs():
    cam = make_camera(size=32)
    mesh = random_mesh(7, 200, cam=cam)
    one = render(mesh, cam, 32, 32)
    two = render(mesh, cam, 32, 32, n_jobs=2)
    np.testing.assert_array_equal(one.mask.data, two.mask.data)
    np.testing.assert_array_equal(one.features.data, two.features.data)


def test_render_output_save(tmpdir):
    out = render(random_mesh(2, 20, channels=4), make_camera(), 32, 32)
    out.save(str(tmpdir), prefix="frame_001")
    for name in ("features", "mask", "depth"):
        path = os.path.join(str(tmpdir), "frame_001_{}.fgrid".format(name))
        assert os.path.exists(path)
    mask = read_grid(os.path.join(str(tmpdir), "frame_001_mask.fgrid"))
    assert mask == FeatureGrid(out.mask.data.astype(np.float32))


@pytest.mark.parametrize("seed", range(20))
def test_warp_matches_ground_truth_and_visibility(seed):
    # A textured box in front of a textured wall, re-rendered from a
    # translated camera through the mesh lifted from the exact depth.
    rng = np.random.default_rng(seed)
    texture = Texture("gradient", seed=seed, scale=10.)
    front = rng.uniform(1.5, 2.5)
    half = rng.uniform(0.2, 0.5)
    cx, cy = rng.uniform(-0.3, 0.3, size=2)
    scene = SceneSpec([
        Plane(rng.uniform(3.5, 5.), texture=texture),
        Box([cx - half, cy - half, front], [cx + half, cy + half, front + .5],
            texture=texture)])
    source = make_camera(size=32)
    target = make_camera(size=32, translation=np.append(
        rng.uniform(-0.25, 0.25, size=2), 0.))
    image, depth = render_ground_truth(scene, source, 32, 32)
    truth, _ = render_ground_truth(scene, target, 32, 32)
    visible = visibility_mask(scene, source, target, 32, 32).data[:, :, 0]

    out = render(build_anchor_mesh(image, depth, source), target, 32, 32)
    covered = out.mask.data[:, :, 0] > 0
    assert covered.sum() > 300
    assert not (covered & (visible == 0)).any()
    error = masked_reprojection_error(out.features, truth, out.mask)
    assert error.applicable and error.mse < 1e-3
