import os

import numpy as np
from scipy.spatial.transform import Rotation

from mvgeom.camera import CameraPose, Intrinsics, RigidPose
from mvgeom.depthmesh import AnchorFeatureMesh


def make_camera(size=32, focal=40., rotation=None, translation=(0, 0, 0),
                height=None):
    height = size if height is None else height
    rotation = np.eye(3) if rotation is None else rotation
    return CameraPose(Intrinsics.centered(focal, size, height),
                      RigidPose(rotation, translation))


def random_rotation(seed, max_angle=None):
    """Random rotation, limited to ``max_angle`` radians when given."""
    rng = np.random.default_rng(seed)
    if max_angle is None:
        return Rotation.random(random_state=seed).as_matrix()
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0., max_angle)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def random_mesh(seed, n_triangles, channels=3, cam=None, depth=(1., 4.)):
    """Triangles with vertices in the view frustum of ``cam``.

    Vertices are drawn in screen space with some margin outside of the
    image, then lifted to random depths, so some triangles overlap and
    some are clipped by the image border.
    """
    rng = np.random.default_rng(seed)
    cam = make_camera() if cam is None else cam
    intr = cam.intrinsics
    n_vertices = 3 * n_triangles
    u = rng.uniform(-4, intr.width + 3, size=n_vertices)
    v = rng.uniform(-4, intr.height + 3, size=n_vertices)
    z = rng.uniform(depth[0], depth[1], size=n_vertices)
    points = np.stack([(u - intr.cx) / intr.fx * z,
                       (v - intr.cy) / intr.fy * z, z], axis=-1)
    vertices = cam.pose.transform(points)
    triangles = np.arange(n_vertices).reshape(n_triangles, 3)
    texture = rng.uniform(size=(1, n_vertices, channels))
    return AnchorFeatureMesh(vertices, triangles, texture, cam)


def write_text(directory, name, text):
    path = os.path.join(str(directory), name)
    with open(path, "w") as f:
        f.write(text)
    return path
