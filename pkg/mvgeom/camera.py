###############################################################################
# Pinhole cameras and rigid poses
#
# Extrinsics follow the camera-to-world convention P = R.P_c + T: the
# translation is the camera centre in world coordinates and the columns of
# R are the camera axes expressed in the world frame. Many codebases store
# world-to-camera matrices instead; convert with RigidPose.inverse().
#
# Pixel centres sit at integer coordinates, (u, v) in [0, W-1] x [0, H-1];
# u runs along the columns and v along the rows.
#

import numpy as np

from ._base import LOGGER, DomainError, BehindCameraError, FormatError

__all__ = ["Intrinsics", "RigidPose", "CameraPose", "unproject", "project",
           "project_points", "unproject_grid", "pixel_grid", "pixel_rays",
           "read_trajectory", "write_trajectory", "MISSING", "FAILED"]

# Orthonormality tolerance of RigidPose rotations.
_ROTATION_TOL = 1e-9

# Rotations read from text files are re-orthonormalised within this bound.
_TEXT_ROTATION_TOL = 1e-6

# Sentinel lines of trajectory files.
MISSING = "missing"
FAILED = "failed"


class Intrinsics(object):
    """Pinhole intrinsics of a ``width`` x ``height`` pixel grid."""

    __slots__ = ["fx", "fy", "cx", "cy", "width", "height"]

    def __init__(self, fx, fy, cx, cy, width, height):
        fx, fy, cx, cy = float(fx), float(fy), float(cx), float(cy)
        width, height = int(width), int(height)
        if not (fx > 0 and fy > 0):
            raise DomainError("Focal lengths must be positive, got fx={}, "
                              "fy={}".format(fx, fy))
        if width < 1 or height < 1:
            raise DomainError("Image size must be at least 1x1, got {}x{}"
                              .format(width, height))
        if not (0 <= cx < width and 0 <= cy < height):
            raise DomainError("Principal point ({}, {}) outside of a {}x{} "
                              "image".format(cx, cy, width, height))
        self.fx, self.fy, self.cx, self.cy = fx, fy, cx, cy
        self.width, self.height = width, height

    @classmethod
    def centered(cls, focal, width, height):
        """Square pixels with the principal point at the grid centre."""
        return cls(focal, focal, (width - 1) / 2., (height - 1) / 2.,
                   width, height)

    @property
    def matrix(self):
        return np.array([[self.fx, 0., self.cx],
                         [0., self.fy, self.cy],
                         [0., 0., 1.]])

    @property
    def inverse_matrix(self):
        return np.array([[1. / self.fx, 0., -self.cx / self.fx],
                         [0., 1. / self.fy, -self.cy / self.fy],
                         [0., 0., 1.]])

    def resized(self, height, width):
        """Intrinsics of the same camera sampled on a height x width grid.

        Uses the align-corners mapping u' = u (W' - 1) / (W - 1) of
        :func:`mvgeom.gridio.resize_bilinear`, so a resized grid and the
        resized intrinsics describe the same rays.
        """
        if height == self.height and width == self.width:
            return self
        sx = _axis_scale(self.width, width)
        sy = _axis_scale(self.height, height)
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx,
                          self.cy * sy, width, height)

    def __eq__(self, other):
        return (isinstance(other, Intrinsics) and
                all(getattr(self, k) == getattr(other, k)
                    for k in self.__slots__))

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return ("Intrinsics(fx={}, fy={}, cx={}, cy={}, width={}, height={})"
                .format(self.fx, self.fy, self.cx, self.cy, self.width,
                        self.height))


def _axis_scale(size, new_size):
    if size == 1 or new_size == 1:
        return float(new_size) / size
    return (new_size - 1.) / (size - 1.)


def _check_rotation(rotation, tol=_ROTATION_TOL):
    rotation = np.array(rotation, dtype=np.float64)
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise DomainError("Rotation must be a finite 3x3 matrix, got shape {}"
                          .format(rotation.shape))
    err = np.abs(rotation.T.dot(rotation) - np.eye(3)).max()
    if err > tol:
        raise DomainError("Rotation is not orthonormal (max |R^T R - I| = "
                          "{:.3e})".format(err))
    if np.linalg.det(rotation) < 0:
        raise DomainError("Rotation has determinant -1 (reflection)")
    return rotation


def nearest_rotation(matrix):
    """Project a 3x3 matrix onto SO(3) with an SVD."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    d = np.sign(np.linalg.det(u.dot(vt)))
    return u.dot(np.diag([1., 1., d])).dot(vt)


class RigidPose(object):
    """Camera-to-world rigid transform: world = rotation . cam + translation.
    """

    __slots__ = ["rotation", "translation"]

    def __init__(self, rotation, translation):
        rotation = _check_rotation(rotation)
        translation = np.array(translation, dtype=np.float64).reshape(-1)
        if translation.shape != (3,) or not np.all(np.isfinite(translation)):
            raise DomainError("Translation must be a finite 3-vector")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise DomainError("Expected a 4x4 matrix, got shape {}"
                              .format(matrix.shape))
        return cls(matrix[:3, :3], matrix[:3, 3])

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def center(self):
        return self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidPose(rt, -rt.dot(self.translation))

    def compose(self, other):
        """Return self o other (apply ``other`` first)."""
        return RigidPose(self.rotation.dot(other.rotation),
                         self.rotation.dot(other.translation) +
                         self.translation)

    def transform(self, points):
        """Map (..., 3) camera-frame points to the world frame."""
        points = np.asarray(points, dtype=np.float64)
        return points.dot(self.rotation.T) + self.translation

    def inverse_transform(self, points):
        """Map (..., 3) world points to the camera frame."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation).dot(self.rotation)

    def __repr__(self):
        return "RigidPose(rotation={}, translation={})".format(
            self.rotation.tolist(), self.translation.tolist())


class CameraPose(object):
    """Intrinsics plus camera-to-world extrinsics of one frame."""

    __slots__ = ["intrinsics", "pose"]

    def __init__(self, intrinsics, pose):
        if not isinstance(intrinsics, Intrinsics):
            raise DomainError("intrinsics must be an Intrinsics instance")
        if not isinstance(pose, RigidPose):
            raise DomainError("pose must be a RigidPose instance")
        self.intrinsics = intrinsics
        self.pose = pose

    @property
    def height(self):
        return self.intrinsics.height

    @property
    def width(self):
        return self.intrinsics.width

    def resized(self, height, width):
        return CameraPose(self.intrinsics.resized(height, width), self.pose)

    def __repr__(self):
        return "CameraPose({!r}, {!r})".format(self.intrinsics, self.pose)


def _check_depth(depth):
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(depth > 0):
        raise DomainError("Depth must be strictly positive")
    return depth


def unproject(u, v, depth, cam):
    """World point seen at pixel (u, v) at camera depth ``depth``.

    Returns R (depth K^-1 [u, v, 1]^T) + T. ``u``, ``v`` and ``depth`` may
    be scalars or broadcastable arrays; the result has a trailing axis of 3.
    """
    depth = _check_depth(depth)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    intr = cam.intrinsics
    # Half a pixel of slack around the pixel-centre range.
    if (np.any(u < -0.5) or np.any(u > intr.width - 0.5) or
            np.any(v < -0.5) or np.any(v > intr.height - 0.5)):
        raise DomainError("Pixel coordinates outside of the {}x{} image"
                          .format(intr.width, intr.height))
    x = (u - intr.cx) / intr.fx * depth
    y = (v - intr.cy) / intr.fy * depth
    points_cam = np.stack(np.broadcast_arrays(x, y, depth), axis=-1)
    return cam.pose.transform(points_cam)


def project_points(points, cam):
    """Project (..., 3) world points; returns (u, v, z) arrays.

    No culling happens here: entries with z <= 0 are returned as they are
    (their u, v are meaningless) and callers must mask them out.
    """
    p_cam = cam.pose.inverse_transform(points)
    z = p_cam[..., 2]
    intr = cam.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * p_cam[..., 0] / z + intr.cx
        v = intr.fy * p_cam[..., 1] / z + intr.cy
    return u, v, z


def project(p, cam):
    """Project one world point; returns (u, v, z).

    Raises BehindCameraError when the point is not in front of the camera.
    """
    u, v, z = project_points(np.asarray(p, dtype=np.float64).reshape(3), cam)
    if not z > 0:
        raise BehindCameraError("Point {} is behind the camera (z={})"
                                .format(list(p), float(z)))
    return float(u), float(v), float(z)


def pixel_grid(height, width):
    """Integer pixel centre coordinates (u, v), each of shape (H, W)."""
    v, u = np.mgrid[0:height, 0:width]
    return u.astype(np.float64), v.astype(np.float64)


def unproject_grid(depth, cam):
    """Unproject every cell of an (H, W) depth array; returns (H, W, 3)."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise DomainError("Depth grid {} does not match the {}x{} camera"
                          .format(depth.shape, cam.height, cam.width))
    u, v = pixel_grid(*depth.shape)
    return unproject(u, v, depth, cam)


def pixel_rays(cam, height=None, width=None):
    """World ray origins and directions through every pixel centre.

    Directions are R K^-1 [u, v, 1]^T, scaled so that the ray parameter is
    the camera-space depth. Returns (origins, directions), both (H, W, 3).
    """
    if height is not None:
        cam = cam.resized(height, width)
    u, v = pixel_grid(cam.height, cam.width)
    intr = cam.intrinsics
    d_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy,
                      np.ones_like(u)], axis=-1)
    directions = d_cam.dot(cam.pose.rotation.T)
    origins = np.broadcast_to(cam.pose.translation, directions.shape)
    return origins, directions


###############################################################################
# Trajectory files
#
# One camera per line: fx fy cx cy w h r00 r01 r02 r10 r11 r12 r20 r21 r22
# t0 t1 t2. A line reading "missing" marks a frame without a camera and a
# file holding only "failed" marks a failed reconstruction.
#

def _format_camera(cam):
    intr, pose = cam.intrinsics, cam.pose
    values = [intr.fx, intr.fy, intr.cx, intr.cy]
    text = " ".join("{!r}".format(float(x)) for x in values)
    text += " {} {} ".format(intr.width, intr.height)
    text += " ".join("{!r}".format(float(x))
                     for x in list(pose.rotation.ravel()) +
                     list(pose.translation))
    return text


def _parse_camera(fields, source, lineno):
    if len(fields) != 18:
        raise FormatError("{}:{}: expected 18 values, got {}"
                          .format(source, lineno, len(fields)))
    try:
        values = [float(x) for x in fields]
    except ValueError:
        raise FormatError("{}:{}: non numeric value".format(source, lineno))
    if not np.all(np.isfinite(values)):
        raise FormatError("{}:{}: non finite value".format(source, lineno))
    fx, fy, cx, cy, w, h = values[:6]
    if w != int(w) or h != int(h):
        raise FormatError("{}:{}: image size must be integral"
                          .format(source, lineno))
    rotation = np.array(values[6:15]).reshape(3, 3)
    err = np.abs(rotation.T.dot(rotation) - np.eye(3)).max()
    if err > _TEXT_ROTATION_TOL or np.linalg.det(rotation) < 0:
        raise FormatError("{}:{}: rotation is not a rotation matrix"
                          .format(source, lineno))
    try:
        intrinsics = Intrinsics(fx, fy, cx, cy, int(w), int(h))
    except DomainError as e:
        raise FormatError("{}:{}: {}".format(source, lineno, e))
    return CameraPose(intrinsics,
                      RigidPose(nearest_rotation(rotation), values[15:]))


def read_trajectory(path, allow_missing=False):
    """Read a trajectory file.

    Returns the list of CameraPose, with ``None`` for ``missing`` lines when
    ``allow_missing`` is set. A file reading ``failed`` returns ``None``
    instead of a list (only with ``allow_missing``).
    """
    with open(path, "r") as f:
        lines = [(i, line.strip()) for i, line in enumerate(f, start=1)]
    lines = [(i, line) for i, line in lines
             if line and not line.startswith("#")]
    if allow_missing and len(lines) == 1 and lines[0][1] == FAILED:
        LOGGER.debug("Trajectory {} marks a failed reconstruction"
                     .format(path))
        return None
    cameras = []
    for lineno, line in lines:
        if line == MISSING:
            if not allow_missing:
                raise FormatError("{}:{}: missing camera not allowed here"
                                  .format(path, lineno))
            cameras.append(None)
            continue
        cameras.append(_parse_camera(line.split(), path, lineno))
    LOGGER.debug("Read {} cameras from {}".format(len(cameras), path))
    return cameras


def write_trajectory(cameras, path):
    """Write cameras (``None`` entries become ``missing`` lines)."""
    with open(path, "w") as f:
        for cam in cameras:
            f.write(MISSING if cam is None else _format_camera(cam))
            f.write("\n")
