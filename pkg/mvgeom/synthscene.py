###############################################################################
# Synthetic posed scenes with exact depth
#
# Scenes are unions of textured primitives in world coordinates: bounded
# fronto-parallel planes, axis-aligned boxes and depth-step walls. Rays are
# intersected analytically; the nearest hit gives the feature (texture at
# the world-space hit point) and the camera-space depth.
#

import numpy as np

from ._base import LOGGER, ConfigError, DomainError
from .camera import CameraPose, Intrinsics, RigidPose, pixel_rays, \
    project_points
from .config import get_float, get_int, get_str, get_floats
from .gridio import FeatureGrid

__all__ = ["Texture", "Plane", "Box", "StepWall", "SceneSpec",
           "trace_rays", "render_ground_truth", "visibility_mask",
           "make_trajectory", "look_at", "scene_from_config",
           "trajectory_from_config", "intrinsics_from_config",
           "FAR_DEPTH", "TRAJECTORY_KINDS"]

# Depth reported for pixels that hit nothing.
FAR_DEPTH = 1000.

# Hits closer than this ray parameter are ignored.
_T_MIN = 1e-9


class Texture(object):
    """Band-limited procedural texture evaluated at world points.

    Kinds:
        gradient: affine in the world coordinates.
        checker: product of sinusoids, a smooth checkerboard of period
            ``scale``.
        noise: sum of four random low-frequency sinusoids.
        constant: ``value`` everywhere.

    All kinds stay within 0.5 +- 0.2 over the unit cube around the origin
    (gradient) or everywhere (the others).
    """

    KINDS = ("gradient", "checker", "noise", "constant")

    def __init__(self, kind="noise", seed=0, scale=1.0, channels=3,
                 value=0.5):
        if kind not in self.KINDS:
            raise ConfigError("Unknown texture {!r}, expected one of {}"
                              .format(kind, ", ".join(self.KINDS)))
        if not scale > 0:
            raise DomainError("Texture scale must be positive")
        self.kind = kind
        self.seed = int(seed)
        self.scale = float(scale)
        self.channels = int(channels)
        self.value = float(value)
        rng = np.random.default_rng(self.seed)
        c = self.channels
        if kind == "gradient":
            self._coef = rng.uniform(-0.1, 0.1, size=(3, c)) / self.scale
        elif kind == "checker":
            self._phase = rng.uniform(0., 2 * np.pi, size=(2, c))
        elif kind == "noise":
            self._freq = rng.normal(size=(4, 3, c)) * np.pi / self.scale
            self._phase = rng.uniform(0., 2 * np.pi, size=(4, c))

    def __call__(self, points):
        p = np.asarray(points, dtype=np.float64)
        if self.kind == "constant":
            return np.full(p.shape[:-1] + (self.channels,), self.value)
        if self.kind == "gradient":
            return 0.5 + p.dot(self._coef)
        if self.kind == "checker":
            w = 2 * np.pi / self.scale
            x = np.sin(w * p[..., 0, None] + self._phase[0])
            y = np.sin(w * (p[..., 1, None] + p[..., 2, None]) +
                       self._phase[1])
            return 0.5 + 0.2 * x * y
        out = np.full(p.shape[:-1] + (self.channels,), 0.5)
        for k in range(4):
            out += 0.05 * np.sin(np.einsum("...i,ic->...c", p,
                                           self._freq[k]) + self._phase[k])
        return out

    def __repr__(self):
        return "Texture({!r}, seed={}, scale={})".format(self.kind, self.seed,
                                                        self.scale)


def _in_range(values, bounds):
    if bounds is None:
        return np.ones(values.shape, dtype=bool)
    lo, hi = bounds
    return (values >= lo) & (values <= hi)


def _plane_hits(origins, directions, axis, offset):
    d = directions[..., axis]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offset - origins[..., axis]) / d
    t = np.where(d != 0, t, np.inf)
    return np.where(t > _T_MIN, t, np.inf)


class Plane(object):
    """Plane z = ``z``, optionally bounded by x and y ranges."""

    def __init__(self, z, x_range=None, y_range=None, texture=None):
        self.z = float(z)
        self.x_range = None if x_range is None else tuple(map(float, x_range))
        self.y_range = None if y_range is None else tuple(map(float, y_range))
        self.texture = texture or Texture()

    def intersect(self, origins, directions):
        """Ray parameter of the hit, inf where the ray misses."""
        t = _plane_hits(origins, directions, 2, self.z)
        with np.errstate(invalid="ignore"):
            p = origins + np.where(np.isfinite(t), t, 0.)[..., None] * \
                directions
        inside = _in_range(p[..., 0], self.x_range) & \
            _in_range(p[..., 1], self.y_range)
        return np.where(inside, t, np.inf)

    def __repr__(self):
        return "Plane(z={}, x_range={}, y_range={})".format(
            self.z, self.x_range, self.y_range)


class Box(object):
    """Axis-aligned box; rays starting inside it see nothing of it."""

    def __init__(self, min_corner, max_corner, texture=None):
        self.min_corner = np.asarray(min_corner, dtype=np.float64)
        self.max_corner = np.asarray(max_corner, dtype=np.float64)
        if self.min_corner.shape != (3,) or \
                np.any(self.min_corner >= self.max_corner):
            raise DomainError("Box corners must satisfy min < max on all "
                              "axes")
        self.texture = texture or Texture()

    def intersect(self, origins, directions):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1. / directions
            t0 = (self.min_corner - origins) * inv
            t1 = (self.max_corner - origins) * inv
        # Rays parallel to a slab: inside it for all t or never.
        parallel = directions == 0
        inside_slab = (origins >= self.min_corner) & \
            (origins <= self.max_corner)
        lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf),
                      np.minimum(t0, t1))
        hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf),
                      np.maximum(t0, t1))
        t_near = lo.max(axis=-1)
        t_far = hi.min(axis=-1)
        hit = (t_near <= t_far) & (t_near > _T_MIN)
        return np.where(hit, t_near, np.inf)

    def __repr__(self):
        return "Box({}, {})".format(self.min_corner.tolist(),
                                    self.max_corner.tolist())


class StepWall(object):
    """Two fronto-parallel half planes joined by a riser.

    z = ``near`` for x < ``split``, z = ``far`` for x >= ``split`` and the
    riser x = ``split`` between the two depths.
    """

    def __init__(self, near, far, split=0., y_range=None, texture=None):
        if not 0 < near < far:
            raise DomainError("StepWall needs 0 < near < far, got {} and {}"
                              .format(near, far))
        self.near = float(near)
        self.far = float(far)
        self.split = float(split)
        self.y_range = None if y_range is None else tuple(map(float, y_range))
        self.texture = texture or Texture()
        self._parts = [Plane(near, (-np.inf, split), y_range),
                       Plane(far, (split, np.inf), y_range)]

    def intersect(self, origins, directions):
        t = np.minimum(self._parts[0].intersect(origins, directions),
                       self._parts[1].intersect(origins, directions))
        t_riser = _plane_hits(origins, directions, 0, self.split)
        with np.errstate(invalid="ignore"):
            p = origins + np.where(np.isfinite(t_riser), t_riser,
                                   0.)[..., None] * directions
        on_riser = (p[..., 2] >= self.near) & (p[..., 2] <= self.far) & \
            _in_range(p[..., 1], self.y_range)
        return np.minimum(t, np.where(on_riser, t_riser, np.inf))

    def __repr__(self):
        return "StepWall(near={}, far={}, split={})".format(
            self.near, self.far, self.split)


class SceneSpec(object):
    """Primitives plus the background feature of empty pixels."""

    def __init__(self, primitives, background=0.):
        primitives = list(primitives)
        if not primitives:
            raise DomainError("A scene needs at least one primitive")
        channels = set(p.texture.channels for p in primitives)
        if len(channels) > 1:
            raise DomainError("All textures must have the same channels")
        self.primitives = primitives
        self.background = float(background)

    @property
    def channels(self):
        return self.primitives[0].texture.channels

    def __repr__(self):
        return "SceneSpec({!r})".format(self.primitives)


def trace_rays(spec, origins, directions):
    """Nearest hit along every ray.

    Returns (t, index, points): the ray parameter (inf on a miss), the
    primitive index (-1 on a miss) and the hit points (NaN on a miss).
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    origins, directions = np.broadcast_arrays(origins, directions)
    ts = np.stack([p.intersect(origins, directions)
                   for p in spec.primitives], axis=-1)
    index = np.argmin(ts, axis=-1)
    t = np.take_along_axis(ts, index[..., None], axis=-1)[..., 0]
    hit = np.isfinite(t)
    index = np.where(hit, index, -1)
    with np.errstate(invalid="ignore"):
        points = origins + np.where(hit, t, np.nan)[..., None] * directions
    return t, index, points


def _shade(spec, index, points):
    features = np.full(index.shape + (spec.channels,), spec.background)
    for k, primitive in enumerate(spec.primitives):
        sel = index == k
        if sel.any():
            features[sel] = primitive.texture(points[sel])
    return features


def render_ground_truth(spec, cam, h, w):
    """Exact features and camera-space depth of every pixel centre.

    Returns (FeatureGrid, depth FeatureGrid); misses get the background
    feature and FAR_DEPTH.
    """
    origins, directions = pixel_rays(cam, h, w)
    # Directions have unit camera-space depth: t is the depth.
    t, index, points = trace_rays(spec, origins, directions)
    features = _shade(spec, index, points)
    depth = np.where(index >= 0, t, FAR_DEPTH)
    return FeatureGrid(features), FeatureGrid(depth)


def visibility_mask(spec, source_cam, target_cam, h, w, tol=1e-6):
    """1 where the surface seen by a target pixel is visible from the source.

    A surface point is visible when it projects inside the source image
    (pixel-centre range) and no primitive lies between it and the source
    camera centre.
    """
    origins, directions = pixel_rays(target_cam, h, w)
    _, index, points = trace_rays(spec, origins, directions)
    hit = index >= 0
    safe = np.where(hit[..., None], points, 0.)
    u, v, z = project_points(safe, source_cam)
    intr = source_cam.intrinsics
    with np.errstate(invalid="ignore"):
        in_view = (z > 0) & (u >= 0) & (u <= intr.width - 1) & \
            (v >= 0) & (v <= intr.height - 1)
    center = source_cam.pose.translation
    # Parameterised so that the surface point sits at t = 1.
    t_block, _, _ = trace_rays(spec, np.broadcast_to(center, safe.shape),
                               safe - center)
    unblocked = t_block >= 1. - tol
    return FeatureGrid((hit & in_view & unblocked).astype(np.float64))


###############################################################################
# Trajectories
#

TRAJECTORY_KINDS = ("orbit", "x-translation", "y-translation", "move-left",
                    "move-right", "move-up", "move-down")

# Aliases: (axis, sign). Image y points down, so "up" is -y.
_TRANSLATIONS = {
    "x-translation": (0, 1.), "move-right": (0, 1.), "move-left": (0, -1.),
    "y-translation": (1, 1.), "move-down": (1, 1.), "move-up": (1, -1.),
}


def look_at(position, target, down=(0., 1., 0.)):
    """Camera-to-world pose at ``position`` looking at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(z)
    if not norm > 0:
        raise DomainError("Camera position and look-at target coincide")
    z = z / norm
    x = np.cross(down, z)
    if not np.linalg.norm(x) > 1e-12:
        raise DomainError("Viewing direction is parallel to the down axis")
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidPose(np.stack([x, y, z], axis=1), position)


def make_trajectory(kind, n, intrinsics, step=0.1, radius=2., height=0.,
                    target=(0., 0., 0.), start=(0., 0., 0.)):
    """Parametric camera path of ``n`` poses sharing ``intrinsics``.

    ``orbit`` places the cameras on a horizontal circle of ``radius``
    around ``target`` (first camera on the -z side) looking at it; the
    translations move by ``step`` per frame with the identity rotation.
    """
    if kind not in TRAJECTORY_KINDS:
        raise ConfigError("Unknown trajectory {!r}, expected one of {}"
                          .format(kind, ", ".join(TRAJECTORY_KINDS)))
    if n < 2:
        raise ConfigError("A trajectory needs at least 2 frames, got {}"
                          .format(n))
    target = np.asarray(target, dtype=np.float64)
    cameras = []
    if kind == "orbit":
        if not radius > 0:
            raise ConfigError("Orbit radius must be positive")
        for i in range(n):
            theta = 2 * np.pi * i / n
            position = target + np.array([radius * np.sin(theta), height,
                                          -radius * np.cos(theta)])
            cameras.append(CameraPose(intrinsics, look_at(position, target)))
    else:
        axis, sign = _TRANSLATIONS[kind]
        offset = np.zeros(3)
        offset[axis] = sign * step
        for i in range(n):
            cameras.append(CameraPose(intrinsics, RigidPose(
                np.eye(3), np.asarray(start, dtype=np.float64) +
                i * offset)))
    LOGGER.debug("Made {} trajectory with {} poses".format(kind, n))
    return cameras


###############################################################################
# Configuration
#

def _parse_fields(description, key):
    tokens = description.split()
    if not tokens:
        raise ConfigError("Empty primitive description for {!r}".format(key))
    fields = {}
    for token in tokens[1:]:
        if "=" not in token:
            raise ConfigError("{!r}: expected name=value, got {!r}"
                              .format(key, token))
        name, value = token.split("=", 1)
        fields[name] = value
    return tokens[0], fields


def _floats(fields, name, key, count=None, default=None):
    if name not in fields:
        if default is None:
            raise ConfigError("{!r}: missing {!r}".format(key, name))
        return default
    values = get_floats(fields, name)
    if count is not None and len(values) != count:
        raise ConfigError("{!r}: {!r} needs {} values".format(key, name,
                                                              count))
    return values


def _texture(fields, key, channels):
    try:
        return Texture(fields.get("texture", "noise"),
                       seed=int(fields.get("seed", 0)),
                       scale=float(fields.get("scale", 1.)),
                       channels=channels,
                       value=float(fields.get("value", 0.5)))
    except ValueError:
        raise ConfigError("{!r}: invalid texture parameters".format(key))


def parse_primitive(description, key="primitive", channels=3):
    """Build a primitive from ``"<kind> name=value ..."``."""
    kind, fields = _parse_fields(description, key)
    texture = _texture(fields, key, channels)
    try:
        if kind == "plane":
            x = _floats(fields, "x", key, 2, default=())
            y = _floats(fields, "y", key, 2, default=())
            return Plane(_floats(fields, "z", key, 1)[0], x or None,
                         y or None, texture)
        if kind == "box":
            return Box(_floats(fields, "min", key, 3),
                       _floats(fields, "max", key, 3), texture)
        if kind == "stepwall":
            y = _floats(fields, "y", key, 2, default=())
            return StepWall(_floats(fields, "near", key, 1)[0],
                            _floats(fields, "far", key, 1)[0],
                            _floats(fields, "split", key, 1, (0.,))[0],
                            y or None, texture)
    except DomainError as e:
        raise ConfigError("{!r}: {}".format(key, e))
    raise ConfigError("{!r}: unknown primitive {!r}".format(key, kind))


def _primitive_index(key, prefix):
    index = key[len(prefix):]
    if not index.isdigit():
        raise ConfigError("{!r}: primitive keys end with an integer index"
                          .format(key))
    return int(index)


def scene_from_config(mapping, channels=3):
    """SceneSpec from the ``scene.primitive.<k>`` keys, in order of k."""
    prefix = "scene.primitive."
    keys = sorted((k for k in mapping if k.startswith(prefix)),
                  key=lambda k: _primitive_index(k, prefix))
    if not keys:
        raise ConfigError("No scene.primitive.<k> key in the configuration")
    primitives = [parse_primitive(mapping[k], k, channels) for k in keys]
    return SceneSpec(primitives,
                     background=get_float(mapping, "scene.background", 0.))


def intrinsics_from_config(mapping):
    width = get_int(mapping, "camera.width", 32)
    height = get_int(mapping, "camera.height", 32)
    fx = get_float(mapping, "camera.fx", 40.)
    fy = get_float(mapping, "camera.fy", fx)
    cx = get_float(mapping, "camera.cx", (width - 1) / 2.)
    cy = get_float(mapping, "camera.cy", (height - 1) / 2.)
    try:
        return Intrinsics(fx, fy, cx, cy, width, height)
    except DomainError as e:
        raise ConfigError("Invalid camera: {}".format(e))


def trajectory_from_config(mapping, intrinsics=None):
    if intrinsics is None:
        intrinsics = intrinsics_from_config(mapping)
    return make_trajectory(
        get_str(mapping, "trajectory.kind", "x-translation"),
        get_int(mapping, "trajectory.frames", 8), intrinsics,
        step=get_float(mapping, "trajectory.step", 0.1),
        radius=get_float(mapping, "trajectory.radius", 2.),
        height=get_float(mapping, "trajectory.height", 0.))
