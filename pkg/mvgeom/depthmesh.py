###############################################################################
# Anchor feature mesh construction
#
# A depth map seen from the anchor camera is lifted to one vertex per
# feature cell, connected by a regular grid of triangles from which the
# triangles straddling depth discontinuities are pruned. The mesh texture
# is the anchor feature grid itself.
#

import warnings

import numpy as np

from ._base import LOGGER, DomainError
from .camera import unproject_grid
from .gridio import FeatureGrid, as_array
from .parallel import ordered_map

__all__ = ["AnchorFeatureMesh", "align_depth", "grid_triangulate",
           "prune_discontinuities", "depth_gradient", "build_anchor_mesh",
           "median_depth", "median_candidates", "median_depth_search",
           "ReprojectionObjective", "SearchResult", "DEFAULT_ZETA"]

# Maximum depth-gradient magnitude of a kept triangle.
DEFAULT_ZETA = 0.05

# Candidate grid of the median-depth search: 21 values over +-40%.
DEFAULT_CANDIDATES = 21
DEFAULT_SPREAD = 0.4


class AnchorFeatureMesh(object):
    """Vertices, triangles and texture lifted from one anchor frame.

    Attributes:
        vertices: (H_F * W_F, 3) world-space points, row-major over cells.
        triangles: (M, 3) int64 vertex indices.
        texture: FeatureGrid (H_F, W_F, C); texel k belongs to vertex k.
        source_pose: CameraPose of the anchor frame at feature resolution.
        pruned_count: number of grid triangles removed by the pruning.
    """

    def __init__(self, vertices, triangles, texture, source_pose,
                 pruned_count=0):
        texture = texture if isinstance(texture, FeatureGrid) else \
            FeatureGrid(texture)
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if vertices.shape[0] != texture.height * texture.width:
            raise DomainError("Texture {}x{} does not match {} vertices"
                              .format(texture.height, texture.width,
                                      vertices.shape[0]))
        if not np.all(np.isfinite(vertices)):
            raise DomainError("Mesh vertices must be finite")
        if triangles.size and (triangles.min() < 0 or
                               triangles.max() >= vertices.shape[0]):
            raise DomainError("Triangle index out of range")
        self.vertices = vertices
        self.triangles = triangles
        self.texture = texture
        self.source_pose = source_pose
        self.pruned_count = pruned_count

    @property
    def vertex_count(self):
        return self.vertices.shape[0]

    @property
    def triangle_count(self):
        return self.triangles.shape[0]

    @property
    def texels(self):
        """(V, C) texture values, one row per vertex."""
        return self.texture.data.reshape(self.vertex_count, -1)

    def __repr__(self):
        return ("AnchorFeatureMesh(vertices={}, triangles={}, pruned={}, "
                "channels={})".format(self.vertex_count, self.triangle_count,
                                      self.pruned_count,
                                      self.texture.channels))


def _depth_array(depth):
    data = as_array(depth)
    if data.shape[2] != 1:
        raise DomainError("Depth maps have one channel, got {}"
                          .format(data.shape[2]))
    return data[:, :, 0].astype(np.float64)


def align_depth(raw, d_med):
    """Scale a relative depth map onto the scene: raw / mean|raw| + d_med.

    The normaliser is the mean absolute value over all cells, which makes
    the result invariant to the overall scale of ``raw``.
    """
    d_med = float(d_med)
    if not d_med > 0:
        raise DomainError("Median depth must be positive, got {}"
                          .format(d_med))
    raw = _depth_array(raw)
    if not np.all(raw > 0):
        raise DomainError("Raw depth must be strictly positive")
    aligned = raw / np.mean(np.abs(raw)) + d_med
    return FeatureGrid(aligned)


def grid_triangulate(h, w):
    """Two triangles per quad of an h x w vertex grid.

    Vertex (i, j) has index i * w + j. Quad (i, j) is split along the
    diagonal from (i, j + 1) to (i + 1, j); both halves share the same
    winding.
    """
    if h < 2 or w < 2:
        raise DomainError("Grid triangulation needs at least 2x2 vertices, "
                          "got {}x{}".format(h, w))
    i, j = np.mgrid[0:h - 1, 0:w - 1]
    a = (i * w + j).ravel()
    b = a + 1
    c = a + w
    d = c + 1
    upper = np.stack([a, c, b], axis=1)
    lower = np.stack([b, c, d], axis=1)
    return np.stack([upper, lower], axis=1).reshape(-1, 3).astype(np.int64)


def depth_gradient(depth):
    """Per-cell depth-gradient magnitude by central differences.

    Neighbour indices are clamped at the borders, so a border cell uses
    its own value in place of the missing neighbour.
    """
    d = np.pad(_depth_array(depth), 1, mode="edge")
    gx = (d[1:-1, 2:] - d[1:-1, :-2]) / 2.
    gy = (d[2:, 1:-1] - d[:-2, 1:-1]) / 2.
    return np.sqrt(gx ** 2 + gy ** 2)


def prune_discontinuities(depth, tris, zeta=DEFAULT_ZETA):
    """Keep the triangles whose vertices all have gradient <= zeta."""
    zeta = float(zeta)
    if not zeta > 0:
        raise DomainError("zeta must be positive, got {}".format(zeta))
    tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    grad = depth_gradient(depth).ravel()
    if not np.all(np.isfinite(grad)):
        raise DomainError("Depth map must be finite")
    keep = grad[tris].max(axis=1) <= zeta
    return tris[keep]


def build_anchor_mesh(feat, depth, cam, zeta=DEFAULT_ZETA):
    """Lift the anchor feature grid to a mesh.

    Args:
        feat: FeatureGrid (H_F, W_F, C) used as texture.
        depth: aligned DepthMap at the same (H_F, W_F) resolution.
        cam: CameraPose of the anchor frame; its intrinsics are resized to
            the feature resolution when they describe another grid.
        zeta: discontinuity threshold of :func:`prune_discontinuities`.
    """
    feat = feat if isinstance(feat, FeatureGrid) else FeatureGrid(feat)
    depth_data = _depth_array(depth)
    if depth_data.shape != (feat.height, feat.width):
        raise DomainError("Feature grid {}x{} and depth map {}x{} differ"
                          .format(feat.height, feat.width,
                                  *depth_data.shape))
    cam = cam.resized(feat.height, feat.width)
    vertices = unproject_grid(depth_data, cam).reshape(-1, 3)
    raw_tris = grid_triangulate(feat.height, feat.width)
    tris = prune_discontinuities(depth, raw_tris, zeta)
    mesh = AnchorFeatureMesh(vertices, tris, feat, cam,
                             pruned_count=len(raw_tris) - len(tris))
    LOGGER.debug("Built {!r}".format(mesh))
    return mesh


###############################################################################
# Median depth and its grid search
#

def median_depth(depth, alpha=None):
    """Depth along the central ray of a scene-unit depth map.

    Falls back to the median over covered cells (alpha > 0.5, or all cells
    without alpha) when the central cell itself is not covered.
    """
    d = _depth_array(depth)
    h, w = d.shape
    covered = np.ones_like(d, dtype=bool)
    if alpha is not None:
        covered = _depth_array(alpha) > 0.5
    ci, cj = (h - 1) // 2, (w - 1) // 2
    if covered[ci, cj] and d[ci, cj] > 0:
        return float(d[ci, cj])
    if not covered.any():
        raise DomainError("No covered cell to take a median depth from")
    LOGGER.debug("Central ray not covered, using the global median depth")
    return float(np.median(d[covered]))


def median_candidates(d_med, count=DEFAULT_CANDIDATES,
                      spread=DEFAULT_SPREAD):
    """``count`` values spaced uniformly over d_med * [1 - spread, 1 + spread].
    """
    if count < 1:
        raise DomainError("Need at least one candidate")
    if not d_med > 0:
        raise DomainError("Median depth must be positive, got {}"
                          .format(d_med))
    if count == 1:
        return np.array([float(d_med)])
    return np.linspace(d_med * (1 - spread), d_med * (1 + spread), count)


class SearchResult(object):
    """Outcome of :func:`median_depth_search`.

    ``status`` is ``"ok"`` or ``"empty_mask"``; in the latter case ``value``
    is the fallback median depth and ``errors`` is empty.
    """

    __slots__ = ["value", "status", "errors"]

    def __init__(self, value, status, errors=()):
        self.value = value
        self.status = status
        self.errors = tuple(errors)

    def __repr__(self):
        return "SearchResult(value={}, status={!r})".format(self.value,
                                                            self.status)


class ReprojectionObjective(object):
    """Error of re-rendering an anchor image with a candidate median depth.

    For a candidate d', the raw anchor depth is aligned with d', lifted to
    a mesh textured with the anchor image and rendered into each target
    camera. The error is the mean squared difference to the target images
    over the cells both inside their foreground masks and covered by the
    render; a candidate covering none of them scores +inf.

    Instances are plain data and pickle, so candidates can be evaluated in
    worker processes.
    """

    def __init__(self, raw_depth, anchor_image, anchor_cam, targets,
                 zeta=DEFAULT_ZETA):
        self.raw_depth = FeatureGrid(as_array(raw_depth))
        self.anchor_image = FeatureGrid(as_array(anchor_image))
        self.anchor_cam = anchor_cam
        # targets: (image, camera, foreground mask) triples
        self.targets = [(as_array(img), cam, as_array(mask)[:, :, 0] > 0.5)
                        for img, cam, mask in targets]
        self.zeta = zeta

    @property
    def mask_is_empty(self):
        return not any(mask.any() for _, _, mask in self.targets)

    def __call__(self, candidate):
        # Deferred import: the rasterizer itself depends on this module.
        from .rasterizer import render

        if self.mask_is_empty:
            return None
        depth = align_depth(self.raw_depth, candidate)
        mesh = build_anchor_mesh(self.anchor_image, depth, self.anchor_cam,
                                 self.zeta)
        total, count = 0., 0
        for image, cam, mask in self.targets:
            out = render(mesh, cam, image.shape[0], image.shape[1])
            sel = mask & (out.mask.data[:, :, 0] > 0.5)
            diff = out.features.data[sel] - image[sel]
            total += float(np.sum(diff ** 2))
            count += diff.size
        if count == 0:
            return np.inf
        return total / count


def median_depth_search(candidates, objective, fallback=None, n_jobs=1):
    """Pick the candidate median depth with the smallest objective value.

    Args:
        candidates: sequence of candidate depths (at least one).
        objective: callable candidate -> error, or ``None`` when the
            foreground mask is empty.
        fallback: value returned when the mask is empty; defaults to the
            middle candidate.
        n_jobs: candidates are evaluated independently through
            :func:`mvgeom.parallel.ordered_map`.

    Ties resolve to the smallest candidate.
    """
    candidates = np.asarray(candidates, dtype=np.float64).ravel()
    if candidates.size < 1:
        raise DomainError("median_depth_search needs at least one candidate")
    if fallback is None:
        fallback = float(candidates[candidates.size // 2])
    errors = ordered_map(objective, list(candidates), n_jobs=n_jobs)
    if any(e is None for e in errors):
        message = ("Empty foreground mask in the median depth search, "
                   "falling back to d_med={}".format(fallback))
        LOGGER.warning(message)
        warnings.warn(message, UserWarning)
        return SearchResult(fallback, "empty_mask")
    errors = np.asarray(errors, dtype=np.float64)
    best = errors.min()
    # Smallest candidate among the minimisers, whatever the input order.
    value = float(candidates[errors == best].min())
    LOGGER.info("Median depth search picked {:.4f} (error {:.3e}) among {} "
                "candidates".format(value, best, candidates.size))
    return SearchResult(value, "ok", errors)
