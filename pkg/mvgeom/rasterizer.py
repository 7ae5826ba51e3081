###############################################################################
# Forward rasterization of anchor feature meshes
#
# Coverage: a pixel centre is inside a triangle when all three screen-space
# barycentric coordinates are positive. Centres lying on an edge (|lambda| <=
# _EDGE_EPS) belong to the triangle that owns the edge, as if the centre
# were nudged by an infinitesimal offset (+1, +0) in screen space. Two
# triangles sharing an edge never both own it, so shared edges and vertices
# are drawn exactly once.
#
# Interpolation is perspective correct: 1/z and texel/z are interpolated
# linearly in screen space. The z-buffer keeps the smallest camera depth;
# depths closer than _DEPTH_TIE go to the lower triangle index.
#

import os

import numpy as np

from ._base import LOGGER, DomainError
from .camera import project_points
from .gridio import FeatureGrid, write_grid
from .parallel import effective_n_jobs, ordered_map

__all__ = ["RenderOutput", "render", "render_bruteforce", "NEAR_PLANE"]

# Triangles with a vertex at or closer than this camera depth are culled.
NEAR_PLANE = 1e-6

_EDGE_EPS = 1e-9
_AREA_EPS = 1e-12
_DEPTH_TIE = 1e-9
# Slack on candidate bounding boxes, so that edge-owned centres lying a
# rounding error outside of the triangle are still tested.
_BBOX_SLACK = 1e-6


class RenderOutput(object):
    """Rendered features, binary visibility mask and depth buffer.

    Cells with mask 0 hold zero features and zero depth.
    """

    __slots__ = ["features", "mask", "depth_buffer"]

    def __init__(self, features, mask, depth_buffer):
        self.features = features
        self.mask = mask
        self.depth_buffer = depth_buffer

    @property
    def coverage(self):
        """Fraction of covered cells."""
        return float(self.mask.data.mean())

    def save(self, directory, prefix="render"):
        for name, grid in (("features", self.features), ("mask", self.mask),
                           ("depth", self.depth_buffer)):
            write_grid(grid, os.path.join(
                directory, "{}_{}.fgrid".format(prefix, name)))

    def __repr__(self):
        return "RenderOutput({}x{}, coverage={:.3f})".format(
            self.mask.height, self.mask.width, self.coverage)


###############################################################################
# Shared triangle setup
#

class _ScreenTriangles(object):
    """Projected triangles that survive culling."""

    def __init__(self, mesh, cam):
        u, v, z = project_points(mesh.vertices, cam)
        tris = mesh.triangles
        index = np.arange(len(tris))
        if len(tris):
            tz = z[tris]
            front = np.all(tz > NEAR_PLANE, axis=1)
        else:
            front = np.zeros(0, dtype=bool)
        tris, index = tris[front], index[front]
        xy = np.stack([u[tris], v[tris]], axis=-1)
        area2 = _edge_function(xy[:, 1], xy[:, 2], xy[:, 0])
        keep = np.abs(area2) > _AREA_EPS
        culled = len(mesh.triangles) - int(keep.sum())
        if culled:
            LOGGER.debug("Culled {} of {} triangles (near plane or "
                         "degenerate)".format(culled, len(mesh.triangles)))
        self.triangles = tris[keep]
        self.index = index[keep]
        self.xy = xy[keep]
        self.z = z[self.triangles]
        self.area2 = area2[keep]
        self.owned = _owned_edges(self.xy, self.area2)
        self.texels = mesh.texels
        self.vertices = mesh.vertices

    def __len__(self):
        return len(self.triangles)


def _edge_function(a, b, p):
    # Twice the signed area of (a, b, p); arrays of trailing size 2.
    return ((b[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1]) -
            (b[..., 1] - a[..., 1]) * (p[..., 0] - a[..., 0]))


def _owned_edges(xy, area2):
    """(T, 3) flags: does triangle t own the edge opposite vertex k."""
    owned = np.empty((len(xy), 3), dtype=bool)
    for k in range(3):
        a = xy[:, (k + 1) % 3]
        b = xy[:, (k + 2) % 3]
        dx = b[:, 0] - a[:, 0]
        dy = b[:, 1] - a[:, 1]
        side = np.where(dy != 0, -np.sign(dy), np.sign(dx))
        owned[:, k] = side * np.sign(area2) > 0
    return owned


def _covered(bary, owned):
    """Coverage test on (K, 3) barycentrics with (K, 3) ownership flags."""
    on_edge = np.abs(bary) <= _EDGE_EPS
    return np.all((bary > _EDGE_EPS) | (on_edge & owned), axis=1)


def _resolve(pixel, tri, z, n_pixels):
    """Indices of the z-buffer winners among the candidate fragments."""
    if len(pixel) == 0:
        return np.zeros(0, dtype=np.int64)
    zmin = np.full(n_pixels, np.inf)
    np.minimum.at(zmin, pixel, z)
    near = z <= zmin[pixel] + _DEPTH_TIE
    best_tri = np.full(n_pixels, np.iinfo(np.int64).max)
    np.minimum.at(best_tri, pixel[near], tri[near])
    return np.flatnonzero(near & (tri == best_tri[pixel]))


def _assemble(out_h, out_w, channels, pixel, features, depth):
    feat = np.zeros((out_h * out_w, channels))
    mask = np.zeros(out_h * out_w)
    zbuf = np.zeros(out_h * out_w)
    feat[pixel] = features
    mask[pixel] = 1.
    zbuf[pixel] = depth
    return RenderOutput(FeatureGrid(feat.reshape(out_h, out_w, channels)),
                        FeatureGrid(mask.reshape(out_h, out_w, 1)),
                        FeatureGrid(zbuf.reshape(out_h, out_w, 1)))


###############################################################################
# Scanline-free rasterizer: candidate pixels from bounding boxes
#

class _BandRenderer(object):
    """Render the rows [start, stop) of the output; picklable."""

    def __init__(self, screen, out_w):
        self.screen = screen
        self.out_w = out_w

    def __call__(self, band):
        start, stop = band
        screen, out_w = self.screen, self.out_w
        xy = screen.xy
        u0 = np.maximum(np.ceil(xy[:, :, 0].min(axis=1) - _BBOX_SLACK), 0)
        u1 = np.minimum(np.floor(xy[:, :, 0].max(axis=1) + _BBOX_SLACK),
                        out_w - 1)
        v0 = np.maximum(np.ceil(xy[:, :, 1].min(axis=1) - _BBOX_SLACK), start)
        v1 = np.minimum(np.floor(xy[:, :, 1].max(axis=1) + _BBOX_SLACK),
                        stop - 1)
        nu = np.maximum(u1 - u0 + 1, 0).astype(np.int64)
        nv = np.maximum(v1 - v0 + 1, 0).astype(np.int64)
        counts = nu * nv
        total = int(counts.sum())
        channels = screen.texels.shape[1]
        if total == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, np.zeros((0, channels)), np.zeros(0)

        tri = np.repeat(np.arange(len(screen)), counts)
        first = np.repeat(np.cumsum(counts) - counts, counts)
        k = np.arange(total) - first
        col = u0[tri] + k % nu[tri]
        row = v0[tri] + k // nu[tri]
        p = np.stack([col, row], axis=-1)

        txy = xy[tri]
        bary = np.stack([
            _edge_function(txy[:, (j + 1) % 3], txy[:, (j + 2) % 3], p)
            for j in range(3)], axis=1) / screen.area2[tri, None]
        inside = _covered(bary, screen.owned[tri])
        tri, bary = tri[inside], bary[inside]
        pixel = (row[inside] * out_w + col[inside]).astype(np.int64)

        w = bary / screen.z[tri]
        inv_z = w.sum(axis=1)
        depth = 1. / inv_z
        win = _resolve(pixel, screen.index[tri], depth, stop * out_w)
        tri, w, inv_z = tri[win], w[win], inv_z[win]
        texels = screen.texels[screen.triangles[tri]]
        features = np.einsum("kj,kjc->kc", w / inv_z[:, None], texels)
        return pixel[win], features, depth[win]


def _row_bands(out_h, n_bands):
    edges = np.linspace(0, out_h, n_bands + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def render(mesh, cam, out_h, out_w, n_jobs=1):
    """Z-buffered rasterization of ``mesh`` into ``cam``.

    Args:
        mesh: AnchorFeatureMesh.
        cam: target CameraPose; its intrinsics are rescaled to the output
            grid when they describe another resolution.
        out_h, out_w: output grid size.
        n_jobs: the output rows are split in bands evaluated through
            :func:`mvgeom.parallel.ordered_map`; the result does not
            depend on it.

    Returns:
        RenderOutput.
    """
    if out_h < 1 or out_w < 1:
        raise DomainError("Output size must be at least 1x1, got {}x{}"
                          .format(out_h, out_w))
    cam = cam.resized(out_h, out_w)
    screen = _ScreenTriangles(mesh, cam)
    channels = mesh.texture.channels
    if len(screen) == 0:
        return _assemble(out_h, out_w, channels, np.zeros(0, dtype=np.int64),
                         np.zeros((0, channels)), np.zeros(0))

    bands = _row_bands(out_h, min(effective_n_jobs(n_jobs), out_h))
    parts = ordered_map(_BandRenderer(screen, out_w), bands, n_jobs=n_jobs)
    pixel = np.concatenate([p[0] for p in parts])
    features = np.concatenate([p[1] for p in parts])
    depth = np.concatenate([p[2] for p in parts])
    return _assemble(out_h, out_w, channels, pixel, features, depth)


###############################################################################
# Ray casting oracle
#

def render_bruteforce(mesh, cam, out_h, out_w):
    """Same contract as :func:`render`, by casting one ray per pixel.

    Every pixel ray is intersected with every triangle (Moller-Trumbore) in
    world space. The ray direction has unit camera-space depth so the hit
    parameter is the depth itself. Meant for small grids.
    """
    if out_h < 1 or out_w < 1:
        raise DomainError("Output size must be at least 1x1, got {}x{}"
                          .format(out_h, out_w))
    cam = cam.resized(out_h, out_w)
    screen = _ScreenTriangles(mesh, cam)
    channels = mesh.texture.channels
    if len(screen) == 0:
        return _assemble(out_h, out_w, channels, np.zeros(0, dtype=np.int64),
                         np.zeros((0, channels)), np.zeros(0))

    intr = cam.intrinsics
    v, u = np.mgrid[0:out_h, 0:out_w]
    d_cam = np.stack([(u.ravel() - intr.cx) / intr.fx,
                      (v.ravel() - intr.cy) / intr.fy,
                      np.ones(out_h * out_w)], axis=-1)
    directions = d_cam.dot(cam.pose.rotation.T)[:, None, :]
    origin = cam.pose.translation

    corners = screen.vertices[screen.triangles]
    v0 = corners[None, :, 0]
    e1 = corners[None, :, 1] - v0
    e2 = corners[None, :, 2] - v0
    pvec = np.cross(directions, e2)
    det = np.sum(e1 * pvec, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = 1. / det
        tvec = origin - v0
        b1 = np.sum(tvec * pvec, axis=-1) * inv_det
        qvec = np.cross(tvec, e1)
        b2 = np.sum(directions * qvec, axis=-1) * inv_det
        t = np.sum(e2 * qvec, axis=-1) * inv_det
    bary = np.stack([1. - b1 - b2, b1, b2], axis=-1)

    n_pix, n_tri = det.shape
    valid = np.isfinite(t) & (det != 0) & (t > 0)
    owned = np.broadcast_to(screen.owned[None], (n_pix, n_tri, 3))
    hit = valid.copy()
    hit[valid] = _covered(bary[valid], owned[valid])
    pixel, tri = np.nonzero(hit)
    win = _resolve(pixel, screen.index[tri], t[pixel, tri], n_pix)
    pixel, tri = pixel[win], tri[win]
    texels = screen.texels[screen.triangles[tri]]
    features = np.einsum("kj,kjc->kc", bary[pixel, tri], texels)
    return _assemble(out_h, out_w, channels, pixel, features, t[pixel, tri])
