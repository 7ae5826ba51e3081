###############################################################################
# Pose-aligned feature synthesis from posed reference feature maps
#
# For each target pixel, points are sampled along its ray, projected into
# every reference view and the reference features are sampled bilinearly.
# The per-reference samples are averaged over the views that see the point;
# a field head turns the aggregate into a density and an output feature;
# standard volume-rendering weights composite the samples along the ray.
#

import os

import numpy as np

from ._base import LOGGER, DomainError, FormatError
from .camera import pixel_rays, project_points, read_trajectory, \
    write_trajectory
from .gridio import FeatureGrid, as_array, bilinear_sample, read_grid, \
    write_grid
from .parallel import effective_n_jobs, ordered_map

__all__ = ["ReferenceSet", "RayBatch", "FieldRender", "PlaneField",
           "MLPField", "composite_weights", "make_rays", "stratified_depths",
           "render_feature_field", "render_feature_map",
           "save_reference_set", "load_reference_set"]

DEFAULT_NEAR = 0.1
DEFAULT_FAR = 10.
DEFAULT_SAMPLES = 32


class ReferenceSet(object):
    """Posed reference feature maps ``[(FeatureGrid, CameraPose), ...]``."""

    def __init__(self, entries):
        entries = [(g if isinstance(g, FeatureGrid) else FeatureGrid(g), cam)
                   for g, cam in entries]
        if not entries:
            raise DomainError("A reference set needs at least one entry")
        if len(set(g.shape for g, _ in entries)) > 1:
            raise DomainError("Reference feature maps must share their "
                              "dimensions")
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def channels(self):
        return self.entries[0][0].channels

    def shuffled(self, rng):
        order = rng.permutation(len(self.entries))
        return ReferenceSet([self.entries[i] for i in order])


class RayBatch(object):
    """Ray origins and directions plus per-ray sample depths.

    ``directions`` have unit camera-space depth so that ``depths`` are
    camera z values; ``unit_directions`` gives the normalised ones.
    """

    __slots__ = ["origins", "directions", "depths"]

    def __init__(self, origins, directions, depths):
        depths = np.asarray(depths, dtype=np.float64)
        if depths.shape[-1] < 2:
            raise DomainError("Need at least 2 samples per ray")
        self.origins = np.asarray(origins, dtype=np.float64)
        self.directions = np.asarray(directions, dtype=np.float64)
        self.depths = np.broadcast_to(depths, self.origins.shape[:-1] +
                                      depths.shape[-1:])

    @property
    def unit_directions(self):
        return self.directions / np.linalg.norm(self.directions, axis=-1,
                                                keepdims=True)

    def points(self):
        """(..., S, 3) sample positions."""
        return (self.origins[..., None, :] +
                self.depths[..., :, None] * self.directions[..., None, :])

    def deltas(self):
        """(..., S) metric spacing between consecutive samples."""
        gaps = np.diff(self.depths, axis=-1)
        gaps = np.concatenate([gaps, gaps[..., -1:]], axis=-1)
        return gaps * np.linalg.norm(self.directions, axis=-1)[..., None]


class FieldRender(object):
    """Composited features, opacity and expected camera depth."""

    __slots__ = ["features", "alpha", "depth"]

    def __init__(self, features, alpha, depth):
        self.features = features
        self.alpha = alpha
        self.depth = depth


def make_rays(cam, h, w):
    """Rays through every pixel centre of the h x w target grid."""
    return pixel_rays(cam, h, w)


def stratified_depths(near, far, samples, rng=None):
    """Midpoints of ``samples`` equal bins of [near, far].

    With a numpy Generator ``rng`` each sample is jittered uniformly inside
    its bin instead.
    """
    if not 0 <= near < far:
        raise DomainError("Need 0 <= near < far, got {} and {}"
                          .format(near, far))
    if samples < 2:
        raise DomainError("Need at least 2 samples per ray, got {}"
                          .format(samples))
    edges = np.linspace(near, far, samples + 1)
    if rng is None:
        return (edges[:-1] + edges[1:]) / 2.
    return edges[:-1] + rng.uniform(size=samples) * np.diff(edges)


def composite_weights(sigmas, deltas):
    """Volume-rendering weights T_s (1 - exp(-sigma_s delta_s)).

    Works on the last axis. Infinite densities are opaque: the first
    infinite sample on a ray takes all the remaining transmittance.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if np.any(sigmas < 0) or np.any(np.isnan(sigmas)):
        raise DomainError("Densities must be non-negative")
    if np.any(deltas <= 0):
        raise DomainError("Sample spacings must be positive")
    optical = sigmas * deltas
    # exp(-cumsum) handles inf as full absorption
    accumulated = np.cumsum(optical, axis=-1)
    before = np.concatenate([np.zeros_like(accumulated[..., :1]),
                             accumulated[..., :-1]], axis=-1)
    transmittance = np.exp(-before)
    return transmittance * -np.expm1(-optical)


###############################################################################
# Field heads
#

class PlaneField(object):
    """Opaque plane ``n . p = offset``, features passed on.

    By default everything on the far side of the plane (``n . p >= offset``)
    is opaque, so the first ray sample past the plane takes all the weight
    whatever the sample spacing. With a ``thickness`` only the slab
    ``|n . p - offset| <= thickness / 2`` is opaque. The normal points away
    from the cameras.

    An oracle head for scenes whose geometry is a known plane.
    """

    def __init__(self, normal=(0., 0., 1.), offset=1., thickness=None,
                 density=np.inf):
        normal = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        if not norm > 0:
            raise DomainError("Plane normal must be non-zero")
        if thickness is not None and not thickness > 0:
            raise DomainError("Slab thickness must be positive")
        self.normal = normal / norm
        self.offset = float(offset) / norm
        self.thickness = None if thickness is None else float(thickness)
        self.density = float(density)

    def __call__(self, points, aggregated, count):
        signed = points.dot(self.normal) - self.offset
        if self.thickness is None:
            inside = signed >= 0.
        else:
            inside = np.abs(signed) <= self.thickness / 2.
        sigma = np.where(inside, self.density, 0.)
        return sigma, aggregated


class MLPField(object):
    """Fixed two-layer head: relu(f W1 + b1) -> (softplus density, feature).

    Without ``w_feat`` the aggregated feature is passed through unchanged.
    """

    def __init__(self, w1, b1, w_sigma, b_sigma, w_feat=None):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64).ravel()
        self.w_sigma = np.asarray(w_sigma, dtype=np.float64).ravel()
        self.b_sigma = float(b_sigma)
        self.w_feat = None if w_feat is None else \
            np.asarray(w_feat, dtype=np.float64)
        if self.w1.ndim != 2 or self.w1.shape[1] != self.b1.size or \
                self.w_sigma.size != self.b1.size:
            raise DomainError("Inconsistent MLPField weight shapes")
        if self.w_feat is not None and self.w_feat.shape[0] != self.b1.size:
            raise DomainError("Inconsistent MLPField feature head")

    @classmethod
    def random(cls, channels, hidden=16, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(scale=1. / np.sqrt(channels),
                              size=(channels, hidden)),
                   np.zeros(hidden),
                   rng.normal(scale=1. / np.sqrt(hidden), size=hidden), 0.)

    @classmethod
    def load(cls, path):
        try:
            with np.load(path) as weights:
                kwargs = dict((k, weights[k]) for k in weights.files)
        except (IOError, ValueError) as e:
            raise FormatError("{}: cannot read field weights: {}"
                              .format(path, e))
        missing = set(["w1", "b1", "w_sigma", "b_sigma"]) - set(kwargs)
        if missing:
            raise FormatError("{}: missing arrays {}"
                              .format(path, ", ".join(sorted(missing))))
        return cls(**kwargs)

    def save(self, path):
        arrays = dict(w1=self.w1, b1=self.b1, w_sigma=self.w_sigma,
                      b_sigma=np.array(self.b_sigma))
        if self.w_feat is not None:
            arrays["w_feat"] = self.w_feat
        np.savez(path, **arrays)

    def __call__(self, points, aggregated, count):
        hidden = np.maximum(aggregated.dot(self.w1) + self.b1, 0.)
        sigma = np.logaddexp(0., hidden.dot(self.w_sigma) + self.b_sigma)
        if self.w_feat is None:
            return sigma, aggregated
        return sigma, hidden.dot(self.w_feat)


###############################################################################
# Rendering
#

def _aggregate(refs, points):
    """Mean of the reference features over the views that see each point."""
    total = np.zeros(points.shape[:-1] + (refs.channels,))
    count = np.zeros(points.shape[:-1])
    for grid, cam in refs:
        u, v, z = project_points(points, cam.resized(grid.height, grid.width))
        values, inside = bilinear_sample(grid.data, u, v)
        seen = inside & (z > 0)
        total += np.where(seen[..., None], values, 0.)
        count += seen
    aggregated = total / np.maximum(count, 1)[..., None]
    return aggregated, count


class _BandField(object):
    def __init__(self, refs, rays, depths, field_fn):
        self.refs = refs
        self.rays = rays
        self.depths = depths
        self.field_fn = field_fn

    def __call__(self, band):
        start, stop = band
        origins, directions = self.rays
        batch = RayBatch(origins[start:stop], directions[start:stop],
                         self.depths)
        points = batch.points()
        aggregated, count = _aggregate(self.refs, points)
        sigma, feature = self.field_fn(points, aggregated, count)
        sigma = np.where(count > 0, np.broadcast_to(sigma, count.shape), 0.)
        weights = composite_weights(sigma, batch.deltas())
        features = np.einsum("...s,...sc->...c", weights, feature)
        alpha = weights.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            depth = np.where(alpha > 0, np.einsum(
                "...s,...s->...", weights, batch.depths) / alpha, 0.)
        return features, alpha, depth


def render_feature_field(refs, target, field_fn, out_h, out_w,
                         samples=DEFAULT_SAMPLES, near=DEFAULT_NEAR,
                         far=DEFAULT_FAR, n_jobs=1):
    """Volume-render the feature field seen from ``target``.

    Args:
        refs: ReferenceSet.
        target: CameraPose of the view to synthesise.
        field_fn: ``field_fn(points, aggregated, count) -> (sigma,
            feature)`` on (..., S, 3) points, (..., S, C) aggregated
            features and (..., S) counts of the views seeing each point.
            Samples seen by no view get zero density whatever it returns.
        out_h, out_w: output grid.
        samples, near, far: ray sampling, midpoints of equal bins.
        n_jobs: output rows are evaluated through
            :func:`mvgeom.parallel.ordered_map`.

    Returns:
        FieldRender with depth being the expected camera z over the
        composited weights (0 where alpha is 0).
    """
    depths = stratified_depths(near, far, samples)
    rays = make_rays(target, out_h, out_w)
    n_bands = min(effective_n_jobs(n_jobs), out_h)
    edges = np.linspace(0, out_h, n_bands + 1).round().astype(int)
    bands = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    parts = ordered_map(_BandField(refs, rays, depths, field_fn), bands,
                        n_jobs=n_jobs)
    features = np.concatenate([p[0] for p in parts])
    alpha = np.concatenate([p[1] for p in parts])
    depth = np.concatenate([p[2] for p in parts])
    LOGGER.debug("Rendered {}x{} feature field from {} references, mean "
                 "alpha {:.3f}".format(out_h, out_w, len(refs), alpha.mean()))
    return FieldRender(FeatureGrid(features), FeatureGrid(alpha),
                       FeatureGrid(depth))


def render_feature_map(refs, target, field_fn, out_h, out_w,
                       samples=DEFAULT_SAMPLES, near=DEFAULT_NEAR,
                       far=DEFAULT_FAR, n_jobs=1):
    """Pose-aligned feature map X_y and its opacity, as a pair."""
    out = render_feature_field(refs, target, field_fn, out_h, out_w,
                               samples=samples, near=near, far=far,
                               n_jobs=n_jobs)
    return out.features, out.alpha


###############################################################################
# Reference set directories
#

_REF_PATTERN = "ref_{:03d}.fgrid"
_TRAJECTORY = "trajectory.txt"


def save_reference_set(refs, directory):
    if not os.path.isdir(directory):
        os.makedirs(directory)
    for i, (grid, _) in enumerate(refs):
        write_grid(grid, os.path.join(directory, _REF_PATTERN.format(i)))
    write_trajectory([cam for _, cam in refs],
                     os.path.join(directory, _TRAJECTORY))


def load_reference_set(directory):
    cameras = read_trajectory(os.path.join(directory, _TRAJECTORY))
    entries = []
    for i, cam in enumerate(cameras):
        path = os.path.join(directory, _REF_PATTERN.format(i))
        if not os.path.exists(path):
            raise FormatError("{}: missing reference map for camera {}"
                              .format(directory, i))
        grid = read_grid(path)
        entries.append((FeatureGrid(as_array(grid).astype(np.float64)), cam))
    LOGGER.info("Loaded {} reference views from {}".format(len(entries),
                                                          directory))
    return ReferenceSet(entries)
