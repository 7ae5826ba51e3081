###############################################################################
# Noise predictors
#
# A denoiser maps (x_t, t, conditioning) to a noise estimate of the same
# shape. Every implementation exposes one internal feature grid per frame
# through DenoiserHooks.feature_tap, called serially in frame order exactly
# once per frame and call. The tap may return a replacement grid of the
# same shape, or None to leave the frame untouched.
#

import numpy as np

from ._base import LOGGER, ConfigError, DomainError
from .attention import AttentionParams, positional_encoding, stt_attention
from .gridio import FeatureGrid, as_array, resize_bilinear

__all__ = ["Conditioning", "DenoiserHooks", "Denoiser", "X0Denoiser",
           "OracleDenoiser", "ZeroDenoiser", "GaussianAnalyticDenoiser",
           "ToyNetDenoiser", "make_denoiser", "DENOISERS"]


class Conditioning(object):
    """Opaque condition vector plus the camera poses of the frames."""

    __slots__ = ["vector", "poses"]

    def __init__(self, vector=None, poses=None):
        if vector is not None:
            vector = np.asarray(vector, dtype=np.float64).ravel()
            if not np.all(np.isfinite(vector)):
                raise DomainError("Condition vector must be finite")
        self.vector = vector
        self.poses = None if poses is None else list(poses)

    def check(self, num_frames):
        if self.poses is not None and len(self.poses) != num_frames:
            raise DomainError("Conditioning holds {} poses for {} frames"
                              .format(len(self.poses), num_frames))


class DenoiserHooks(object):
    """Callbacks into the denoiser interior.

    ``feature_tap(frame_index, grid)`` receives the tapped FeatureGrid of
    one frame and returns a replacement FeatureGrid or None.
    """

    __slots__ = ["feature_tap"]

    def __init__(self, feature_tap=None):
        self.feature_tap = feature_tap


def _apply_tap(hooks, i, grid):
    """Route one frame's feature grid through the tap; returns the array."""
    if hooks is None or hooks.feature_tap is None:
        return grid, False
    replacement = hooks.feature_tap(i, FeatureGrid(grid))
    if replacement is None:
        return grid, False
    replacement = as_array(replacement)
    if replacement.shape != grid.shape:
        raise DomainError("Tap replacement for frame {} has shape {}, "
                          "expected {}".format(i, replacement.shape,
                                               grid.shape))
    return np.asarray(replacement, dtype=np.float64), True


class Denoiser(object):
    """Base class: ``predict_noise(x_t, t, cond, hooks) -> LatentVideo``."""

    name = None

    def predict_noise(self, x_t, t, cond=None, hooks=None):
        raise NotImplementedError

    def _check_inputs(self, x_t, cond):
        if cond is not None:
            cond.check(len(x_t))


class X0Denoiser(Denoiser):
    """Denoisers that first estimate the clean latent of every frame.

    The tapped feature is the per-frame clean estimate; the noise estimate
    follows from it as (x_t - sqrt(ab) x0) / sqrt(1 - ab). Frames whose tap
    returns None keep the native noise estimate unchanged.
    """

    def __init__(self, schedule):
        self.schedule = schedule

    def estimate_x0(self, x_t, t, cond):
        raise NotImplementedError

    def _noise_from_x0(self, x_t, x0, t):
        ab = self.schedule.alpha_bar_at(t)
        if ab >= 1.:
            # Noise-free level: any estimate is consistent, use zero.
            return np.zeros_like(x_t)
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1. - ab)

    def native_noise(self, x_t, x0, t):
        return self._noise_from_x0(x_t, x0, t)

    def predict_noise(self, x_t, t, cond=None, hooks=None):
        self._check_inputs(x_t, cond)
        x0 = np.asarray(self.estimate_x0(x_t.data, t, cond), dtype=np.float64)
        if x0.shape != x_t.data.shape:
            raise DomainError("Clean estimate has shape {}, expected {}"
                              .format(x0.shape, x_t.data.shape))
        eps = self.native_noise(x_t.data, x0, t)
        if hooks is not None and hooks.feature_tap is not None:
            eps = eps.copy()
            for i in range(len(x_t)):
                frame_x0, replaced = _apply_tap(hooks, i, x0[i])
                if replaced:
                    eps[i] = self._noise_from_x0(x_t.data[i], frame_x0, t)
        return x_t.with_data(eps)


class GaussianAnalyticDenoiser(X0Denoiser):
    """Exact posterior-mean denoiser for data distributed N(mean, std^2).

    With x_t = a x0 + b eps, E[x0 | x_t] = mean + a std^2 / (a^2 std^2 +
    b^2) (x_t - a mean). ``mean`` and ``std`` are scalars or arrays that
    broadcast against one frame.
    """

    name = "gaussian"

    def __init__(self, schedule, mean=0., std=1.):
        super(GaussianAnalyticDenoiser, self).__init__(schedule)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        if np.any(self.std < 0):
            raise DomainError("std must be non-negative")

    def estimate_x0(self, x_t, t, cond):
        ab = self.schedule.alpha_bar_at(t)
        a, b2 = np.sqrt(ab), 1. - ab
        var = self.std ** 2
        denom = a * a * var + b2
        gain = np.where(denom > 0, a * var / np.where(denom > 0, denom, 1.),
                        0.)
        return self.mean + gain * (x_t - a * self.mean)


class OracleDenoiser(X0Denoiser):
    """Knows the clean frames: predicts the exact noise towards them.

    With ``known_masks`` (one (H, W) mask per frame, None for a fully known
    frame) the cells outside the mask defer to ``fallback``'s clean estimate,
    by default a Gaussian matching the targets' mean and std.
    """

    name = "oracle"

    def __init__(self, targets, schedule, known_masks=None, fallback=None):
        super(OracleDenoiser, self).__init__(schedule)
        targets = getattr(targets, "data", targets)
        self.targets = np.asarray(targets, dtype=np.float64)
        if self.targets.ndim != 4:
            raise DomainError("Oracle targets must be (N, H, W, C)")
        if known_masks is not None:
            known_masks = [None if m is None else
                           (as_array(m)[:, :, 0] > 0.5)[:, :, None]
                           for m in known_masks]
            if len(known_masks) != self.targets.shape[0]:
                raise DomainError("{} known masks for {} frames".format(
                    len(known_masks), self.targets.shape[0]))
            if fallback is None:
                fallback = GaussianAnalyticDenoiser(
                    schedule, self.targets.mean(), self.targets.std())
        self.known_masks = known_masks
        self.fallback = fallback

    def estimate_x0(self, x_t, t, cond):
        if x_t.shape != self.targets.shape:
            raise DomainError("Latents {} do not match the oracle targets {}"
                              .format(x_t.shape, self.targets.shape))
        if self.known_masks is None:
            return self.targets
        guess = self.fallback.estimate_x0(x_t, t, cond)
        x0 = self.targets.copy()
        for i, mask in enumerate(self.known_masks):
            if mask is not None:
                x0[i] = np.where(mask, self.targets[i], guess[i])
        return x0


class ZeroDenoiser(X0Denoiser):
    """Predicts zero noise; the tapped feature is x_t / sqrt(ab)."""

    name = "zero"

    def estimate_x0(self, x_t, t, cond):
        return x_t / np.sqrt(self.schedule.alpha_bar_at(t))

    def native_noise(self, x_t, x0, t):
        return np.zeros_like(x_t)


###############################################################################
# Toy network with a real interior
#

def _timestep_embedding(t, dim):
    half = np.arange(dim) // 2
    angle = t * 10000. ** (-2. * half / max(dim, 1))
    return np.where(np.arange(dim) % 2 == 0, np.sin(angle), np.cos(angle))


class ToyNetDenoiser(Denoiser):
    """Small fixed-weight network: projection, STT attention, tap, output.

    Per frame the latent is projected to ``hidden`` channels, biased by
    timestep, condition and position encodings, mixed across frames by
    :func:`mvgeom.attention.stt_attention`, optionally enriched with
    pose-aligned multi-view features, then upsampled by ``feature_scale``
    with the same align-corners resize used for the feature cameras.
    The upsampled grid is the tapped feature. It is resized back to the
    latent resolution the same way and projected to the noise estimate.

    ``multiview_features`` is a list of (X_y, alpha) FeatureGrid pairs, one
    per frame, at the latent resolution. X_y enters through an identity
    plus channel-average projection weighted by ``alpha`` and ``gamma``.
    """

    name = "toynet"

    def __init__(self, schedule, channels=4, hidden=8, seed=0, field=64,
                 feature_scale=1, multiview_features=None, gamma=1.0,
                 cond_dim=None):
        if feature_scale < 1 or int(feature_scale) != feature_scale:
            raise DomainError("feature_scale must be a positive integer")
        self.schedule = schedule
        self.channels = int(channels)
        self.hidden = int(hidden)
        self.field = field
        self.feature_scale = int(feature_scale)
        self.multiview_features = multiview_features
        self.gamma = float(gamma)
        rng = np.random.default_rng(seed)
        self.w_in = rng.normal(scale=1. / np.sqrt(channels),
                               size=(channels, hidden))
        self.w_time = rng.normal(scale=0.1, size=(hidden, hidden))
        self.w_cond = None
        if cond_dim:
            self.w_cond = rng.normal(scale=0.1, size=(cond_dim, hidden))
        self.w_out = rng.normal(scale=1. / np.sqrt(hidden),
                                size=(hidden, channels))
        self.attention = AttentionParams.random(hidden, seed=rng.integers(
            2 ** 31), pe_scale=0.)

    def _multiview_term(self, i, h, w):
        x_y, alpha = self.multiview_features[i]
        x_y, alpha = as_array(x_y), as_array(alpha)
        if x_y.shape[:2] != (h, w) or alpha.shape[:2] != (h, w):
            raise DomainError("Multi-view features of frame {} are {}x{}, "
                              "expected {}x{}".format(i, x_y.shape[0],
                                                      x_y.shape[1], h, w))
        proj = np.zeros((h, w, self.hidden))
        c = min(self.hidden, x_y.shape[2])
        proj[:, :, :c] = x_y[:, :, :c]
        proj += x_y.mean(axis=2, keepdims=True)
        return self.gamma * alpha[:, :, :1] * proj

    def predict_noise(self, x_t, t, cond=None, hooks=None):
        self._check_inputs(x_t, cond)
        n, h, w, c = x_t.data.shape
        if c != self.channels:
            raise DomainError("ToyNet expects {} channels, got {}"
                              .format(self.channels, c))
        hid = x_t.data.dot(self.w_in)
        hid += _timestep_embedding(max(t, 0), self.hidden).dot(self.w_time)
        if self.w_cond is not None and cond is not None and \
                cond.vector is not None:
            hid += cond.vector.dot(self.w_cond)
        hid += positional_encoding(n, h, w, self.hidden)
        hid = hid + stt_attention(hid, self.field, self.attention)
        if self.multiview_features is not None:
            if len(self.multiview_features) != n:
                raise DomainError("{} multi-view features for {} frames"
                                  .format(len(self.multiview_features), n))
            for i in range(n):
                hid[i] += self._multiview_term(i, h, w)

        s = self.feature_scale
        out = np.empty_like(hid)
        for i in range(n):
            grid = resize_bilinear(hid[i], h * s, w * s).data
            grid, _ = _apply_tap(hooks, i, grid)
            out[i] = resize_bilinear(grid, h, w).data
        return x_t.with_data(np.tanh(out.dot(self.w_out)))


DENOISERS = ("oracle", "zero", "gaussian", "toynet")


def make_denoiser(name, schedule, **kwargs):
    """Build a denoiser by configuration name."""
    LOGGER.debug("Building {!r} denoiser".format(name))
    if name == "oracle":
        return OracleDenoiser(schedule=schedule, **kwargs)
    if name == "zero":
        return ZeroDenoiser(schedule)
    if name == "gaussian":
        return GaussianAnalyticDenoiser(schedule, **kwargs)
    if name == "toynet":
        return ToyNetDenoiser(schedule, **kwargs)
    raise ConfigError("Unknown denoiser {!r}, expected one of {}"
                      .format(name, ", ".join(DENOISERS)))
