###############################################################################
# Diffusion schedules, DDPM forward noising and DDIM reverse steps
#
# Timesteps index the training schedule (0 .. num_train_steps - 1). Sampling
# steps count the iterations of the reverse loop from pure noise, 1-based:
# step 1 runs at the noisiest timestep. FINAL_TIMESTEP stands for the clean
# end point with alpha_bar = 1, the target of the last DDIM step.
#

import numpy as np

from ._base import LOGGER, DomainError
from .gridio import FeatureGrid

__all__ = ["DiffusionSchedule", "LatentVideo", "ddpm_forward", "predict_x0",
           "ddim_step", "ddim_sample", "gaussian_noise_like",
           "FINAL_TIMESTEP"]

FINAL_TIMESTEP = -1

_DEFAULT_TRAIN_STEPS = 1000
_DEFAULT_SAMPLER_STEPS = 50
_DEFAULT_BETA_START = 1e-4
_DEFAULT_BETA_END = 2e-2


class DiffusionSchedule(object):
    """Cumulative noise levels alpha_bar and the DDIM sampling timesteps.

    Args:
        alpha_bar: per-timestep cumulative products, strictly decreasing,
            all in (0, 1].
        sampler_steps: number of DDIM steps; the timesteps are spaced
            uniformly, ``[T - k, T - 2k, ..., 0]`` with ``k = T // steps``
            the way latent-diffusion samplers lay them out.
    """

    def __init__(self, alpha_bar, sampler_steps=_DEFAULT_SAMPLER_STEPS):
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64).ravel()
        if alpha_bar.size < 1:
            raise DomainError("Empty schedule")
        if not np.all((alpha_bar > 0) & (alpha_bar <= 1)):
            raise DomainError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(alpha_bar) >= 0):
            raise DomainError("alpha_bar must be strictly decreasing")
        sampler_steps = int(sampler_steps)
        if not 1 <= sampler_steps <= alpha_bar.size:
            raise DomainError("sampler_steps must be in [1, {}], got {}"
                              .format(alpha_bar.size, sampler_steps))
        alpha_bar.setflags(write=False)
        self.alpha_bar = alpha_bar
        ratio = alpha_bar.size // sampler_steps
        self.timesteps = tuple(int(t) for t in
                               np.arange(sampler_steps)[::-1] * ratio)
        LOGGER.debug("Schedule with {} train steps, {} sampler steps, "
                     "alpha_bar in [{:.3e}, {:.6f}]".format(
                         alpha_bar.size, sampler_steps, alpha_bar[-1],
                         alpha_bar[0]))

    @classmethod
    def from_betas(cls, beta_start=_DEFAULT_BETA_START,
                   beta_end=_DEFAULT_BETA_END,
                   train_steps=_DEFAULT_TRAIN_STEPS,
                   sampler_steps=_DEFAULT_SAMPLER_STEPS):
        """Linear beta schedule."""
        if not 0 < beta_start <= beta_end < 1:
            raise DomainError("Need 0 < beta_start <= beta_end < 1, got {} "
                              "and {}".format(beta_start, beta_end))
        betas = np.linspace(beta_start, beta_end, int(train_steps),
                            dtype=np.float64)
        return cls(np.cumprod(1. - betas), sampler_steps)

    @classmethod
    def default(cls):
        return cls.from_betas()

    @classmethod
    def from_alpha_bar(cls, values, sampler_steps=None):
        """Explicit schedule; every timestep is a sampling step by default."""
        values = np.asarray(values, dtype=np.float64).ravel()
        if sampler_steps is None:
            sampler_steps = values.size
        return cls(values, sampler_steps)

    @property
    def num_train_steps(self):
        return self.alpha_bar.size

    @property
    def sampler_steps(self):
        return len(self.timesteps)

    def alpha_bar_at(self, t):
        if t == FINAL_TIMESTEP:
            return 1.
        if not 0 <= t < self.num_train_steps:
            raise DomainError("Timestep {} outside of [0, {})"
                              .format(t, self.num_train_steps))
        return float(self.alpha_bar[t])

    def timestep_at(self, step):
        """Timestep of the 1-based sampling step ``step``."""
        if not 1 <= step <= self.sampler_steps:
            raise DomainError("Sampling step {} outside of [1, {}]"
                              .format(step, self.sampler_steps))
        return self.timesteps[step - 1]

    def previous_timestep(self, t):
        """Timestep the DDIM step from ``t`` lands on."""
        try:
            i = self.timesteps.index(t)
        except ValueError:
            raise DomainError("{} is not a sampling timestep".format(t))
        if i + 1 < len(self.timesteps):
            return self.timesteps[i + 1]
        return FINAL_TIMESTEP

    def __repr__(self):
        return "DiffusionSchedule(train_steps={}, sampler_steps={})".format(
            self.num_train_steps, self.sampler_steps)


class LatentVideo(object):
    """N frames of equal-size latents together with their camera poses.

    ``data`` is an (N, H, W, C) float64 array; it is never modified in
    place by the functions of this package.
    """

    __slots__ = ["data", "poses"]

    def __init__(self, data, poses=None):
        if isinstance(data, (list, tuple)):
            grids = [g.data if isinstance(g, FeatureGrid) else np.asarray(g)
                     for g in data]
            if len(set(g.shape for g in grids)) > 1:
                raise DomainError("Frames must share their dimensions")
            data = np.stack(grids)
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] < 1:
            raise DomainError("LatentVideo needs an (N, H, W, C) array, got "
                              "shape {}".format(data.shape))
        if not np.all(np.isfinite(data)):
            raise DomainError("Latent values must be finite")
        if poses is not None:
            poses = list(poses)
            if len(poses) != data.shape[0]:
                raise DomainError("{} poses for {} frames"
                                  .format(len(poses), data.shape[0]))
        self.data = data
        self.poses = poses

    @property
    def num_frames(self):
        return self.data.shape[0]

    def __len__(self):
        return self.data.shape[0]

    @property
    def frame_shape(self):
        return self.data.shape[1:]

    def frame(self, i):
        return FeatureGrid(self.data[i])

    def frames(self):
        return [self.frame(i) for i in range(len(self))]

    def with_data(self, data):
        return LatentVideo(data, self.poses)

    def replace_frames(self, replacements):
        """Copy with frames replaced, ``replacements`` maps index -> grid."""
        data = self.data.copy()
        for i, grid in replacements.items():
            grid = grid.data if isinstance(grid, FeatureGrid) else grid
            if grid.shape != data.shape[1:]:
                raise DomainError("Replacement frame {} has shape {}, "
                                  "expected {}".format(i, grid.shape,
                                                       data.shape[1:]))
            data[i] = grid
        return self.with_data(data)

    def __repr__(self):
        return "LatentVideo(frames={}, shape={})".format(
            len(self), "x".join(str(s) for s in self.frame_shape))


def _check_same(a, b, what):
    if a.data.shape != b.data.shape:
        raise DomainError("{} shape {} does not match {}"
                          .format(what, b.data.shape, a.data.shape))


def ddpm_forward(x0, t, noise, schedule):
    """x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) noise."""
    _check_same(x0, noise, "Noise")
    ab = schedule.alpha_bar_at(t)
    return x0.with_data(np.sqrt(ab) * x0.data + np.sqrt(1. - ab) * noise.data)


def predict_x0(x_t, eps_hat, t, schedule):
    """x0 = (x_t - sqrt(1 - alpha_bar) eps_hat) / sqrt(alpha_bar)."""
    _check_same(x_t, eps_hat, "Noise estimate")
    ab = schedule.alpha_bar_at(t)
    if not ab > 0:
        raise DomainError("alpha_bar is 0 at timestep {}".format(t))
    return x_t.with_data((x_t.data - np.sqrt(1. - ab) * eps_hat.data) /
                         np.sqrt(ab))


def ddim_step(x_t, eps_hat, t, t_prev, schedule):
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if t == FINAL_TIMESTEP or not (t_prev < t):
        raise DomainError("DDIM steps go from t to an earlier t_prev, got "
                          "t={} and t_prev={}".format(t, t_prev))
    ab_prev = schedule.alpha_bar_at(t_prev)
    x0 = predict_x0(x_t, eps_hat, t, schedule)
    return x_t.with_data(np.sqrt(ab_prev) * x0.data +
                         np.sqrt(1. - ab_prev) * eps_hat.data)


def gaussian_noise_like(latents, seed_sequence):
    """Standard normal noise, frame i drawn from child i of the sequence.

    Frame-indexed children keep each frame's noise independent of how the
    frames are processed.
    """
    if not isinstance(seed_sequence, np.random.SeedSequence):
        seed_sequence = np.random.SeedSequence(seed_sequence)
    children = seed_sequence.spawn(len(latents))
    data = np.stack([np.random.default_rng(child).standard_normal(
        latents.frame_shape) for child in children])
    return latents.with_data(data)


def ddim_sample(x_T, denoiser, schedule, cond, hooks=None, callback=None):
    """Plain DDIM loop over every sampling step.

    ``callback(step, t, x_t)`` is called after each update when given.
    """
    x = x_T
    for step in range(1, schedule.sampler_steps + 1):
        t = schedule.timestep_at(step)
        eps = denoiser.predict_noise(x, t, cond, hooks)
        x = ddim_step(x, eps, t, schedule.previous_timestep(t), schedule)
        if callback is not None:
            callback(step, t, x)
    return x
