###############################################################################
# Multi-view consistent sampling
#
# DDIM sampling where, during the first t_rep steps, the internal features
# of every non-anchor frame are overwritten by the anchor frame's features
# warped through a depth mesh, and during the first t_comp steps the
# regions the warp cannot see are re-noised from a fresh sample of the
# predicted clean latent.
#
# Per replacement step s (timestep t):
#   1. first denoiser pass, recording the tapped features;
#   2. clean estimate of the anchor, decoded to RGB, handed to the depth
#      provider; depth aligned to scene units when it is relative;
#   3. anchor feature mesh rendered into every other pose;
#   4. replacement pass: rendered features substituted at the tap;
#   5. latent completion inside the unseen regions (s <= t_comp), then a
#      replacement pass on the completed latent;
#   6. DDIM update.
#

import os
import warnings

import numpy as np

from ._base import LOGGER, ConfigError, DepthProviderError, DomainError, \
    MvgeomError
from .config import get_bool, get_float, get_int, get_str
from .denoiser import DenoiserHooks, ToyNetDenoiser, make_denoiser
from .depthmesh import DEFAULT_ZETA, ReprojectionObjective, align_depth, \
    build_anchor_mesh, median_candidates, median_depth, median_depth_search
from .featurefield import render_feature_field, render_feature_map
from .gridio import FeatureGrid, as_array, min_pool, resize_bilinear, \
    write_grid, write_ppm
from .parallel import ordered_map
from .rasterizer import render
from .scheduler import DiffusionSchedule, LatentVideo, ddim_step, \
    ddpm_forward, gaussian_noise_like, predict_x0
from .synthscene import render_ground_truth

__all__ = ["PipelineConfig", "feature_replace", "latent_complete",
           "choose_anchor_frame", "run_inference", "encode_rgb",
           "decode_latent", "GroundTruthDepth", "StepTrace",
           "InferenceResult", "save_result", "LATENT_CHANNELS"]

LATENT_CHANNELS = 4
_LUMA = np.array([0.299, 0.587, 0.114])

DEPTH_MODES = ("metric", "relative")


class PipelineConfig(object):
    """Validated sampling configuration.

    Step thresholds satisfy 0 <= t_comp <= t_rep <= t_total: replacement
    runs on sampling steps 1..t_rep and completion on steps 1..t_comp.
    ``completion_seed`` defaults to ``seed``; the two seeds feed separate
    random streams.
    """

    _INT_KEYS = ("t_total", "t_rep", "t_comp", "anchor_index",
                 "grid_candidates", "seed", "completion_seed", "train_steps",
                 "n_jobs")
    _FLOAT_KEYS = ("zeta", "grid_spread", "beta_start", "beta_end", "d_med")
    _BOOL_KEYS = ("grid_search", "grid_search_every_step")
    _STR_KEYS = ("denoiser", "depth_mode")
    KEYS = _INT_KEYS + _FLOAT_KEYS + _BOOL_KEYS + _STR_KEYS

    def __init__(self, t_total=50, t_rep=35, t_comp=15, anchor_index=0,
                 zeta=DEFAULT_ZETA, grid_search=False,
                 grid_search_every_step=False, grid_candidates=21,
                 grid_spread=0.4, seed=0, completion_seed=None,
                 denoiser="oracle", beta_start=1e-4, beta_end=2e-2,
                 train_steps=1000, depth_mode="metric", d_med=None,
                 n_jobs=1):
        if t_total < 1:
            raise ConfigError("t_total must be >= 1, got {}".format(t_total))
        if not 0 <= t_comp <= t_rep <= t_total:
            raise ConfigError("Need 0 <= t_comp <= t_rep <= t_total, got "
                              "t_comp={}, t_rep={}, t_total={}"
                              .format(t_comp, t_rep, t_total))
        if t_total > train_steps:
            raise ConfigError("t_total={} exceeds train_steps={}"
                              .format(t_total, train_steps))
        if anchor_index < 0:
            raise ConfigError("anchor_index must be >= 0, got {}"
                              .format(anchor_index))
        if not zeta > 0:
            raise ConfigError("zeta must be positive, got {}".format(zeta))
        if grid_candidates < 1 or not 0 <= grid_spread < 1:
            raise ConfigError("Invalid grid search: {} candidates over "
                              "+-{}".format(grid_candidates, grid_spread))
        if depth_mode not in DEPTH_MODES:
            raise ConfigError("depth_mode must be one of {}, got {!r}"
                              .format(", ".join(DEPTH_MODES), depth_mode))
        if d_med is not None and not d_med > 0:
            raise ConfigError("d_med must be positive, got {}".format(d_med))
        self.t_total = int(t_total)
        self.t_rep = int(t_rep)
        self.t_comp = int(t_comp)
        self.anchor_index = int(anchor_index)
        self.zeta = float(zeta)
        self.grid_search = bool(grid_search)
        self.grid_search_every_step = bool(grid_search_every_step)
        self.grid_candidates = int(grid_candidates)
        self.grid_spread = float(grid_spread)
        self.seed = int(seed)
        self.completion_seed = self.seed if completion_seed is None \
            else int(completion_seed)
        self.denoiser = denoiser
        self.beta_start = float(beta_start)
        self.beta_end = float(beta_end)
        self.train_steps = int(train_steps)
        self.depth_mode = depth_mode
        self.d_med = None if d_med is None else float(d_med)
        self.n_jobs = n_jobs
        # Fails early on invalid schedule parameters.
        try:
            self.schedule()
        except DomainError as e:
            raise ConfigError(str(e))

    @classmethod
    def from_mapping(cls, mapping):
        kwargs = {}
        for key in cls._INT_KEYS:
            kwargs[key] = get_int(mapping, key)
        for key in cls._FLOAT_KEYS:
            kwargs[key] = get_float(mapping, key)
        for key in cls._BOOL_KEYS:
            kwargs[key] = get_bool(mapping, key)
        for key in cls._STR_KEYS:
            kwargs[key] = get_str(mapping, key)
        kwargs = dict((k, v) for k, v in kwargs.items() if v is not None)
        return cls(**kwargs)

    def schedule(self):
        return DiffusionSchedule.from_betas(self.beta_start, self.beta_end,
                                            self.train_steps, self.t_total)

    def __repr__(self):
        return "PipelineConfig({})".format(", ".join(
            "{}={!r}".format(k, getattr(self, k)) for k in self.KEYS))


def choose_anchor_frame(cfg, num_frames):
    """The configured anchor, fixed for the whole run."""
    if num_frames < 1:
        raise ConfigError("No frames to choose an anchor from")
    if not 0 <= cfg.anchor_index < num_frames:
        raise ConfigError("anchor_index {} out of range for {} frames"
                          .format(cfg.anchor_index, num_frames))
    return cfg.anchor_index


def encode_rgb(grid):
    """RGB grid -> 4-channel latent (RGB, luminance)."""
    data = as_array(grid)
    if data.shape[2] != 3:
        raise DomainError("encode_rgb needs 3 channels, got {}"
                          .format(data.shape[2]))
    return FeatureGrid(np.concatenate([data, data.dot(_LUMA)[:, :, None]],
                                      axis=2))


def decode_latent(grid):
    """Latent -> RGB: its first three channels."""
    data = as_array(grid)
    if data.shape[2] < 3:
        raise DomainError("decode_latent needs at least 3 channels")
    return FeatureGrid(data[:, :, :3].copy())


def feature_replace(features, rendered, mask):
    """mask * rendered + (1 - mask) * features, mask broadcast over C."""
    f, r, m = as_array(features), as_array(rendered), as_array(mask)
    if f.shape != r.shape or m.shape != f.shape[:2] + (1,):
        raise DomainError("feature_replace shapes differ: {}, {}, mask {}"
                          .format(f.shape, r.shape, m.shape))
    if not np.all((m == 0) | (m == 1)):
        raise DomainError("Replacement mask must be binary")
    return FeatureGrid(np.where(m > 0, r, f))


def latent_complete(x_t, masks, denoiser, schedule, t, seed_sequence,
                    cond=None, hooks=None, anchor_index=None, eps_hat=None):
    """Re-noise the regions outside the visibility masks.

    x0 is predicted from ``eps_hat`` (computed with ``hooks`` when not
    given), forwarded to timestep t with fresh noise and blended as
    x'_t (1 - M) + x_t M. ``masks`` holds one latent-resolution mask per
    frame; None entries and the anchor frame pass through unchanged. Frame
    i draws its noise from child i of ``seed_sequence``.
    """
    if len(masks) != len(x_t):
        raise DomainError("{} masks for {} frames".format(len(masks),
                                                          len(x_t)))
    if eps_hat is None:
        eps_hat = denoiser.predict_noise(x_t, t, cond, hooks)
    x0 = predict_x0(x_t, eps_hat, t, schedule)
    fresh = gaussian_noise_like(x_t, seed_sequence)
    x_new = ddpm_forward(x0, t, fresh, schedule)
    data = x_t.data.copy()
    for i, mask in enumerate(masks):
        if mask is None or i == anchor_index:
            continue
        m = as_array(mask)
        if m.shape != x_t.frame_shape[:2] + (1,):
            raise DomainError("Mask of frame {} is {}, expected {}x{}"
                              .format(i, m.shape[:2], *x_t.frame_shape[:2]))
        data[i] = x_new.data[i] * (1. - m) + x_t.data[i] * m
    return x_t.with_data(data)


###############################################################################
# Depth providers
#

class GroundTruthDepth(object):
    """Depth of a synthetic scene seen from the decoded frame's camera.

    ``mode="metric"`` returns the camera depth itself; ``"relative"``
    returns it multiplied by ``scale``, a stand-in for a monocular
    estimator whose output needs alignment.
    """

    def __init__(self, scene, mode="metric", scale=1.):
        if mode not in DEPTH_MODES:
            raise ConfigError("Unknown depth mode {!r}".format(mode))
        self.scene = scene
        self.mode = mode
        self.scale = float(scale)

    def __call__(self, image, cam):
        image = as_array(image)
        _, depth = render_ground_truth(self.scene, cam, image.shape[0],
                                       image.shape[1])
        if self.mode == "relative":
            return FeatureGrid(depth.data * self.scale)
        return depth


###############################################################################
# Traces and results
#

class StepTrace(object):
    """Artifacts of one replacement step, keyed by frame index."""

    def __init__(self, step, timestep, rendered, masks, latent_masks,
                 completed, latent):
        self.step = step
        self.timestep = timestep
        self.rendered = rendered
        self.masks = masks
        self.latent_masks = latent_masks
        self.completed = completed
        self.latent = latent


class InferenceResult(object):
    """Final latents, decoded frames, per-step traces and the d_med used."""

    def __init__(self, latents, frames, traces, d_med=None):
        self.latents = latents
        self.frames = frames
        self.traces = traces
        self.d_med = d_med


def save_result(result, directory, trace=False):
    if not os.path.isdir(directory):
        os.makedirs(directory)
    for i, frame in enumerate(result.frames):
        write_ppm(frame, os.path.join(directory, "frame_{:03d}.ppm".format(i)))
        write_grid(result.latents.frame(i),
                   os.path.join(directory, "latent_{:03d}.fgrid".format(i)))
    if not trace:
        return
    for step_trace in result.traces:
        step_dir = os.path.join(directory, "trace",
                                "step_{:03d}".format(step_trace.step))
        if not os.path.isdir(step_dir):
            os.makedirs(step_dir)
        for i in sorted(step_trace.masks):
            write_grid(step_trace.masks[i], os.path.join(
                step_dir, "mask_{:03d}.fgrid".format(i)))
            write_grid(step_trace.rendered[i], os.path.join(
                step_dir, "rendered_{:03d}.fgrid".format(i)))
    LOGGER.info("Saved {} frames to {}".format(len(result.frames), directory))


###############################################################################
# Sampling loop
#

class _FrameRenderer(object):
    def __init__(self, mesh, height, width):
        self.mesh = mesh
        self.height = height
        self.width = width

    def __call__(self, cam):
        return render(self.mesh, cam, self.height, self.width)


class _Capture(object):
    """Feature tap recording every frame's grid, replacing nothing."""

    def __init__(self):
        self.grids = {}

    def __call__(self, i, grid):
        self.grids[i] = grid.copy()
        return None


class _Replace(object):
    """Feature tap substituting the rendered anchor features."""

    def __init__(self, renders):
        self.renders = renders

    def __call__(self, i, grid):
        out = self.renders.get(i)
        if out is None:
            return None
        return feature_replace(grid, out.features, out.mask)


class _Sampler(object):

    def __init__(self, cfg, cond, depth_provider, denoiser, schedule, refs,
                 field_fn, search_targets, trace):
        self.cfg = cfg
        self.cond = cond
        self.poses = cond.poses
        self.depth_provider = depth_provider
        self.denoiser = denoiser
        self.schedule = schedule
        self.refs = refs
        self.field_fn = field_fn
        self.search_targets = search_targets
        self.trace = trace
        self.anchor = choose_anchor_frame(cfg, len(self.poses))
        self.d_med = None
        self.traces = []

    # Depth

    def _raw_depth(self, step, image):
        try:
            depth = self.depth_provider(image, self.poses[self.anchor])
            depth = depth if isinstance(depth, FeatureGrid) else \
                FeatureGrid(depth)
        except Exception as e:
            raise DepthProviderError("Depth provider failed at sampling step "
                                     "{}: {}".format(step, e)) from e
        if depth.channels != 1 or not np.all(depth.data > 0):
            raise DepthProviderError("Depth provider returned an invalid map "
                                     "at sampling step {}".format(step))
        return depth

    def _initial_median(self, raw):
        if self.cfg.d_med is not None:
            return self.cfg.d_med
        if self.refs is not None and self.field_fn is not None:
            anchor_cam = self.poses[self.anchor]
            out = render_feature_field(self.refs, anchor_cam, self.field_fn,
                                       anchor_cam.height, anchor_cam.width,
                                       n_jobs=self.cfg.n_jobs)
            if np.any(out.alpha.data > 0.5):
                return median_depth(out.depth, out.alpha)
        LOGGER.warning("No median depth source, using the median of the raw "
                       "depth")
        return float(np.median(raw.data))

    def _field_targets(self, height, width):
        targets = []
        if self.refs is None or self.field_fn is None or \
                self.refs.channels < 3:
            return targets
        for n, cam in enumerate(self.poses):
            if n == self.anchor:
                continue
            out = render_feature_field(self.refs, cam, self.field_fn, height,
                                       width, n_jobs=self.cfg.n_jobs)
            mask = FeatureGrid((out.alpha.data > 0.5).astype(np.float64))
            features = FeatureGrid(out.features.data[:, :, :3])
            targets.append((features, cam, mask))
        return targets

    def _median(self, step, raw, image):
        cfg = self.cfg
        if self.d_med is not None and not cfg.grid_search_every_step:
            return self.d_med
        d_med = self.d_med or self._initial_median(raw)
        if cfg.grid_search:
            targets = self.search_targets
            if targets is None:
                targets = self._field_targets(image.height, image.width)
            if targets:
                objective = ReprojectionObjective(
                    raw, image, self.poses[self.anchor], targets, cfg.zeta)
                candidates = median_candidates(d_med, cfg.grid_candidates,
                                               cfg.grid_spread)
                d_med = median_depth_search(candidates, objective,
                                            fallback=d_med,
                                            n_jobs=cfg.n_jobs).value
            else:
                warnings.warn("Median depth grid search has no target views, "
                              "keeping d_med={}".format(d_med), UserWarning)
        LOGGER.info("Step {}: median depth {:.4f}".format(step, d_med))
        self.d_med = d_med
        return d_med

    def _scene_depth(self, step, image):
        raw = self._raw_depth(step, image)
        if self.cfg.depth_mode == "metric":
            return raw
        return align_depth(raw, self._median(step, raw, image))

    # Steps

    def _render_anchor(self, step, x, t):
        capture = _Capture()
        eps = self.denoiser.predict_noise(x, t, self.cond,
                                          DenoiserHooks(capture))
        if sorted(capture.grids) != list(range(len(x))):
            raise MvgeomError("Denoiser did not route every frame through "
                              "the feature tap")
        x0 = predict_x0(x, eps, t, self.schedule)
        image = decode_latent(x0.frame(self.anchor))
        depth = self._scene_depth(step, image)
        anchor_features = capture.grids[self.anchor]
        hf, wf = anchor_features.height, anchor_features.width
        depth = resize_bilinear(depth, hf, wf)
        mesh = build_anchor_mesh(anchor_features, depth,
                                 self.poses[self.anchor], self.cfg.zeta)
        if mesh.triangle_count == 0:
            message = ("Anchor mesh is empty after pruning at sampling step "
                       "{}, replacement is a no-op".format(step))
            LOGGER.warning(message)
            warnings.warn(message, UserWarning)
        targets = [n for n in range(len(x)) if n != self.anchor]
        outputs = ordered_map(_FrameRenderer(mesh, hf, wf),
                              [self.poses[n] for n in targets],
                              n_jobs=self.cfg.n_jobs)
        return dict(zip(targets, outputs))

    def _completion_seed(self, step):
        return np.random.SeedSequence([self.cfg.completion_seed, 1],
                                      spawn_key=(step,))

    def step(self, step, x):
        cfg, schedule = self.cfg, self.schedule
        t = schedule.timestep_at(step)
        t_prev = schedule.previous_timestep(t)
        if step > cfg.t_rep:
            eps = self.denoiser.predict_noise(x, t, self.cond)
            return ddim_step(x, eps, t, t_prev, schedule)

        renders = self._render_anchor(step, x, t)
        replace = DenoiserHooks(_Replace(renders))
        eps = self.denoiser.predict_noise(x, t, self.cond, replace)
        completed = step <= cfg.t_comp
        latent_masks = {}
        if completed:
            h, w = x.frame_shape[:2]
            latent_masks = dict((n, min_pool(out.mask, h, w))
                                for n, out in renders.items())
            masks = [latent_masks.get(n) for n in range(len(x))]
            x = latent_complete(x, masks, self.denoiser, schedule, t,
                                self._completion_seed(step), self.cond,
                                anchor_index=self.anchor, eps_hat=eps)
            eps = self.denoiser.predict_noise(x, t, self.cond, replace)
        LOGGER.debug("Step {} (t={}): replaced {} frames, mean coverage "
                     "{:.3f}, completion {}".format(
                         step, t, len(renders),
                         np.mean([r.coverage for r in renders.values()])
                         if renders else 1., "on" if completed else "off"))
        x_next = ddim_step(x, eps, t, t_prev, schedule)
        if self.trace:
            self.traces.append(StepTrace(
                step, t,
                dict((n, out.features) for n, out in renders.items()),
                dict((n, out.mask) for n, out in renders.items()),
                latent_masks, completed, x_next))
        return x_next


def _multiview_features(refs, field_fn, poses, height, width, n_jobs):
    return [render_feature_map(refs, cam, field_fn, height, width,
                               n_jobs=n_jobs) for cam in poses]


def run_inference(cfg, cond, depth_provider, refs=None, denoiser=None,
                  frame_shape=None, x_T=None, field_fn=None,
                  search_targets=None, trace=False):
    """Sample N frames with depth-aware replacement and latent completion.

    Args:
        cfg: PipelineConfig.
        cond: Conditioning; its poses give the frame count and cameras.
        depth_provider: callable (decoded RGB FeatureGrid, CameraPose) ->
            depth FeatureGrid at the image resolution.
        refs: optional ReferenceSet. With ``field_fn`` it provides the
            pose-aligned features of a ToyNetDenoiser and the median depth
            of relative depth maps.
        denoiser: Denoiser; built from ``cfg.denoiser`` when omitted (not
            possible for the oracle, which needs targets).
        frame_shape: latent (H, W, C), default the camera grid with
            LATENT_CHANNELS channels. Ignored with ``x_T``.
        x_T: initial noise; drawn from ``cfg.seed`` when omitted.
        field_fn: feature-field head used with ``refs``.
        search_targets: (image, camera, mask) triples for the median
            depth grid search; rendered from ``refs`` when omitted.
        trace: keep a StepTrace per replacement step.

    Returns:
        InferenceResult.
    """
    if cond is None or not cond.poses:
        raise ConfigError("Conditioning must carry the camera poses")
    poses = cond.poses
    choose_anchor_frame(cfg, len(poses))
    schedule = cfg.schedule()
    if denoiser is None:
        if cfg.denoiser == "oracle":
            raise ConfigError("The oracle denoiser needs its target frames; "
                              "build it with make_denoiser")
        denoiser = make_denoiser(cfg.denoiser, schedule)
    if x_T is None:
        if frame_shape is None:
            frame_shape = (poses[0].height, poses[0].width, LATENT_CHANNELS)
        zeros = LatentVideo(np.zeros((len(poses),) + tuple(frame_shape)),
                            poses)
        x_T = gaussian_noise_like(zeros, np.random.SeedSequence(
            [cfg.seed, 0]))
    elif len(x_T) != len(poses):
        raise DomainError("x_T has {} frames for {} poses"
                          .format(len(x_T), len(poses)))
    if isinstance(denoiser, ToyNetDenoiser) and refs is not None and \
            field_fn is not None and denoiser.multiview_features is None:
        h, w = x_T.frame_shape[:2]
        denoiser.multiview_features = _multiview_features(
            refs, field_fn, poses, h, w, cfg.n_jobs)

    LOGGER.info("Sampling {} frames of {} over {} steps (replacement {}, "
                "completion {}, anchor {})".format(
                    len(poses), "x".join(str(s) for s in x_T.frame_shape),
                    cfg.t_total, cfg.t_rep, cfg.t_comp, cfg.anchor_index))
    sampler = _Sampler(cfg, cond, depth_provider, denoiser, schedule, refs,
                       field_fn, search_targets, trace)
    x = x_T
    for step in range(1, cfg.t_total + 1):
        x = sampler.step(step, x)
    frames = [decode_latent(x.frame(i)) for i in range(len(x))]
    return InferenceResult(x, frames, sampler.traces, sampler.d_med)
