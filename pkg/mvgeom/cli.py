###############################################################################
# Command line entry point
#
#   mvgeom run --config <path> --out <dir> [--trace]
#   mvgeom eval --gen <traj> --est <traj>
#   mvgeom scene --config <path> --out <dir>
#

import argparse
import logging
import os
import sys

from . import __version__
from ._base import LOGGER, ConfigError, MvgeomError
from .camera import write_trajectory
from .config import check_known_keys, get_floats, get_str, load_config
from .denoiser import Conditioning, OracleDenoiser, make_denoiser
from .featurefield import MLPField, PlaneField, load_reference_set
from .gridio import write_grid, write_ppm
from .metrics import camera_pose_accuracy, read_pose_pair
from .pipeline import GroundTruthDepth, LATENT_CHANNELS, PipelineConfig, \
    encode_rgb, run_inference, save_result
from .scheduler import LatentVideo
from .synthscene import intrinsics_from_config, render_ground_truth, \
    scene_from_config, trajectory_from_config, visibility_mask

__all__ = ["main", "build_parser"]

_SCENE_KEYS = ("camera.fx", "camera.fy", "camera.cx", "camera.cy",
               "camera.width", "camera.height", "trajectory.kind",
               "trajectory.frames", "trajectory.step", "trajectory.radius",
               "trajectory.height", "scene.background")
_RUN_KEYS = ("references", "field.kind", "field.weights", "field.plane")
_PREFIXES = ("scene.primitive.",)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mvgeom",
        description="Multi-view consistent sampling on synthetic scenes.")
    parser.add_argument("--version", action="version",
                        version="mvgeom {}".format(__version__))
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log INFO (-v) or DEBUG (-vv) messages")
    commands = parser.add_subparsers(dest="command")
    commands.required = True

    run = commands.add_parser("run", help="sample a consistent video")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--trace", action="store_true",
                     help="also write per-step masks and rendered features")

    evaluate = commands.add_parser("eval", help="camera pose accuracy")
    evaluate.add_argument("--gen", required=True,
                          help="trajectory the frames were generated with")
    evaluate.add_argument("--est", required=True,
                          help="trajectory recovered from the frames")

    scene = commands.add_parser("scene", help="dump ground-truth renders")
    scene.add_argument("--config", required=True)
    scene.add_argument("--out", required=True)
    return parser


# Handler installed by the last main() call, replaced rather than stacked.
_handler = None


def _configure_logging(verbosity):
    global _handler
    if verbosity <= 0:
        return
    if _handler is not None:
        LOGGER.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter(
        "[%(levelname)s:%(name)s] %(message)s"))
    LOGGER.addHandler(_handler)
    LOGGER.setLevel(logging.INFO if verbosity == 1 else logging.DEBUG)


def _resolve(mapping, path):
    return os.path.join(mapping.get("__dir__", ""), path)


def _field_fn(mapping):
    kind = get_str(mapping, "field.kind", "mlp")
    if kind == "plane":
        plane = get_floats(mapping, "field.plane", (0., 0., 1., 1.))
        if len(plane) != 4:
            raise ConfigError("field.plane needs nx,ny,nz,d")
        return PlaneField(plane[:3], plane[3])
    if kind == "mlp":
        weights = get_str(mapping, "field.weights")
        if weights is None:
            raise ConfigError("field.kind = mlp needs field.weights")
        return MLPField.load(_resolve(mapping, weights))
    raise ConfigError("Unknown field.kind {!r}, expected mlp or plane"
                      .format(kind))


def _load_scene(path, extra_keys=()):
    mapping = load_config(path)
    check_known_keys(mapping, _SCENE_KEYS + tuple(extra_keys), _PREFIXES)
    intrinsics = intrinsics_from_config(mapping)
    cameras = trajectory_from_config(mapping, intrinsics)
    return mapping, scene_from_config(mapping), cameras


def _build_denoiser(cfg, scene, cameras, schedule):
    if cfg.denoiser != "oracle":
        if cfg.denoiser == "toynet":
            return make_denoiser("toynet", schedule,
                                 channels=LATENT_CHANNELS, seed=cfg.seed)
        return make_denoiser(cfg.denoiser, schedule)
    targets, masks = [], []
    anchor = cameras[cfg.anchor_index] \
        if cfg.anchor_index < len(cameras) else None
    for n, cam in enumerate(cameras):
        rgb, _ = render_ground_truth(scene, cam, cam.height, cam.width)
        targets.append(encode_rgb(rgb))
        if anchor is None or n == cfg.anchor_index:
            masks.append(None)
        else:
            masks.append(visibility_mask(scene, anchor, cam, cam.height,
                                         cam.width))
    return OracleDenoiser(LatentVideo(targets, cameras), schedule,
                          known_masks=masks)


def _run(args):
    mapping, scene, cameras = _load_scene(
        args.config, PipelineConfig.KEYS + _RUN_KEYS)
    cfg = PipelineConfig.from_mapping(mapping)
    schedule = cfg.schedule()
    refs = field_fn = None
    if "references" in mapping:
        refs = load_reference_set(_resolve(mapping, mapping["references"]))
        field_fn = _field_fn(mapping)
    denoiser = _build_denoiser(cfg, scene, cameras, schedule)
    result = run_inference(cfg, Conditioning(poses=cameras),
                           GroundTruthDepth(scene, cfg.depth_mode),
                           refs=refs, denoiser=denoiser, field_fn=field_fn,
                           trace=args.trace)
    save_result(result, args.out, trace=args.trace)
    write_trajectory(cameras, os.path.join(args.out, "trajectory.txt"))
    return 0


def _eval(args):
    pair = read_pose_pair(args.gen, args.est)
    print("CPA: {:.6f}".format(camera_pose_accuracy(pair)))
    return 0


def _scene(args):
    _, scene, cameras = _load_scene(args.config)
    if not os.path.isdir(args.out):
        os.makedirs(args.out)
    for i, cam in enumerate(cameras):
        rgb, depth = render_ground_truth(scene, cam, cam.height, cam.width)
        write_ppm(rgb, os.path.join(args.out, "gt_{:03d}.ppm".format(i)))
        write_grid(rgb, os.path.join(args.out, "gt_{:03d}.fgrid".format(i)))
        write_grid(depth, os.path.join(args.out,
                                       "depth_{:03d}.fgrid".format(i)))
    write_trajectory(cameras, os.path.join(args.out, "trajectory.txt"))
    return 0


_COMMANDS = {"run": _run, "eval": _eval, "scene": _scene}


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return _COMMANDS[args.command](args)
    except (MvgeomError, IOError) as e:
        sys.stderr.write("mvgeom: error: {}\n".format(e))
        return 2
