###############################################################################
# Camera pose accuracy and masked reprojection error
#
# Pose accuracy compares rotations only: per frame the angle between the
# estimated and the generated rotation is turned into a score 1 - angle/pi,
# missing estimates score 0 and a failed reconstruction scores 0 overall.
#

import numpy as np

from ._base import LOGGER, DomainError
from .camera import RigidPose, read_trajectory
from .gridio import as_array

__all__ = ["rotation_angle", "PoseSequencePair", "per_frame_accuracy",
           "camera_pose_accuracy", "MaskedError", "masked_reprojection_error",
           "read_pose_pair"]

_ROTATION_TOL = 1e-6


def _rotation(r):
    if isinstance(r, RigidPose):
        return r.rotation
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise DomainError("Expected a finite 3x3 rotation matrix")
    if np.abs(r.T.dot(r) - np.eye(3)).max() > _ROTATION_TOL or \
            np.linalg.det(r) < 0:
        raise DomainError("Matrix is not a rotation")
    return r


def rotation_angle(ra, rb):
    """Angle in [0, pi] of the relative rotation ra rb^T."""
    ra, rb = _rotation(ra), _rotation(rb)
    cos = (np.trace(ra.dot(rb.T)) - 1.) / 2.
    return float(np.arccos(np.clip(cos, -1., 1.)))


class PoseSequencePair(object):
    """Generated poses and the poses recovered from the generated frames.

    ``estimated`` entries may be None for frames the reconstruction could
    not register. ``reconstruction_failed`` marks a reconstruction that
    produced nothing at all.
    """

    def __init__(self, generated, estimated=None,
                 reconstruction_failed=False):
        self.generated = list(generated)
        self.estimated = None if estimated is None else list(estimated)
        self.reconstruction_failed = bool(reconstruction_failed or
                                          estimated is None)
        if not self.reconstruction_failed and \
                len(self.generated) != len(self.estimated):
            raise DomainError("{} generated poses but {} estimates".format(
                len(self.generated), len(self.estimated)))

    def __len__(self):
        return len(self.generated)


def per_frame_accuracy(pair):
    """Scores 1 - angle / pi per frame, 0 for missing estimates."""
    if pair.reconstruction_failed:
        return np.zeros(len(pair))
    scores = np.zeros(len(pair))
    for j, (gen, est) in enumerate(zip(pair.generated, pair.estimated)):
        if est is not None:
            scores[j] = 1. - rotation_angle(est, gen) / np.pi
    return scores


def camera_pose_accuracy(pair):
    """Mean per-frame accuracy in [0, 1]."""
    if len(pair) == 0:
        raise DomainError("Empty pose sequence")
    if pair.reconstruction_failed:
        LOGGER.info("Reconstruction failed, camera pose accuracy is 0")
        return 0.
    return float(per_frame_accuracy(pair).mean())


class MaskedError(object):
    """Masked MSE; ``status`` is ``"ok"`` or ``"not_applicable"``."""

    __slots__ = ["mse", "status"]

    OK = "ok"
    NOT_APPLICABLE = "not_applicable"

    def __init__(self, mse, status):
        self.mse = mse
        self.status = status

    @property
    def applicable(self):
        return self.status == self.OK

    def __repr__(self):
        return "MaskedError(mse={}, status={!r})".format(self.mse,
                                                          self.status)


def masked_reprojection_error(frames, gt, masks):
    """MSE between frames and ground truth over the cells with mask 1.

    Each argument is a FeatureGrid or a list of them (one per frame); the
    error averages over all masked cells and channels of all frames.
    """
    if not isinstance(frames, (list, tuple)):
        frames, gt, masks = [frames], [gt], [masks]
    if not len(frames) == len(gt) == len(masks):
        raise DomainError("Need as many frames, ground truths and masks")
    total, count = 0., 0
    for frame, truth, mask in zip(frames, gt, masks):
        frame, truth, mask = as_array(frame), as_array(truth), as_array(mask)
        if frame.shape != truth.shape or mask.shape[:2] != frame.shape[:2]:
            raise DomainError("Frame {}, ground truth {} and mask {} differ"
                              .format(frame.shape, truth.shape, mask.shape))
        sel = mask[:, :, 0] > 0.5
        diff = frame[sel] - truth[sel]
        total += float(np.sum(diff ** 2))
        count += diff.size
    if count == 0:
        return MaskedError(None, MaskedError.NOT_APPLICABLE)
    return MaskedError(total / count, MaskedError.OK)


def read_pose_pair(gen_path, est_path):
    """PoseSequencePair from a generated and an estimated trajectory file."""
    generated = [cam.pose for cam in read_trajectory(gen_path)]
    estimated = read_trajectory(est_path, allow_missing=True)
    if estimated is None:
        return PoseSequencePair(generated, None, reconstruction_failed=True)
    return PoseSequencePair(
        generated, [None if cam is None else cam.pose for cam in estimated])
