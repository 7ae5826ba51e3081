import numpy as np
import pytest

from mvgeom._base import DomainError
from mvgeom.camera import CameraPose, FAILED, Intrinsics, RigidPose, \
    write_trajectory
from mvgeom.gridio import FeatureGrid
from mvgeom.metrics import (MaskedError, PoseSequencePair,
                            camera_pose_accuracy, masked_reprojection_error,
                            per_frame_accuracy, read_pose_pair,
                            rotation_angle)

from .utils import random_rotation, write_text


def _rotations(seed, n=8):
    return [random_rotation(seed * 100 + i) for i in range(n)]


def test_rotation_angle():
    assert rotation_angle(np.eye(3), np.eye(3)) == 0.
    flip = np.diag([-1., -1., 1.])
    assert rotation_angle(flip, np.eye(3)) == pytest.approx(np.pi)
    quarter = np.array([[0., -1., 0.], [1., 0., 0.], [0., 0., 1.]])
    assert rotation_angle(quarter, np.eye(3)) == pytest.approx(np.pi / 2)
    pose = RigidPose(quarter, (1., 2., 3.))
    assert rotation_angle(pose, RigidPose.identity()) == \
        pytest.approx(np.pi / 2)
    with pytest.raises(DomainError):
        rotation_angle(np.diag([1., 1., -1.]), np.eye(3))
    with pytest.raises(DomainError):
        rotation_angle(np.eye(2), np.eye(2))
    with pytest.raises(DomainError):
        rotation_angle(2 * np.eye(3), np.eye(3))


def test_identical_poses_score_one():
    generated = _rotations(0)
    assert camera_pose_accuracy(PoseSequencePair(generated, generated)) == \
        pytest.approx(1.)


def test_opposite_poses_score_zero():
    flip = np.diag([-1., -1., 1.])
    generated = _rotations(1)
    estimated = [flip.dot(r) for r in generated]
    assert camera_pose_accuracy(PoseSequencePair(generated, estimated)) == \
        pytest.approx(0., abs=1e-7)


def test_missing_frames_score_zero():
    generated = _rotations(2)
    estimated = list(generated)
    estimated[3] = None
    pair = PoseSequencePair(generated, estimated)
    scores = per_frame_accuracy(pair)
    assert scores[3] == 0.
    assert camera_pose_accuracy(pair) == pytest.approx(0.875)


@pytest.mark.parametrize("seed", range(5))
def test_accuracy_ignores_a_global_rotation(seed):
    generated = _rotations(seed + 10)
    estimated = [random_rotation(seed + 50, max_angle=0.5).dot(r)
                 for r in generated]
    g = random_rotation(seed + 99)
    base = camera_pose_accuracy(PoseSequencePair(generated, estimated))
    left = camera_pose_accuracy(PoseSequencePair(
        [g.dot(r) for r in generated], [g.dot(r) for r in estimated]))
    right = camera_pose_accuracy(PoseSequencePair(
        [r.dot(g) for r in generated], [r.dot(g) for r in estimated]))
    assert 0. < base < 1.
    assert left == pytest.approx(base, abs=1e-9)
    assert right == pytest.approx(base, abs=1e-9)


def test_failed_reconstruction():
    generated = _rotations(3)
    assert camera_pose_accuracy(PoseSequencePair(generated, None)) == 0.
    pair = PoseSequencePair(generated, generated, reconstruction_failed=True)
    assert camera_pose_accuracy(pair) == 0.
    assert not per_frame_accuracy(pair).any()


def test_pose_pair_validation():
    with pytest.raises(DomainError):
        PoseSequencePair(_rotations(4), _rotations(4, n=3))
    with pytest.raises(DomainError):
        camera_pose_accuracy(PoseSequencePair([], []))


def test_masked_reprojection_error():
    frame = FeatureGrid(np.zeros((2, 2, 3)))
    truth = FeatureGrid(np.full((2, 2, 3), 0.5))
    mask = FeatureGrid(np.array([[1., 0.], [0., 0.]]))
    error = masked_reprojection_error(frame, truth, mask)
    assert error.applicable and error.status == MaskedError.OK
    assert error.mse == pytest.approx(0.25)

    truth2 = FeatureGrid(np.full((2, 2, 3), 1.))
    both = masked_reprojection_error([frame, frame], [truth, truth2],
                                     [mask, mask])
    assert both.mse == pytest.approx((0.25 + 1.) / 2.)


def test_masked_error_without_masked_cells():
    frame = FeatureGrid.zeros(3, 3, 3)
    error = masked_reprojection_error(frame, frame, FeatureGrid.zeros(3, 3))
    assert not error.applicable and error.mse is None
    assert error.status == MaskedError.NOT_APPLICABLE


def test_masked_error_shape_checks():
    frame = FeatureGrid.zeros(3, 3, 3)
    with pytest.raises(DomainError):
        masked_reprojection_error(frame, FeatureGrid.zeros(3, 3, 4),
                                  FeatureGrid.zeros(3, 3))
    with pytest.raises(DomainError):
        masked_reprojection_error(frame, frame, FeatureGrid.zeros(2, 3))
    with pytest.raises(DomainError):
        masked_reprojection_error([frame], [frame, frame],
                                  [FeatureGrid.zeros(3, 3)])


def _cameras(rotations):
    intrinsics = Intrinsics.centered(40., 32, 32)
    return [None if r is None else
            CameraPose(intrinsics, RigidPose(r, (0.1 * i, 0., 0.)))
            for i, r in enumerate(rotations)]


def test_read_pose_pair(tmpdir):
    generated = _rotations(5, n=4)
    estimated = list(generated)
    estimated[1] = None
    gen_path = str(tmpdir.join("gen.txt"))
    est_path = str(tmpdir.join("est.txt"))
    write_trajectory(_cameras(generated), gen_path)
    write_trajectory(_cameras(estimated), est_path)
    pair = read_pose_pair(gen_path, est_path)
    assert pair.estimated[1] is None
    assert camera_pose_accuracy(pair) == pytest.approx(0.75)

    failed = write_text(tmpdir, "failed.txt", FAILED + "\n")
    pair = read_pose_pair(gen_path, failed)
    assert pair.reconstruction_failed
    assert camera_pose_accuracy(pair) == 0.
