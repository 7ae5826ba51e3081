import numpy as np
import pytest

from mvgeom._base import ConfigError, DomainError
from mvgeom.denoiser import (Conditioning, DenoiserHooks,
                             GaussianAnalyticDenoiser, OracleDenoiser,
                             ToyNetDenoiser, ZeroDenoiser, make_denoiser)
from mvgeom.gridio import FeatureGrid, resize_bilinear
from mvgeom.scheduler import (DiffusionSchedule, LatentVideo, ddim_sample,
                              ddpm_forward, gaussian_noise_like)


SCHEDULE = DiffusionSchedule.default()


def _video(seed, shape=(3, 4, 4, 4)):
    return LatentVideo(np.random.default_rng(seed).normal(size=shape))


def test_oracle_recovers_the_true_noise():
    targets, noise = _video(0), _video(1)
    oracle = OracleDenoiser(targets, SCHEDULE)
    for t in (0, 500, 999):
        x_t = ddpm_forward(targets, t, noise, SCHEDULE)
        np.testing.assert_allclose(oracle.predict_noise(x_t, t).data,
                                   noise.data, rtol=0, atol=1e-9)


def test_oracle_known_masks_defer_to_fallback():
    targets = _video(2)
    mask = np.zeros((4, 4, 1))
    mask[:, :2] = 1.
    fallback = GaussianAnalyticDenoiser(SCHEDULE, 0., 1.)
    oracle = OracleDenoiser(targets, SCHEDULE,
                            known_masks=[None, FeatureGrid(mask), None],
                            fallback=fallback)
    x_t = _video(3)
    x0 = oracle.estimate_x0(x_t.data, 400, None)
    guess = fallback.estimate_x0(x_t.data, 400, None)
    assert np.array_equal(x0[0], targets.data[0])
    assert np.array_equal(x0[2], targets.data[2])
    assert np.array_equal(x0[1, :, :2], targets.data[1, :, :2])
    assert np.array_equal(x0[1, :, 2:], guess[1, :, 2:])


def test_oracle_default_fallback_and_validation():
    targets = _video(4)
    oracle = OracleDenoiser(targets, SCHEDULE, known_masks=[None] * 3)
    assert isinstance(oracle.fallback, GaussianAnalyticDenoiser)
    with pytest.raises(DomainError):
        OracleDenoiser(targets, SCHEDULE, known_masks=[None])
    with pytest.raises(DomainError):
        OracleDenoiser(np.zeros((4, 4, 4)), SCHEDULE)
    with pytest.raises(DomainError):
        oracle.predict_noise(_video(5, shape=(2, 4, 4, 4)), 10)


def test_noise_free_level_predicts_zero():
    schedule = DiffusionSchedule.from_alpha_bar([1., 0.5])
    oracle = OracleDenoiser(_video(6), schedule)
    assert np.all(oracle.predict_noise(_video(7), 0).data == 0.)


def test_gaussian_denoiser_limits():
    x_t = _video(8)
    clean = DiffusionSchedule.from_alpha_bar([1., 1e-12])
    gaussian = GaussianAnalyticDenoiser(clean, 0.5, 0.3)
    np.testing.assert_allclose(gaussian.estimate_x0(x_t.data, 0, None),
                               x_t.data)
    np.testing.assert_allclose(gaussian.estimate_x0(x_t.data, 1, None), 0.5,
                               atol=1e-5)
    point = GaussianAnalyticDenoiser(SCHEDULE, 0.5, 0.)
    np.testing.assert_allclose(point.estimate_x0(x_t.data, 300, None), 0.5)
    with pytest.raises(DomainError):
        GaussianAnalyticDenoiser(SCHEDULE, 0., -1.)


def test_gaussian_chain_reaches_the_data_mean():
    mean, std, n = 0.5, 0.3, 1000
    x_T = gaussian_noise_like(LatentVideo(np.zeros((1, n, 1, 1))),
                              np.random.SeedSequence(0))
    out = ddim_sample(x_T, GaussianAnalyticDenoiser(SCHEDULE, mean, std),
                      SCHEDULE, None)
    assert abs(out.data.mean() - mean) < 4 * std / np.sqrt(n)
    assert 0.8 * std < out.data.std() < 1.1 * std


def test_tap_is_called_once_per_frame_in_order():
    seen = []

    def tap(i, grid):
        seen.append((i, grid.shape))

    x_t = _video(9)
    gaussian = GaussianAnalyticDenoiser(SCHEDULE)
    plain = gaussian.predict_noise(x_t, 200)
    tapped = gaussian.predict_noise(x_t, 200, hooks=DenoiserHooks(tap))
    assert seen == [(i, (4, 4, 4)) for i in range(3)]
    assert np.array_equal(plain.data, tapped.data)
    assert np.array_equal(
        plain.data, gaussian.predict_noise(x_t, 200,
                                           hooks=DenoiserHooks()).data)


def test_tap_replacement_changes_only_its_frame():
    targets, noise = _video(10), _video(11)
    x_t = ddpm_forward(targets, 300, noise, SCHEDULE)

    def tap(i, grid):
        if i == 1:
            return FeatureGrid(targets.data[1])

    gaussian = GaussianAnalyticDenoiser(SCHEDULE)
    plain = gaussian.predict_noise(x_t, 300)
    tapped = gaussian.predict_noise(x_t, 300, hooks=DenoiserHooks(tap))
    np.testing.assert_allclose(tapped.data[1], noise.data[1], atol=1e-9)
    assert np.array_equal(tapped.data[[0, 2]], plain.data[[0, 2]])


def test_tap_replacement_must_keep_shape():
    gaussian = GaussianAnalyticDenoiser(SCHEDULE)
    hooks = DenoiserHooks(lambda i, grid: FeatureGrid.zeros(2, 2, 4))
    with pytest.raises(DomainError):
        gaussian.predict_noise(_video(12), 10, hooks=hooks)


def test_zero_denoiser():
    x_t = _video(13)
    seen = {}

    def tap(i, grid):
        seen[i] = grid.data.copy()

    zero = ZeroDenoiser(SCHEDULE)
    eps = zero.predict_noise(x_t, 700, hooks=DenoiserHooks(tap))
    assert np.all(eps.data == 0.)
    ab = SCHEDULE.alpha_bar_at(700)
    np.testing.assert_allclose(seen[2], x_t.data[2] / np.sqrt(ab))


def test_conditioning_checks_pose_count():
    x_t = _video(14)
    with pytest.raises(DomainError):
        ZeroDenoiser(SCHEDULE).predict_noise(x_t, 0, Conditioning(
            poses=["a", "b"]))
    with pytest.raises(DomainError):
        Conditioning(vector=[0., np.inf])
    assert Conditioning(vector=[[1., 2.]]).vector.shape == (2,)


def test_toynet_output_and_tap():
    x_t = _video(15, shape=(2, 4, 6, 4))
    net = ToyNetDenoiser(SCHEDULE, hidden=8, seed=3, feature_scale=2)
    seen = []

    def tap(i, grid):
        seen.append(grid.shape)
        return grid

    eps = net.predict_noise(x_t, 250)
    assert eps.data.shape == x_t.data.shape
    assert np.all(np.abs(eps.data) < 1.)
    tapped = net.predict_noise(x_t, 250, hooks=DenoiserHooks(tap))
    assert seen == [(8, 12, 8)] * 2
    assert np.array_equal(eps.data, tapped.data)
    again = ToyNetDenoiser(SCHEDULE, hidden=8, seed=3, feature_scale=2)
    assert np.array_equal(again.predict_noise(x_t, 250).data, eps.data)
    other = ToyNetDenoiser(SCHEDULE, hidden=8, seed=4, feature_scale=2)
    assert not np.array_equal(other.predict_noise(x_t, 250).data, eps.data)


def test_toynet_tap_edits_reach_the_output():
    x_t = _video(16, shape=(2, 4, 4, 4))
    net = ToyNetDenoiser(SCHEDULE, seed=1)

    def tap(i, grid):
        if i == 0:
            return FeatureGrid(grid.data + 1.)

    base = net.predict_noise(x_t, 100)
    edited = net.predict_noise(x_t, 100, hooks=DenoiserHooks(tap))
    assert not np.allclose(edited.data[0], base.data[0])


def test_toynet_upsampling_matches_feature_resize():
    x_t = _video(20, shape=(2, 4, 6, 4))
    captured = {}

    def capture(scale):
        def tap(i, grid):
            captured[scale, i] = grid.data.copy()
        return DenoiserHooks(tap)

    for scale in (1, 2, 3):
        net = ToyNetDenoiser(SCHEDULE, hidden=8, seed=5, feature_scale=scale)
        net.predict_noise(x_t, 300, hooks=capture(scale))
    for i in range(2):
        native = captured[1, i]
        for scale in (2, 3):
            up = captured[scale, i]
            assert up.shape == (4 * scale, 6 * scale, 8)
            expected = resize_bilinear(native, 4 * scale, 6 * scale).data
            np.testing.assert_allclose(up, expected, atol=1e-12)
            # Corner cells land exactly on the latent cells.
            np.testing.assert_allclose(up[0, 0], native[0, 0], atol=1e-12)
            np.testing.assert_allclose(up[-1, -1], native[-1, -1],
                                       atol=1e-12)


def test_toynet_condition_vector_matters():
    x_t = _video(17, shape=(2, 4, 4, 4))
    net = ToyNetDenoiser(SCHEDULE, seed=2, cond_dim=3)
    a = net.predict_noise(x_t, 100, Conditioning(vector=[0., 0., 0.]))
    b = net.predict_noise(x_t, 100, Conditioning(vector=[1., -1., 2.]))
    assert not np.allclose(a.data, b.data)


def test_toynet_multiview_features():
    x_t = _video(18, shape=(2, 4, 4, 4))
    features = [FeatureGrid(np.full((4, 4, 3), 0.7)) for _ in range(2)]
    hidden = [(f, FeatureGrid.zeros(4, 4)) for f in features]
    seen = [(f, FeatureGrid.full(4, 4, 1, 1.)) for f in features]
    base = ToyNetDenoiser(SCHEDULE, seed=5).predict_noise(x_t, 100)
    masked = ToyNetDenoiser(SCHEDULE, seed=5, multiview_features=hidden)
    assert np.array_equal(masked.predict_noise(x_t, 100).data, base.data)
    visible = ToyNetDenoiser(SCHEDULE, seed=5, multiview_features=seen)
    assert not np.allclose(visible.predict_noise(x_t, 100).data, base.data)

    with pytest.raises(DomainError):
        ToyNetDenoiser(SCHEDULE, multiview_features=seen[:1]).predict_noise(
            x_t, 100)
    small = [(FeatureGrid.zeros(2, 2, 3), FeatureGrid.zeros(2, 2))] * 2
    with pytest.raises(DomainError):
        ToyNetDenoiser(SCHEDULE, multiview_features=small).predict_noise(
            x_t, 100)


def test_toynet_validation():
    with pytest.raises(DomainError):
        ToyNetDenoiser(SCHEDULE, feature_scale=0)
    with pytest.raises(DomainError):
        ToyNetDenoiser(SCHEDULE, feature_scale=1.5)
    with pytest.raises(DomainError):
        ToyNetDenoiser(SCHEDULE, channels=3).predict_noise(_video(19), 0)


def test_make_denoiser():
    targets = _video(20)
    assert isinstance(make_denoiser("zero", SCHEDULE), ZeroDenoiser)
    assert isinstance(make_denoiser("gaussian", SCHEDULE, mean=1.),
                      GaussianAnalyticDenoiser)
    assert isinstance(make_denoiser("oracle", SCHEDULE, targets=targets),
                      OracleDenoiser)
    assert isinstance(make_denoiser("toynet", SCHEDULE, seed=1),
                      ToyNetDenoiser)
    with pytest.raises(ConfigError):
        make_denoiser("unet", SCHEDULE)
