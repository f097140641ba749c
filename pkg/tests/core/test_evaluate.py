import numpy as np
import pytest
from scipy import linalg

from divae.core import evaluate
from divae.core.evaluate import (
    FeatureStats, ProxyFeatureExtractor, frechet_distance,
    stats_from_features)
from divae.core.exceptions import ShapeMismatchError, ValidationError
from tests.core.utilities import mean_colour_features, random_images


def random_spd(dim, state):
    a = state.randn(dim, dim)
    return a @ a.T + 0.1 * np.eye(dim)


def test_stats_of_two_points():
    stats = stats_from_features([[0., 0.], [2., 0.]])

    np.testing.assert_allclose(stats.mean, [1., 0.])
    np.testing.assert_allclose(stats.cov, [[2., 0.], [0., 0.]])
    assert stats.n == 2


def test_stats_ignore_the_order():
    features = np.random.RandomState(0).randn(20, 3)

    a = stats_from_features(features)
    b = stats_from_features(features[::-1])

    np.testing.assert_allclose(a.mean, b.mean)
    np.testing.assert_allclose(a.cov, b.cov)


def test_identical_images_have_zero_covariance():
    images = np.repeat(random_images(1), 4, axis=0)

    stats = evaluate.feature_stats(images, mean_colour_features)

    np.testing.assert_allclose(stats.cov, 0., atol=1e-12)


def test_stats_need_two_samples():
    with pytest.raises(ValidationError):
        stats_from_features([[1., 2.]])
    with pytest.raises(ValidationError):
        evaluate.feature_stats(random_images(1), mean_colour_features)


def test_invalid_feature_stats():
    with pytest.raises(ValidationError):
        FeatureStats([0., 0.], [[1., 0.5], [0., 1.]], 10)
    with pytest.raises(ShapeMismatchError):
        FeatureStats([0., 0.], np.eye(3), 10)


def test_covariance_has_to_be_positive_semi_definite():
    with pytest.raises(ValidationError):
        FeatureStats([0., 0.], [[1., 0.], [0., -1.]], 10)
    with pytest.raises(ValidationError):
        FeatureStats([0., 0.], [[1., 2.], [2., 1.]], 10)

    singular = FeatureStats([0., 0.], [[1., 1.], [1., 1.]], 10)
    assert singular.dim == 2


def test_stats_of_few_high_dimensional_features_are_valid():
    features = np.random.RandomState(3).randn(4, 64) * 100.

    stats = stats_from_features(features)

    assert np.linalg.matrix_rank(stats.cov) == 3


def test_merged_stats_equal_stats_of_the_union():
    state = np.random.RandomState(1)
    a, b = state.randn(15, 3), state.randn(25, 3) + 1.

    merged = stats_from_features(a).merge(stats_from_features(b))
    union = stats_from_features(np.concatenate([a, b]))

    np.testing.assert_allclose(merged.mean, union.mean)
    np.testing.assert_allclose(merged.cov, union.cov)
    assert merged.n == 40


def test_distance_of_identical_stats_is_zero():
    stats = stats_from_features(np.random.RandomState(0).randn(50, 3))

    assert frechet_distance(stats, stats) == pytest.approx(0., abs=1e-6)


def test_distance_of_shifted_one_dimensional_gaussians():
    a = FeatureStats([0.], [[2.]], 10)
    b = FeatureStats([1.], [[2.]], 10)

    assert frechet_distance(a, b) == pytest.approx(1.)


def test_distance_matches_matrix_square_root():
    state = np.random.RandomState(2)
    a = FeatureStats(state.randn(3), random_spd(3, state), 100)
    b = FeatureStats(state.randn(3), random_spd(3, state), 100)

    covmean = linalg.sqrtm(a.cov @ b.cov).real
    expected = (np.sum((a.mean - b.mean) ** 2) + np.trace(a.cov) +
                np.trace(b.cov) - 2 * np.trace(covmean))

    assert frechet_distance(a, b) == pytest.approx(expected, rel=1e-5)
    assert frechet_distance(b, a) == pytest.approx(expected, rel=1e-5)


def test_distance_is_non_negative():
    state = np.random.RandomState(3)
    for _ in range(10):
        a = stats_from_features(state.randn(30, 4))
        b = stats_from_features(state.randn(30, 4) * 0.5)
        assert frechet_distance(a, b) >= 0.


def test_distance_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        frechet_distance(FeatureStats([0.], [[1.]], 5),
                         FeatureStats([0., 0.], np.eye(2), 5))


def test_proxy_extractor_is_deterministic():
    images = random_images(3)

    first = ProxyFeatureExtractor()(images)
    second = ProxyFeatureExtractor()(images)

    assert first.shape == (3, ProxyFeatureExtractor().dim)
    np.testing.assert_array_equal(first, second)


def test_proxy_extractor_rejects_grayscale():
    with pytest.raises(ShapeMismatchError):
        ProxyFeatureExtractor()(np.zeros((2, 16, 16, 1)))


def test_load_extractor():
    assert isinstance(evaluate.load_extractor("proxy"), ProxyFeatureExtractor)
    assert evaluate.load_extractor(
        "tests.core.utilities:mean_colour_features") is mean_colour_features


def test_pixel_metrics():
    a = np.zeros((2, 4, 4, 3))

    assert evaluate.mse(a, a + 0.5) == pytest.approx(0.25)
    assert evaluate.psnr(a, a + 0.5) == pytest.approx(10 * np.log10(16.))
    assert evaluate.psnr(a, a) == float("inf")
    with pytest.raises(ShapeMismatchError):
        evaluate.mse(a, a[:1])


def test_identical_image_sets():
    images = random_images(8)

    metrics = evaluate.evaluate_image_sets(images, images,
                                           mean_colour_features)

    assert metrics["fid_proxy"] == pytest.approx(0., abs=1e-6)
    assert metrics["mse"] == 0.
    assert metrics["n_real"] == metrics["n_fake"] == 8


def test_image_sets_of_different_size():
    real, fake = random_images(6), random_images(4, resolution=8, seed=1)

    metrics = evaluate.evaluate_image_sets(real, fake, mean_colour_features)

    assert metrics["fid_proxy"] > 0.
    assert metrics["mse"] is None


def test_reference_fids():
    assert evaluate.reference_fids() == {"reconstruction_f8": 1.24,
                                         "reconstruction_f16": 4.07,
                                         "text_to_image": 11.53}
    assert evaluate.reference_fids(16) == {"reconstruction_f16": 4.07}
    assert evaluate.reference_fids(4) == {}
