import importlib
import logging
import math
from typing import Any, Callable, Dict, Optional, Text, Tuple

import numpy as np
import tensorflow as tf
from scipy import linalg

from divae import constants
from divae.core.exceptions import (
    NumericError, ShapeMismatchError, ValidationError)

logger = logging.getLogger(__name__)

# eigenvalues below this are a failure rather than numerical noise
EIGENVALUE_TOLERANCE = 1e-6
COVARIANCE_TOLERANCE = 1e-8

FeatureExtractor = Callable[[np.ndarray], np.ndarray]


class FeatureStats(object):
    """Gaussian fit of a set of feature vectors."""

    def __init__(self, mean: Any, cov: Any, n: int) -> None:
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        if n < 2:
            raise ValidationError(
                "Feature statistics need at least 2 samples, got {}."
                "".format(n))
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeMismatchError(
                "Covariance of shape {} does not fit a mean of shape {}."
                "".format(cov.shape, mean.shape))
        scale = max(1.0, float(np.abs(cov).max()) if cov.size else 1.0)
        if not np.allclose(cov, cov.T, atol=COVARIANCE_TOLERANCE * scale):
            raise ValidationError("The covariance matrix is not symmetric.")
        if cov.size and linalg.eigvalsh(cov).min() < (
                -COVARIANCE_TOLERANCE * scale):
            raise ValidationError(
                "The covariance matrix is not positive semi-definite.")
        self.mean = mean
        self.cov = cov
        self.n = int(n)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def merge(self, other: 'FeatureStats') -> 'FeatureStats':
        """Statistics of the union of both sample sets."""

        if other.dim != self.dim:
            raise ShapeMismatchError(
                "Can not merge statistics of dimension {} and {}."
                "".format(self.dim, other.dim))
        n = self.n + other.n
        delta = self.mean - other.mean
        mean = (self.n * self.mean + other.n * other.mean) / n
        scatter = ((self.n - 1) * self.cov + (other.n - 1) * other.cov +
                   np.outer(delta, delta) * self.n * other.n / n)
        return FeatureStats(mean, scatter / (n - 1), n)

    def as_dict(self) -> Dict[Text, Any]:
        return {"mean": self.mean.tolist(),
                "cov": self.cov.tolist(),
                "n": self.n}


def stats_from_features(features: Any) -> FeatureStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeMismatchError(
            "Features have to be a [n, d] matrix, got shape {}."
            "".format(features.shape))
    if features.shape[0] < 2:
        raise ValidationError(
            "Feature statistics need at least 2 images, got {}."
            "".format(features.shape[0]))
    mean = features.mean(axis=0)
    cov = np.atleast_2d(np.cov(features, rowvar=False))
    return FeatureStats(mean, cov, features.shape[0])


def _symmetric_sqrt_eigenvalues(mat: np.ndarray,
                                what: Text) -> Tuple[np.ndarray, np.ndarray]:
    eigenvalues, eigenvectors = linalg.eigh(mat)
    if eigenvalues.min(initial=0.) < -EIGENVALUE_TOLERANCE:
        raise NumericError(
            "The {} has eigenvalue {:.3e}, the matrix square root is not "
            "defined.".format(what, eigenvalues.min()))
    if eigenvalues.min(initial=0.) < 0:
        logger.warning("Clipped negative eigenvalues down to {:.3e} of the {}."
                       "".format(eigenvalues.min(), what))
    return np.clip(eigenvalues, 0., None), eigenvectors


def trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """Trace of the positive square root of `sigma_a @ sigma_b`.

    With `A = sqrt(sigma_a)` the product shares its eigenvalues with the
    symmetric `A sigma_b A`, so only symmetric eigendecompositions are
    needed."""

    values, vectors = _symmetric_sqrt_eigenvalues(sigma_a, "first covariance")
    sqrt_a = (vectors * np.sqrt(values)) @ vectors.T
    product = sqrt_a @ sigma_b @ sqrt_a
    product = (product + product.T) / 2
    values, _ = _symmetric_sqrt_eigenvalues(product, "covariance product")
    return float(np.sqrt(values).sum())


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between two Gaussian feature fits."""

    if a.dim != b.dim:
        raise ShapeMismatchError(
            "Feature dimensions differ: {} vs {}.".format(a.dim, b.dim))
    diff = a.mean - b.mean
    distance = (diff.dot(diff) + np.trace(a.cov) + np.trace(b.cov) -
                2 * trace_sqrt_product(a.cov, b.cov))
    if not math.isfinite(distance):
        raise NumericError("The Frechet distance is not finite.")
    return max(float(distance), 0.)


class ProxyFeatureExtractor(object):
    """Small frozen random conv net standing in for an Inception network.

    Its weights are drawn from a fixed seed, so features are identical
    across runs and machines; images are resized bilinearly to the
    extractor resolution first. Distances computed with it are only
    comparable among themselves."""

    version = constants.FEATURE_EXTRACTOR_VERSION
    channels = (16, 32, 64)

    def __init__(self,
                 seed: int = constants.FEATURE_EXTRACTOR_SEED,
                 resolution: int = constants.FEATURE_EXTRACTOR_RESOLUTION,
                 batch_size: int = 64) -> None:
        self.resolution = resolution
        self.batch_size = batch_size
        state = np.random.RandomState(seed)
        self.kernels = []
        in_channels = 3
        for out_channels in self.channels:
            limit = math.sqrt(6. / (9 * (in_channels + out_channels)))
            self.kernels.append(state.uniform(
                -limit, limit, (3, 3, in_channels, out_channels)
            ).astype(np.float32))
            in_channels = out_channels

    @property
    def dim(self) -> int:
        return 2 * self.channels[-1]

    def _features(self, images: np.ndarray) -> np.ndarray:
        h = tf.image.resize(tf.convert_to_tensor(images, tf.float32),
                            [self.resolution, self.resolution],
                            method="bilinear")
        for kernel in self.kernels:
            h = tf.nn.relu(tf.nn.conv2d(h, kernel, strides=2,
                                        padding="SAME"))
        mean = tf.reduce_mean(h, axis=[1, 2])
        spread = tf.math.reduce_std(h, axis=[1, 2])
        return tf.concat([mean, spread], axis=-1).numpy()

    def __call__(self, images: Any) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[-1] != 3:
            raise ShapeMismatchError(
                "Expected images of shape [n, H, W, 3], got {}."
                "".format(images.shape))
        batches = [self._features(images[i:i + self.batch_size])
                   for i in range(0, len(images), self.batch_size)]
        return np.concatenate(batches, axis=0).astype(np.float64)


def load_extractor(name: Optional[Text] = None) -> FeatureExtractor:
    """Returns the proxy extractor or a callable `module:attribute`.

    An external extractor receives images in [-1, 1] shaped
    `[n, H, W, 3]` and returns a `[n, d]` feature matrix."""

    if not name or name == "proxy":
        return ProxyFeatureExtractor()
    module_name, _, attribute = name.partition(":")
    extractor = getattr(importlib.import_module(module_name), attribute)
    if isinstance(extractor, type):
        extractor = extractor()
    return extractor


def feature_stats(images: Any,
                  extractor: Optional[FeatureExtractor] = None
                  ) -> FeatureStats:
    """Feature mean and unbiased covariance of an image set."""

    images = np.asarray(images)
    if len(images) < 2:
        raise ValidationError(
            "Feature statistics need at least 2 images, got {}."
            "".format(len(images)))
    extractor = extractor or ProxyFeatureExtractor()
    return stats_from_features(extractor(images))


def mse(a: Any, b: Any) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(
            "Can not compare images of shape {} and {}.".format(a.shape,
                                                              b.shape))
    return float(np.mean((a - b) ** 2))


def psnr(a: Any, b: Any, data_range: float = 2.0) -> float:
    """Peak signal to noise ratio in dB of images in [-1, 1]."""

    error = mse(a, b)
    if error == 0:
        return float("inf")
    return float(10 * np.log10(data_range ** 2 / error))


def reference_fids(rate: Optional[int] = None) -> Dict[Text, float]:
    """FIDs reported for ImageNet 256x256 at a large compute budget.

    They give a sense of scale for FID-proxy values, the two are not
    comparable. With a `rate` only the reconstruction FID of that encoder
    rate is returned."""

    fids = {"reconstruction_{}".format(key): value for key, value
            in constants.REFERENCE_RECONSTRUCTION_FID.items()}
    if rate is not None:
        key = "reconstruction_f{}".format(rate)
        return {key: fids[key]} if key in fids else {}
    fids["text_to_image"] = constants.REFERENCE_TEXT_TO_IMAGE_FID
    return fids


def evaluate_image_sets(real: Any,
                        fake: Any,
                        extractor: Optional[FeatureExtractor] = None
                        ) -> Dict[Text, Any]:
    """FID-proxy of two image sets plus pixel metrics of paired images.

    Pixel metrics compare images pairwise in order and are skipped if the
    sets differ in image shape."""

    real, fake = np.asarray(real), np.asarray(fake)
    extractor = extractor or ProxyFeatureExtractor()
    metrics = {
        "fid_proxy": frechet_distance(feature_stats(real, extractor),
                                      feature_stats(fake, extractor)),
        "n_real": int(len(real)),
        "n_fake": int(len(fake)),
        "mse": None,
        "psnr": None,
    }
    n = min(len(real), len(fake))
    if real.shape[1:] == fake.shape[1:]:
        metrics["mse"] = mse(real[:n], fake[:n])
        metrics["psnr"] = psnr(real[:n], fake[:n])
    else:
        logger.info("Image shapes differ ({} vs {}), pixel metrics are "
                    "skipped.".format(real.shape[1:], fake.shape[1:]))
    return metrics
