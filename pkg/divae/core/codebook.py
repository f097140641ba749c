import logging
from collections import namedtuple
from typing import Any, Optional, Text

import numpy as np
import tensorflow as tf

from divae.core import utils
from divae.core.exceptions import (
    CodeIndexError, InvalidConfigException, ShapeMismatchError)

logger = logging.getLogger(__name__)

DEFAULT_COMMITMENT_BETA = 0.25
DEFAULT_EMA_DECAY = 0.99
CODEBOOK_UPDATE_MODES = ("gradient", "ema")

# indices: integer grid `[..., h, w]`, embedded: `[..., h, w, d]`
LatentGrid = namedtuple("LatentGrid", ["indices", "embedded"])


class Codebook(tf.keras.layers.Layer):
    """Learned table of `K` code vectors of dimension `d`.

    Besides the trainable `entries` the layer carries the running sums used
    when the codebook is updated with exponential moving averages."""

    def __init__(self,
                 K: int,
                 d: int,
                 seed: Optional[int] = None,
                 name: Text = "codebook",
                 **kwargs: Any) -> None:
        super(Codebook, self).__init__(name=name, **kwargs)
        if K < 1 or d < 1:
            raise InvalidConfigException(
                "Codebook size and code dimension have to be positive, got "
                "K={} and d={}.".format(K, d))
        self.K = int(K)
        self.d = int(d)

        limit = 1.0 / self.K
        self.entries = self.add_weight(
            name="entries",
            shape=(self.K, self.d),
            initializer=tf.keras.initializers.RandomUniform(-limit, limit,
                                                            seed=seed),
            trainable=True)
        self.ema_count = self.add_weight(
            name="ema_count",
            shape=(self.K,),
            initializer="ones",
            trainable=False)
        self.ema_sum = self.add_weight(
            name="ema_sum",
            shape=(self.K, self.d),
            initializer="zeros",
            trainable=False)
        self.ema_sum.assign(self.entries)

    @classmethod
    def from_entries(cls, entries: Any, **kwargs: Any) -> 'Codebook':
        entries = np.asarray(entries)
        if entries.ndim != 2:
            raise ShapeMismatchError(
                "Codebook entries have to be a K x d matrix, got shape {}."
                "".format(entries.shape))
        codebook = cls(entries.shape[0], entries.shape[1], **kwargs)
        codebook.entries.assign(entries.astype(
            codebook.entries.dtype.as_numpy_dtype))
        codebook.ema_sum.assign(codebook.entries)
        return codebook

    def call(self, z: tf.Tensor) -> LatentGrid:
        return quantize(z, self)

    def get_config(self):
        config = super(Codebook, self).get_config()
        config.update({"K": self.K, "d": self.d})
        return config


def _check_code_dim(z: tf.Tensor, cb: Codebook) -> None:
    if z.shape.rank is None or z.shape.rank < 1 or z.shape[-1] != cb.d:
        raise ShapeMismatchError(
            "Latent vectors have dimension {} but the codebook stores "
            "dimension {}.".format(z.shape[-1:], cb.d))


def _squared_distances(flat: tf.Tensor, entries: tf.Tensor) -> tf.Tensor:
    return (tf.reduce_sum(flat ** 2, axis=1, keepdims=True) -
            2 * tf.matmul(flat, entries, transpose_b=True) +
            tf.reduce_sum(entries ** 2, axis=1)[tf.newaxis, :])


def quantize(z: Any, cb: Codebook) -> LatentGrid:
    """Maps every spatial vector of `z` to its nearest codebook entry.

    Ties are resolved to the lowest index."""

    z = utils.float_tensor(z)
    _check_code_dim(z, cb)

    entries = tf.cast(cb.entries, z.dtype)
    flat = tf.reshape(z, [-1, cb.d])
    distances = _squared_distances(flat, entries)
    nearest = tf.reduce_min(distances, axis=1, keepdims=True)
    candidates = tf.where(distances <= nearest,
                          tf.range(cb.K, dtype=tf.int32)[tf.newaxis, :],
                          cb.K)
    indices = tf.reduce_min(candidates, axis=1)
    indices = tf.reshape(indices, tf.shape(z)[:-1])
    return LatentGrid(indices, tf.gather(entries, indices))


def embed(indices: Any, cb: Codebook) -> tf.Tensor:
    """Looks up the code vectors of an index grid."""

    indices = tf.convert_to_tensor(indices)
    if not indices.dtype.is_integer:
        raise CodeIndexError(
            "Code indices have to be integers, got {}.".format(indices.dtype))
    if tf.executing_eagerly() and tf.size(indices) > 0:
        low = int(tf.reduce_min(indices))
        high = int(tf.reduce_max(indices))
        if low < 0 or high >= cb.K:
            raise CodeIndexError(
                "Code indices have to lie in [0, {}), got values in [{}, {}]."
                "".format(cb.K, low, high))
    return tf.gather(tf.convert_to_tensor(cb.entries), indices)


def vq_loss(encoder_out: Any,
            quantized: Any,
            beta: float = DEFAULT_COMMITMENT_BETA) -> tf.Tensor:
    """Codebook plus commitment loss.

    Squared norms are taken per code vector and averaged over all spatial
    positions of the batch. The first term only trains the codebook, the
    second term only the encoder."""

    encoder_out = utils.float_tensor(encoder_out)
    quantized = tf.cast(utils.float_tensor(quantized), encoder_out.dtype)
    utils.check_same_shape(encoder_out, quantized, "encoder output and codes")

    codebook_term = tf.reduce_mean(tf.reduce_sum(
        tf.square(tf.stop_gradient(encoder_out) - quantized), axis=-1))
    commitment_term = tf.reduce_mean(tf.reduce_sum(
        tf.square(tf.stop_gradient(quantized) - encoder_out), axis=-1))
    return codebook_term + beta * commitment_term


@tf.custom_gradient
def _pass_through(encoder_out, quantized):
    def grad(upstream):
        return upstream, tf.zeros_like(quantized)

    return tf.identity(quantized), grad


def straight_through(encoder_out: Any, quantized: Any) -> tf.Tensor:
    """Returns `quantized` while routing its gradient to `encoder_out`."""

    encoder_out = utils.float_tensor(encoder_out)
    quantized = tf.cast(utils.float_tensor(quantized), encoder_out.dtype)
    utils.check_same_shape(encoder_out, quantized, "encoder output and codes")
    return _pass_through(encoder_out, quantized)


def code_usage(indices: Any, K: int) -> tf.Tensor:
    """Relative frequency of every code in an index grid."""

    counts = tf.math.bincount(tf.reshape(tf.cast(indices, tf.int32), [-1]),
                              minlength=K, maxlength=K,
                              dtype=tf.float32)
    return counts / tf.maximum(tf.reduce_sum(counts), 1.)


def codebook_perplexity(indices: Any, K: int) -> float:
    """Exponentiated entropy of the code usage; `K` means uniform usage."""

    probs = code_usage(indices, K)
    return float(tf.exp(-tf.reduce_sum(probs * tf.math.log(probs + 1e-7))))


def ema_update(cb: Codebook,
               z: Any,
               indices: Any,
               decay: float = DEFAULT_EMA_DECAY,
               epsilon: float = 1e-5) -> None:
    """Moves every code towards the mean of the vectors assigned to it."""

    z = tf.reshape(tf.cast(utils.float_tensor(z), cb.ema_sum.dtype),
                   [-1, cb.d])
    onehot = tf.one_hot(tf.reshape(indices, [-1]), cb.K,
                        dtype=cb.ema_sum.dtype)

    batch_count = tf.reduce_sum(onehot, axis=0)
    batch_sum = tf.matmul(onehot, z, transpose_a=True)
    cb.ema_count.assign(decay * cb.ema_count + (1. - decay) * batch_count)
    cb.ema_sum.assign(decay * cb.ema_sum + (1. - decay) * batch_sum)

    # laplace smoothing keeps unused codes away from a division by zero
    total = tf.reduce_sum(cb.ema_count)
    count = (cb.ema_count + epsilon) / (total + cb.K * epsilon) * total
    cb.entries.assign(cb.ema_sum / count[:, tf.newaxis])
