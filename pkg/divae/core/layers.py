import math
from typing import Any, Optional, Text

import tensorflow as tf

from divae.core.exceptions import ShapeMismatchError

layers = tf.keras.layers


def kernel_init(scale: float) -> tf.keras.initializers.Initializer:
    scale = max(scale, 1e-10)
    return tf.keras.initializers.VarianceScaling(
        scale, mode="fan_avg", distribution="uniform")


def norm_groups(channels: int, groups: int) -> int:
    """Largest group count not above `groups` that divides `channels`."""

    return math.gcd(channels, groups) or 1


def timestep_sinusoids(t: tf.Tensor, dim: int, dtype: Any) -> tf.Tensor:
    half = dim // 2
    frequencies = tf.exp(-math.log(10000.) *
                         tf.range(half, dtype=dtype) / max(half, 1))
    angles = tf.cast(t, dtype)[:, tf.newaxis] * frequencies[tf.newaxis, :]
    embedding = tf.concat([tf.sin(angles), tf.cos(angles)], axis=-1)
    if dim % 2:
        embedding = tf.pad(embedding, [[0, 0], [0, 1]])
    return embedding


class TimestepEmbedding(layers.Layer):
    """Sinusoidal timestep features followed by a two layer MLP."""

    def __init__(self, dim: int, sinusoid_dim: Optional[int] = None,
                 **kwargs: Any) -> None:
        super(TimestepEmbedding, self).__init__(**kwargs)
        self.dim = dim
        self.sinusoid_dim = sinusoid_dim or dim
        self.hidden = layers.Dense(dim, activation=tf.nn.swish,
                                   kernel_initializer=kernel_init(1.0))
        self.out = layers.Dense(dim, kernel_initializer=kernel_init(1.0))

    def call(self, t: tf.Tensor) -> tf.Tensor:
        t = tf.reshape(tf.convert_to_tensor(t), [-1])
        sinusoids = timestep_sinusoids(t, self.sinusoid_dim,
                                       self.compute_dtype)
        return self.out(self.hidden(sinusoids))


def _scale_shift_bias(shape, dtype=None):
    channels = shape[0] // 2
    return tf.concat([tf.ones([channels], dtype=dtype),
                      tf.zeros([shape[0] - channels], dtype=dtype)], axis=0)


class AdaGN(layers.Layer):
    """Group normalization modulated by the timestep embedding.

    Computes `a * norm(h) + b` where `(a, b)` is a linear projection of the
    embedding. The projection bias starts at `a = 1, b = 0`."""

    def __init__(self, channels: int, time_embed_dim: int,
                 groups: int = 32, **kwargs: Any) -> None:
        super(AdaGN, self).__init__(**kwargs)
        self.channels = channels
        self.time_embed_dim = time_embed_dim
        self.norm = layers.GroupNormalization(
            groups=norm_groups(channels, groups), center=False, scale=False)
        self.projection = layers.Dense(2 * channels,
                                       kernel_initializer=kernel_init(1.0),
                                       bias_initializer=_scale_shift_bias)

    def call(self, h: tf.Tensor, t_emb: tf.Tensor) -> tf.Tensor:
        if t_emb.shape[-1] != self.time_embed_dim:
            raise ShapeMismatchError(
                "AdaGN expects a timestep embedding of size {}, got {}."
                "".format(self.time_embed_dim, t_emb.shape[-1]))
        if h.shape[-1] != self.channels:
            raise ShapeMismatchError(
                "AdaGN expects {} feature channels, got {}."
                "".format(self.channels, h.shape[-1]))
        scale_shift = self.projection(t_emb)[:, tf.newaxis, tf.newaxis, :]
        a, b = tf.split(scale_shift, 2, axis=-1)
        return a * self.norm(h) + b


class ResBlock(layers.Layer):
    """Residual block, timestep modulated when `time_embed_dim` is set."""

    def __init__(self, channels: int,
                 groups: int = 32,
                 dropout: float = 0.0,
                 time_embed_dim: Optional[int] = None,
                 **kwargs: Any) -> None:
        super(ResBlock, self).__init__(**kwargs)
        self.channels = channels
        self.groups = groups
        self.time_embed_dim = time_embed_dim

        self.conv1 = layers.Conv2D(channels, 3, padding="same",
                                   kernel_initializer=kernel_init(1.0))
        if time_embed_dim:
            self.norm2 = AdaGN(channels, time_embed_dim, groups)
        else:
            self.norm2 = layers.GroupNormalization(
                groups=norm_groups(channels, groups))
        self.dropout = layers.Dropout(dropout)
        self.conv2 = layers.Conv2D(channels, 3, padding="same",
                                   kernel_initializer=kernel_init(0.0))
        self.skip = None

    def build(self, input_shape):
        in_channels = int(input_shape[-1])
        self.norm1 = layers.GroupNormalization(
            groups=norm_groups(in_channels, self.groups))
        if in_channels != self.channels:
            self.skip = layers.Conv2D(self.channels, 1,
                                      kernel_initializer=kernel_init(1.0))
        super(ResBlock, self).build(input_shape)

    def call(self, x: tf.Tensor,
             t_emb: Optional[tf.Tensor] = None,
             training: bool = False) -> tf.Tensor:
        h = self.conv1(tf.nn.swish(self.norm1(x)))
        if self.time_embed_dim:
            h = self.norm2(h, tf.nn.swish(t_emb))
        else:
            h = self.norm2(h)
        h = self.conv2(self.dropout(tf.nn.swish(h), training=training))
        residual = self.skip(x) if self.skip is not None else x
        return residual + h


class AttentionBlock(layers.Layer):
    """Multi-head self-attention over all spatial positions."""

    def __init__(self, channels: int, groups: int = 32, num_heads: int = 1,
                 **kwargs: Any) -> None:
        super(AttentionBlock, self).__init__(**kwargs)
        self.norm = layers.GroupNormalization(
            groups=norm_groups(channels, groups))
        self.attention = layers.MultiHeadAttention(
            num_heads=num_heads, key_dim=max(channels // num_heads, 1),
            kernel_initializer=kernel_init(1.0))

    def call(self, x: tf.Tensor) -> tf.Tensor:
        shape = tf.shape(x)
        tokens = tf.reshape(self.norm(x), [shape[0], -1, x.shape[-1]])
        attended = self.attention(tokens, tokens)
        return x + tf.reshape(attended, shape)


class Downsample(layers.Layer):
    def __init__(self, channels: int, **kwargs: Any) -> None:
        super(Downsample, self).__init__(**kwargs)
        self.conv = layers.Conv2D(channels, 3, strides=2, padding="same",
                                  kernel_initializer=kernel_init(1.0))

    def call(self, x: tf.Tensor) -> tf.Tensor:
        return self.conv(x)


class Upsample(layers.Layer):
    def __init__(self, channels: int, interpolation: Text = "nearest",
                 **kwargs: Any) -> None:
        super(Upsample, self).__init__(**kwargs)
        self.upsample = layers.UpSampling2D(size=2,
                                            interpolation=interpolation)
        self.conv = layers.Conv2D(channels, 3, padding="same",
                                  kernel_initializer=kernel_init(1.0))

    def call(self, x: tf.Tensor) -> tf.Tensor:
        return self.conv(self.upsample(x))
