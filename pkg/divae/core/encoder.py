import logging
import math
from typing import Any, Text

import tensorflow as tf

from divae.core import utils
from divae.core.exceptions import InvalidConfigException, ShapeMismatchError
from divae.core.layers import (
    Downsample, ResBlock, Upsample, kernel_init, norm_groups)

logger = logging.getLogger(__name__)

ENCODER_RATES = (8, 16)
MAX_CHANNEL_MULT = 4


class EncoderConfig(object):
    """Architecture of the image encoder.

    Args:
        rate: Spatial downsampling factor between image and latent grid.
        channels: Channel count of the first stage.
        d: Dimension of the emitted latent vectors.
        input_resolution: Side length of the square input images.
        norm_groups: Maximum number of groups of the group norms.
    """

    def __init__(self,
                 rate: int = 8,
                 channels: int = 32,
                 d: int = 4,
                 input_resolution: int = 32,
                 norm_groups: int = 8) -> None:
        if rate not in ENCODER_RATES:
            raise InvalidConfigException(
                "The encoder rate has to be one of {}, got {}."
                "".format(ENCODER_RATES, rate))
        if input_resolution % rate != 0:
            raise InvalidConfigException(
                "The input resolution {} is not divisible by the encoder "
                "rate {}.".format(input_resolution, rate))
        if channels < 1 or d < 1:
            raise InvalidConfigException(
                "Encoder channels and code dimension have to be positive.")

        self.rate = rate
        self.channels = channels
        self.d = d
        self.input_resolution = input_resolution
        self.norm_groups = norm_groups

    @property
    def num_stages(self) -> int:
        return int(round(math.log2(self.rate)))

    @property
    def latent_resolution(self) -> int:
        return self.input_resolution // self.rate

    def stage_channels(self, stage: int) -> int:
        return self.channels * min(2 ** stage, MAX_CHANNEL_MULT)

    def as_dict(self):
        return {"rate": self.rate,
                "channels": self.channels,
                "d": self.d,
                "input_resolution": self.input_resolution,
                "norm_groups": self.norm_groups}


class Encoder(tf.keras.Model):
    """Strided residual encoder mapping images to latent vectors.

    Each stage is a residual block followed by a stride-2 convolution,
    a final 1x1 convolution projects to the code dimension."""

    def __init__(self, cfg: EncoderConfig, name: Text = "encoder",
                 **kwargs: Any) -> None:
        super(Encoder, self).__init__(name=name, **kwargs)
        self.cfg = cfg
        groups = cfg.norm_groups

        self.stem = tf.keras.layers.Conv2D(
            cfg.channels, 3, padding="same",
            kernel_initializer=kernel_init(1.0))
        self.blocks = [ResBlock(cfg.stage_channels(stage), groups)
                       for stage in range(cfg.num_stages)]
        self.downsamples = [Downsample(cfg.stage_channels(stage))
                            for stage in range(cfg.num_stages)]
        out_channels = cfg.stage_channels(cfg.num_stages - 1)
        self.out_block = ResBlock(out_channels, groups)
        self.out_norm = tf.keras.layers.GroupNormalization(
            groups=norm_groups(out_channels, groups))
        self.projection = tf.keras.layers.Conv2D(
            cfg.d, 1, kernel_initializer=kernel_init(1.0))

    def call(self, x: tf.Tensor, training: bool = False) -> tf.Tensor:
        h = self.stem(x)
        for block, downsample in zip(self.blocks, self.downsamples):
            h = downsample(block(h, training=training))
        h = self.out_block(h, training=training)
        return self.projection(tf.nn.swish(self.out_norm(h)))


class AuxiliaryDecoder(tf.keras.Model):
    """Small convolutional decoder used to train the encoder and codebook
    before the diffusion decoder exists."""

    def __init__(self, cfg: EncoderConfig, channels: int = 32,
                 name: Text = "aux_decoder", **kwargs: Any) -> None:
        super(AuxiliaryDecoder, self).__init__(name=name, **kwargs)
        self.cfg = cfg
        self.stem = tf.keras.layers.Conv2D(
            channels, 3, padding="same", kernel_initializer=kernel_init(1.0))
        self.upsamples = [Upsample(channels) for _ in range(cfg.num_stages)]
        self.blocks = [ResBlock(channels, cfg.norm_groups)
                       for _ in range(cfg.num_stages)]
        self.out_norm = tf.keras.layers.GroupNormalization(
            groups=norm_groups(channels, cfg.norm_groups))
        self.out = tf.keras.layers.Conv2D(
            3, 3, padding="same", kernel_initializer=kernel_init(1.0))

    def call(self, z_q: tf.Tensor, training: bool = False) -> tf.Tensor:
        h = self.stem(z_q)
        for upsample, block in zip(self.upsamples, self.blocks):
            h = block(upsample(h), training=training)
        return self.out(tf.nn.swish(self.out_norm(h)))


def check_image_batch(x: tf.Tensor, resolution: int) -> None:
    if (x.shape.rank != 4 or x.shape[1] != resolution or
            x.shape[2] != resolution or x.shape[3] != 3):
        raise ShapeMismatchError(
            "Expected images of shape [batch, {0}, {0}, 3], got {1}."
            "".format(resolution, x.shape))


def clip_pixels(x: tf.Tensor) -> tf.Tensor:
    """Clips pixels to [-1, 1], warning if anything had to be clipped."""

    if tf.executing_eagerly():
        low = float(tf.reduce_min(x))
        high = float(tf.reduce_max(x))
        if low < -1. or high > 1.:
            logger.warning("Pixel values in [{:.3f}, {:.3f}] lie outside "
                           "[-1, 1] and were clipped.".format(low, high))
    return tf.clip_by_value(x, -1., 1.)


def encode(x: Any, encoder: Encoder, training: bool = False) -> tf.Tensor:
    """Encodes images in [-1, 1] to a `[batch, H/rate, W/rate, d]` grid.

    A single image without a batch axis is encoded to `[h, w, d]`."""

    x = utils.float_tensor(x)
    unbatched = x.shape.rank == 3
    if unbatched:
        x = x[tf.newaxis]
    check_image_batch(x, encoder.cfg.input_resolution)

    z = encoder(clip_pixels(x), training=training)
    return z[0] if unbatched else z
