import logging
import math
from collections import namedtuple
from typing import Any, List, Optional, Sequence, Text, Tuple

import tensorflow as tf

from divae.core import utils
from divae.core.exceptions import InvalidConfigException, ShapeMismatchError
from divae.core.layers import (
    AttentionBlock, Downsample, ResBlock, TimestepEmbedding, Upsample,
    kernel_init, norm_groups)

logger = logging.getLogger(__name__)

layers = tf.keras.layers

INJECTION_METHODS = ("concat", "add", "attention")
INJECTION_POSITIONS = ("encoder", "middle", "decoder")

DiffusionOutput = namedtuple("DiffusionOutput", ["eps_pred", "v_pred"])


class InjectionSpec(namedtuple("InjectionSpec", ["method", "position"])):
    """Where and how the latent codes enter the denoising network."""

    def __new__(cls, method: Text = "concat", position: Text = "middle"):
        if method not in INJECTION_METHODS:
            raise InvalidConfigException(
                "Unknown injection method '{}'. Choose one of {}."
                "".format(method, ", ".join(INJECTION_METHODS)))
        if position not in INJECTION_POSITIONS:
            raise InvalidConfigException(
                "Unknown injection position '{}'. Choose one of {}."
                "".format(position, ", ".join(INJECTION_POSITIONS)))
        return super(InjectionSpec, cls).__new__(cls, method, position)

    def __str__(self):
        return "{}@{}".format(self.method, self.position)


def ablation_grid() -> List[InjectionSpec]:
    """Every combination of injection method and position."""

    return [InjectionSpec(method, position)
            for method in INJECTION_METHODS
            for position in INJECTION_POSITIONS]


class UNetConfig(object):
    """Architecture of the denoising network.

    Args:
        image_resolution: Side length of `x_t`.
        latent_resolution: Side length of the latent grid `z_q`.
        cond_channels: Channel count of `z_q`, the codebook dimension.
        base_channels: Channels of the first stage.
        channel_mults: Channel multiplier of every stage, one stage per
            resolution.
        num_res_blocks: Residual blocks per stage.
        attn_resolutions: Feature map sides that get self-attention.
        time_embed_dim: Size of the timestep embedding.
        dropout: Dropout rate inside the residual blocks.
        norm_groups: Maximum number of groups of the group norms.
        num_heads: Attention heads of self and cross attention.
        injection: The `InjectionSpec`.
        cond_projection_channels: Channels the codes are projected to before
            injection; `0` uses the channel count of the injection block.
    """

    def __init__(self,
                 image_resolution: int = 32,
                 latent_resolution: int = 4,
                 cond_channels: int = 4,
                 base_channels: int = 32,
                 channel_mults: Sequence[int] = (1, 2, 2, 2),
                 num_res_blocks: int = 1,
                 attn_resolutions: Sequence[int] = (8,),
                 time_embed_dim: int = 128,
                 dropout: float = 0.0,
                 norm_groups: int = 8,
                 num_heads: int = 1,
                 injection: Optional[InjectionSpec] = None,
                 cond_projection_channels: int = 0,
                 in_channels: int = 3,
                 out_channels: int = 6) -> None:
        if out_channels != 2 * in_channels:
            raise InvalidConfigException(
                "The network predicts noise and variance interpolation, so "
                "out_channels has to be {}, got {}."
                "".format(2 * in_channels, out_channels))
        if not channel_mults:
            raise InvalidConfigException("At least one UNet stage is needed.")
        depth = 2 ** (len(channel_mults) - 1)
        if image_resolution % depth != 0:
            raise InvalidConfigException(
                "The image resolution {} is not divisible by {}, the "
                "downsampling factor of {} stages."
                "".format(image_resolution, depth, len(channel_mults)))
        if cond_projection_channels < 0:
            raise InvalidConfigException(
                "cond_projection_channels can not be negative.")

        self.image_resolution = image_resolution
        self.latent_resolution = latent_resolution
        self.cond_channels = cond_channels
        self.base_channels = base_channels
        self.channel_mults = tuple(channel_mults)
        self.num_res_blocks = num_res_blocks
        self.attn_resolutions = tuple(attn_resolutions)
        self.time_embed_dim = time_embed_dim
        self.dropout = dropout
        self.norm_groups = norm_groups
        self.num_heads = num_heads
        self.injection = injection or InjectionSpec()
        self.cond_projection_channels = cond_projection_channels
        self.in_channels = in_channels
        self.out_channels = out_channels

    @property
    def num_stages(self) -> int:
        return len(self.channel_mults)

    def stage_channels(self, stage: int) -> int:
        return self.base_channels * self.channel_mults[stage]

    def stage_resolution(self, stage: int) -> int:
        return self.image_resolution // 2 ** stage

    @property
    def middle_resolution(self) -> int:
        return self.stage_resolution(self.num_stages - 1)

    def injection_stage(self) -> int:
        """Stage of an encoder or decoder position injection.

        The stage whose resolution matches the latent grid, otherwise the
        closest one with ties going to the higher resolution."""

        target = math.log2(self.latent_resolution)
        distances = [abs(math.log2(self.stage_resolution(s)) - target)
                     for s in range(self.num_stages)]
        return distances.index(min(distances))

    def injection_site(self) -> Tuple[int, int]:
        """Feature resolution and channel count at the injection point."""

        position = self.injection.position
        last = self.num_stages - 1
        if position == "middle":
            return self.middle_resolution, self.stage_channels(last)
        stage = self.injection_stage()
        if position == "encoder":
            return self.stage_resolution(stage), self.stage_channels(stage)
        # decoder stages start with the output of the stage below
        return (self.stage_resolution(stage),
                self.stage_channels(min(stage + 1, last)))

    def as_dict(self):
        return {"image_resolution": self.image_resolution,
                "latent_resolution": self.latent_resolution,
                "cond_channels": self.cond_channels,
                "base_channels": self.base_channels,
                "channel_mults": list(self.channel_mults),
                "num_res_blocks": self.num_res_blocks,
                "attn_resolutions": list(self.attn_resolutions),
                "time_embed_dim": self.time_embed_dim,
                "dropout": self.dropout,
                "norm_groups": self.norm_groups,
                "num_heads": self.num_heads,
                "inject_method": self.injection.method,
                "inject_position": self.injection.position,
                "cond_projection_channels": self.cond_projection_channels}


def resize_nearest(z: tf.Tensor, resolution: int) -> tf.Tensor:
    """Nearest neighbour resize of a square grid by an integer factor."""

    side = z.shape[1]
    if side == resolution:
        return z
    if resolution > side and resolution % side == 0:
        factor = resolution // side
        return tf.repeat(tf.repeat(z, factor, axis=1), factor, axis=2)
    if side > resolution and side % resolution == 0:
        factor = side // resolution
        start = factor // 2
        return z[:, start::factor, start::factor, :]
    raise ShapeMismatchError(
        "Can not resize a {0}x{0} latent grid to the {1}x{1} feature map of "
        "the injection point, the sides are no integer multiples."
        "".format(side, resolution))


class ConcatInjection(layers.Layer):
    """Concatenates projected codes to the features and mixes them back to
    the feature channel count with a 1x1 convolution."""

    def __init__(self, channels: int, projection_channels: int = 0,
                 **kwargs: Any) -> None:
        super(ConcatInjection, self).__init__(**kwargs)
        self.channels = channels
        self.projection_channels = projection_channels or channels
        self.projection = layers.Conv2D(self.projection_channels, 1,
                                        kernel_initializer=kernel_init(1.0))
        self.mix = layers.Conv2D(channels, 1,
                                 kernel_initializer=kernel_init(1.0))

    @property
    def intermediate_channels(self) -> int:
        return self.channels + self.projection_channels

    def call(self, features: tf.Tensor, z_q: tf.Tensor) -> tf.Tensor:
        cond = self.projection(resize_nearest(z_q, features.shape[1]))
        return self.mix(tf.concat([features, cond], axis=-1))


class AddInjection(layers.Layer):
    """Adds a learned projection of the codes to the features."""

    def __init__(self, channels: int, projection_channels: int = 0,
                 **kwargs: Any) -> None:
        super(AddInjection, self).__init__(**kwargs)
        projection_channels = projection_channels or channels
        if projection_channels != channels:
            raise ShapeMismatchError(
                "Additive injection needs the code projection to emit the "
                "{} channels of the injection block, got {}."
                "".format(channels, projection_channels))
        self.channels = channels
        self.projection = layers.Conv2D(channels, 1,
                                        kernel_initializer=kernel_init(1.0))

    def call(self, features: tf.Tensor, z_q: tf.Tensor) -> tf.Tensor:
        if features.shape[-1] != self.channels:
            raise ShapeMismatchError(
                "Additive injection expects {} feature channels, got {}."
                "".format(self.channels, features.shape[-1]))
        return features + self.projection(
            resize_nearest(z_q, features.shape[1]))


class AttentionInjection(layers.Layer):
    """Cross-attention from the features to the code tokens.

    The latent grid is flattened to `h * w` tokens that carry a learned
    positional embedding, so no resizing is involved."""

    def __init__(self, channels: int, num_tokens: int,
                 projection_channels: int = 0,
                 num_heads: int = 1, groups: int = 32,
                 **kwargs: Any) -> None:
        super(AttentionInjection, self).__init__(**kwargs)
        self.channels = channels
        self.num_tokens = num_tokens
        self.projection_channels = projection_channels or channels
        self.norm = layers.GroupNormalization(
            groups=norm_groups(channels, groups))
        self.projection = layers.Dense(self.projection_channels,
                                       kernel_initializer=kernel_init(1.0))
        self.attention = layers.MultiHeadAttention(
            num_heads=num_heads, key_dim=max(channels // num_heads, 1),
            kernel_initializer=kernel_init(1.0))
        self.positions = self.add_weight(
            name="positions",
            shape=(num_tokens, self.projection_channels),
            initializer=tf.keras.initializers.RandomNormal(stddev=0.02),
            trainable=True)

    def call(self, features: tf.Tensor, z_q: tf.Tensor) -> tf.Tensor:
        shape = tf.shape(features)
        num_tokens = z_q.shape[1] * z_q.shape[2]
        if num_tokens != self.num_tokens:
            raise ShapeMismatchError(
                "Attention injection was built for {} latent tokens, got {}."
                "".format(self.num_tokens, num_tokens))
        tokens = self.projection(
            tf.reshape(z_q, [shape[0], num_tokens, z_q.shape[-1]]))
        tokens += self.positions[tf.newaxis]

        queries = tf.reshape(self.norm(features),
                             [shape[0], -1, self.channels])
        attended = self.attention(queries, tokens)
        return features + tf.reshape(attended, shape)


INJECTION_LAYERS = {
    "concat": ConcatInjection,
    "add": AddInjection,
    "attention": AttentionInjection,
}


def build_injection(cfg: UNetConfig) -> layers.Layer:
    """Creates the injection layer for the position in `cfg.injection`."""

    _, channels = cfg.injection_site()
    layer_class = INJECTION_LAYERS[cfg.injection.method]
    kwargs = {"projection_channels": cfg.cond_projection_channels,
              "name": "inject_{}".format(cfg.injection.method)}
    if layer_class is AttentionInjection:
        kwargs.update(num_tokens=cfg.latent_resolution ** 2,
                      num_heads=cfg.num_heads, groups=cfg.norm_groups)
    return layer_class(channels, **kwargs)


def inject(features: tf.Tensor, z_q: tf.Tensor,
           layer: layers.Layer) -> tf.Tensor:
    if features.shape[-1] != getattr(layer, "channels", features.shape[-1]):
        raise ShapeMismatchError(
            "The injection layer expects {} channels, got {}."
            "".format(layer.channels, features.shape[-1]))
    return layer(features, z_q)


class DiffusionUNet(tf.keras.Model):
    """Denoising network predicting noise and variance interpolation.

    The output has six channels: three for the noise prediction and three
    for `v`, squashed to [0, 1] by a sigmoid."""

    def __init__(self, cfg: UNetConfig, name: Text = "unet",
                 **kwargs: Any) -> None:
        super(DiffusionUNet, self).__init__(name=name, **kwargs)
        self.cfg = cfg
        groups = cfg.norm_groups
        temb = cfg.time_embed_dim
        last = cfg.num_stages - 1

        def res_block(channels, block_name):
            return ResBlock(channels, groups, cfg.dropout, temb,
                            name=block_name)

        def attention(stage, block_name):
            if cfg.stage_resolution(stage) in cfg.attn_resolutions:
                return AttentionBlock(cfg.stage_channels(stage), groups,
                                      cfg.num_heads, name=block_name)
            return None

        self.time_embedding = TimestepEmbedding(temb,
                                                sinusoid_dim=cfg.base_channels,
                                                name="time_embedding")
        self.conv_in = layers.Conv2D(cfg.base_channels, 3, padding="same",
                                     kernel_initializer=kernel_init(1.0))

        self.down_blocks = []
        self.down_attention = []
        self.downsamples = []
        for stage in range(cfg.num_stages):
            channels = cfg.stage_channels(stage)
            for i in range(cfg.num_res_blocks):
                self.down_blocks.append(
                    res_block(channels, "down_{}_{}".format(stage, i)))
                self.down_attention.append(
                    attention(stage, "down_attn_{}_{}".format(stage, i)))
            if stage != last:
                self.downsamples.append(Downsample(channels))

        middle_channels = cfg.stage_channels(last)
        self.middle_block1 = res_block(middle_channels, "middle_1")
        self.middle_attention = AttentionBlock(middle_channels, groups,
                                               cfg.num_heads)
        self.middle_block2 = res_block(middle_channels, "middle_2")

        self.up_blocks = []
        self.up_attention = []
        self.upsamples = []
        for stage in reversed(range(cfg.num_stages)):
            channels = cfg.stage_channels(stage)
            for i in range(cfg.num_res_blocks + 1):
                self.up_blocks.append(
                    res_block(channels, "up_{}_{}".format(stage, i)))
                self.up_attention.append(
                    attention(stage, "up_attn_{}_{}".format(stage, i)))
            if stage != 0:
                self.upsamples.append(Upsample(channels))

        self.norm_out = layers.GroupNormalization(
            groups=norm_groups(cfg.base_channels, groups))
        self.conv_out = layers.Conv2D(cfg.out_channels, 3, padding="same",
                                      kernel_initializer=kernel_init(0.0))

        self.injection_stage = cfg.injection_stage()
        self.injection = build_injection(cfg)

    def _check_condition(self, xt: tf.Tensor, z_q: tf.Tensor) -> None:
        cfg = self.cfg
        if xt.shape.rank != 4 or xt.shape[-1] != cfg.in_channels:
            raise ShapeMismatchError(
                "Expected x_t of shape [batch, H, W, {}], got {}."
                "".format(cfg.in_channels, xt.shape))
        if xt.shape[1] != cfg.image_resolution:
            raise ShapeMismatchError(
                "The network was built for {0}x{0} images, got {1}x{2}."
                "".format(cfg.image_resolution, xt.shape[1], xt.shape[2]))
        if z_q.shape.rank != 4 or z_q.shape[-1] != cfg.cond_channels:
            raise ShapeMismatchError(
                "Expected codes of shape [batch, h, w, {}], got {}."
                "".format(cfg.cond_channels, z_q.shape))
        if z_q.shape[1] != cfg.latent_resolution:
            raise ShapeMismatchError(
                "Expected a {0}x{0} latent grid for {1}x{1} images, got {2}."
                "".format(cfg.latent_resolution, cfg.image_resolution,
                          z_q.shape[1:3]))

    def _inject_here(self, position: Text, stage: Optional[int]) -> bool:
        if self.cfg.injection.position != position:
            return False
        return stage is None or stage == self.injection_stage

    def call(self,
             xt: tf.Tensor,
             t: Any,
             z_q: tf.Tensor,
             training: bool = False) -> DiffusionOutput:
        cfg = self.cfg
        last = cfg.num_stages - 1
        z_q = tf.cast(z_q, self.compute_dtype)
        self._check_condition(xt, z_q)

        t = tf.reshape(tf.convert_to_tensor(t), [-1])
        t = tf.broadcast_to(t, tf.shape(xt)[:1])
        t_emb = self.time_embedding(t)

        h = self.conv_in(xt)
        skips = [h]
        blocks = iter(zip(self.down_blocks, self.down_attention))
        for stage in range(cfg.num_stages):
            for i in range(cfg.num_res_blocks):
                block, attention = next(blocks)
                h = block(h, t_emb, training=training)
                if attention is not None:
                    h = attention(h)
                if (i == cfg.num_res_blocks - 1 and
                        self._inject_here("encoder", stage)):
                    h = inject(h, z_q, self.injection)
                skips.append(h)
            if stage != last:
                h = self.downsamples[stage](h)
                skips.append(h)

        if self._inject_here("middle", None):
            h = inject(h, z_q, self.injection)
        h = self.middle_block1(h, t_emb, training=training)
        h = self.middle_attention(h)
        h = self.middle_block2(h, t_emb, training=training)

        blocks = iter(zip(self.up_blocks, self.up_attention))
        upsamples = iter(self.upsamples)
        for stage in reversed(range(cfg.num_stages)):
            if self._inject_here("decoder", stage):
                h = inject(h, z_q, self.injection)
            for _ in range(cfg.num_res_blocks + 1):
                block, attention = next(blocks)
                h = block(tf.concat([h, skips.pop()], axis=-1), t_emb,
                          training=training)
                if attention is not None:
                    h = attention(h)
            if stage != 0:
                h = next(upsamples)(h)

        out = self.conv_out(tf.nn.swish(self.norm_out(h)))
        eps_pred, v_raw = tf.split(out, 2, axis=-1)
        return DiffusionOutput(eps_pred, tf.sigmoid(v_raw))


def unet_forward(xt: Any,
                 t: Any,
                 z_q: Any,
                 model: DiffusionUNet,
                 training: bool = False) -> DiffusionOutput:
    """Predicts noise and variance interpolation for `x_t` given codes."""

    xt = utils.float_tensor(xt)
    return model(xt, t, utils.float_tensor(z_q), training=training)
