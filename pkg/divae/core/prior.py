import logging
import math
from typing import Any, List, Optional, Sequence, Text

import numpy as np
import tensorflow as tf
from tqdm import tqdm

from divae.core.exceptions import (
    CodeIndexError, InvalidConfigException, ValidationError)

logger = logging.getLogger(__name__)

CONDITION_MODES = ("class-label", "token-text")
# utf-8 bytes plus a padding token
TEXT_VOCAB_SIZE = 257
TEXT_PAD_ID = 256

layers = tf.keras.layers


class PriorConfig(object):
    """Sizes of the autoregressive latent prior.

    The input vocabulary holds the `K` latent codes, then the condition
    tokens, then one separator that starts the latent sequence."""

    def __init__(self,
                 K: int,
                 seq_len: int,
                 num_layers: int = 4,
                 num_heads: int = 4,
                 width: int = 128,
                 condition_mode: Text = "class-label",
                 num_classes: int = 1,
                 max_prompt_len: int = 16,
                 dropout: float = 0.0) -> None:
        if condition_mode not in CONDITION_MODES:
            raise InvalidConfigException(
                "Unknown condition mode '{}'. Choose one of {}."
                "".format(condition_mode, ", ".join(CONDITION_MODES)))
        if K < 1 or seq_len < 1:
            raise InvalidConfigException(
                "The prior needs a positive codebook size and sequence length.")
        if width % num_heads != 0:
            raise InvalidConfigException(
                "The prior width {} is not divisible by {} heads."
                "".format(width, num_heads))
        self.K = K
        self.seq_len = seq_len
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.width = width
        self.condition_mode = condition_mode
        self.num_classes = max(num_classes, 1)
        self.max_prompt_len = max_prompt_len
        self.dropout = dropout

    @property
    def condition_vocab(self) -> int:
        if self.condition_mode == "class-label":
            return self.num_classes
        return TEXT_VOCAB_SIZE

    @property
    def prefix_len(self) -> int:
        if self.condition_mode == "class-label":
            return 1
        return self.max_prompt_len

    @property
    def separator_id(self) -> int:
        return self.K + self.condition_vocab

    @property
    def vocab(self) -> int:
        return self.K + self.condition_vocab + 1

    @property
    def max_len(self) -> int:
        return self.prefix_len + self.seq_len


class PromptTokenizer(object):
    """Turns prompts into condition ids, relative to the condition vocab.

    In class-label mode a prompt has to be one of the known labels, in
    token-text mode it is encoded to padded utf-8 bytes."""

    def __init__(self, cfg: PriorConfig,
                 labels: Optional[Sequence[Text]] = None) -> None:
        self.cfg = cfg
        self.labels = list(labels or [])
        if cfg.condition_mode == "class-label" and not self.labels:
            # a single unnamed class turns the prior unconditional
            self.labels = [""]

    def encode(self, prompt: Text) -> List[int]:
        if self.cfg.condition_mode == "class-label":
            if prompt not in self.labels:
                raise ValidationError(
                    "Unknown class label '{}'. Known labels are: {}."
                    "".format(prompt, ", ".join(self.labels)))
            return [self.labels.index(prompt)]

        ids = list(prompt.encode("utf-8"))[:self.cfg.max_prompt_len]
        return ids + [TEXT_PAD_ID] * (self.cfg.max_prompt_len - len(ids))

    def encode_batch(self, prompts: Sequence[Text]) -> np.ndarray:
        return np.array([self.encode(p) for p in prompts], dtype=np.int32)


class TransformerBlock(layers.Layer):
    def __init__(self, width: int, num_heads: int, dropout: float = 0.0,
                 **kwargs: Any) -> None:
        super(TransformerBlock, self).__init__(**kwargs)
        self.norm1 = layers.LayerNormalization(epsilon=1e-5)
        self.attention = layers.MultiHeadAttention(
            num_heads=num_heads, key_dim=width // num_heads, dropout=dropout)
        self.norm2 = layers.LayerNormalization(epsilon=1e-5)
        self.mlp_in = layers.Dense(4 * width, activation=tf.nn.gelu)
        self.mlp_out = layers.Dense(width)
        self.dropout = layers.Dropout(dropout)

    def call(self, x: tf.Tensor, training: bool = False) -> tf.Tensor:
        h = self.norm1(x)
        x += self.attention(h, h, use_causal_mask=True, training=training)
        h = self.mlp_out(self.mlp_in(self.norm2(x)))
        return x + self.dropout(h, training=training)


class LatentPrior(tf.keras.Model):
    """Decoder-only transformer over `[condition, separator, codes]`.

    The output head only covers the `K` latent codes, so condition tokens
    can never be generated."""

    def __init__(self, cfg: PriorConfig, name: Text = "prior",
                 **kwargs: Any) -> None:
        super(LatentPrior, self).__init__(name=name, **kwargs)
        self.cfg = cfg
        self.token_embedding = layers.Embedding(cfg.vocab, cfg.width)
        self.position_embedding = layers.Embedding(cfg.max_len, cfg.width)
        self.blocks = [TransformerBlock(cfg.width, cfg.num_heads, cfg.dropout,
                                        name="block_{}".format(i))
                       for i in range(cfg.num_layers)]
        self.norm = layers.LayerNormalization(epsilon=1e-5)
        self.head = layers.Dense(cfg.K)

    def input_ids(self, condition_ids: tf.Tensor,
                  tokens: tf.Tensor) -> tf.Tensor:
        """Shifts codes right behind the condition prefix and separator."""

        cfg = self.cfg
        condition_ids = tf.cast(condition_ids, tf.int32) + cfg.K
        tokens = tf.cast(tokens, tf.int32)
        separator = tf.fill([tf.shape(tokens)[0], 1], cfg.separator_id)
        return tf.concat([condition_ids, separator, tokens], axis=1)

    def call(self, ids: tf.Tensor, training: bool = False) -> tf.Tensor:
        length = tf.shape(ids)[1]
        h = (self.token_embedding(ids) +
             self.position_embedding(tf.range(length))[tf.newaxis])
        for block in self.blocks:
            h = block(h, training=training)
        return self.head(self.norm(h))

    def code_logits(self,
                    condition_ids: Any,
                    tokens: Any,
                    training: bool = False) -> tf.Tensor:
        """Logits `[batch, n, K]` predicting codes `0..n-1` from codes
        `0..n-2` given the true preceding codes."""

        condition_ids = tf.convert_to_tensor(condition_ids)
        tokens = tf.convert_to_tensor(tokens)
        ids = self.input_ids(condition_ids, tokens[:, :-1])
        logits = self(ids, training=training)
        return logits[:, self.cfg.prefix_len:]


def check_tokens(tokens: Any, K: int) -> None:
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= K):
        raise CodeIndexError(
            "Latent tokens have to lie in [0, {}), got values in [{}, {}]."
            "".format(K, tokens.min(), tokens.max()))


def prior_loss(tokens: Any,
               condition_ids: Any,
               model: LatentPrior,
               training: bool = False) -> tf.Tensor:
    """Next token cross-entropy of a batch of code sequences, in nats."""

    tokens = tf.reshape(tf.convert_to_tensor(tokens, tf.int32),
                        [-1, model.cfg.seq_len])
    if tf.executing_eagerly():
        check_tokens(tokens.numpy(), model.cfg.K)
    logits = model.code_logits(condition_ids, tokens, training=training)
    return tf.reduce_mean(tf.keras.losses.sparse_categorical_crossentropy(
        tokens, logits, from_logits=True))


def prior_train_step(tokens: Any,
                     condition_ids: Any,
                     model: LatentPrior,
                     optimizer: tf.keras.optimizers.Optimizer,
                     grad_clip: Optional[float] = None) -> float:
    """One update on true code sequences, returns the loss before it."""

    with tf.GradientTape() as tape:
        loss = prior_loss(tokens, condition_ids, model, training=True)
    gradients = tape.gradient(loss, model.trainable_variables)
    if grad_clip:
        gradients, _ = tf.clip_by_global_norm(gradients, grad_clip)
    optimizer.apply_gradients(zip(gradients, model.trainable_variables))
    return float(loss)


def prior_generate(condition_ids: Any,
                   model: LatentPrior,
                   temperature: float = 1.0,
                   seed: Optional[int] = 0,
                   progress: bool = False) -> np.ndarray:
    """Samples `seq_len` codes per condition one token at a time.

    Returns an int array `[batch, seq_len]`; a temperature of `0` picks the
    most likely code at every position."""

    if temperature < 0 or not math.isfinite(temperature):
        raise InvalidConfigException(
            "The sampling temperature has to be non-negative, got {}."
            "".format(temperature))

    condition_ids = np.asarray(condition_ids, dtype=np.int32)
    if condition_ids.ndim == 1:
        condition_ids = condition_ids[np.newaxis]
    batch = condition_ids.shape[0]
    generator = (tf.random.Generator.from_seed(seed) if seed is not None
                 else tf.random.Generator.from_non_deterministic_state())

    tokens = tf.zeros([batch, 0], dtype=tf.int32)
    for _ in tqdm(range(model.cfg.seq_len), desc="prior",
                  disable=not progress):
        logits = model(model.input_ids(condition_ids, tokens))[:, -1]
        if temperature == 0:
            next_token = tf.argmax(logits, axis=-1, output_type=tf.int32)
        else:
            next_token = tf.random.stateless_categorical(
                tf.cast(logits, tf.float32) / temperature, 1,
                seed=generator.make_seeds(1)[:, 0], dtype=tf.int32)[:, 0]
        tokens = tf.concat([tokens, next_token[:, tf.newaxis]], axis=1)
    return tokens.numpy()
