import math

import numpy as np
import pytest
import tensorflow as tf

from divae.core import prior
from divae.core.exceptions import (
    CodeIndexError, InvalidConfigException, ValidationError)
from divae.core.prior import LatentPrior, PriorConfig, PromptTokenizer


def small_prior(K=8, seq_len=4, mode="class-label", num_classes=2):
    cfg = PriorConfig(K, seq_len, num_layers=1, num_heads=2, width=16,
                      condition_mode=mode, num_classes=num_classes,
                      max_prompt_len=6)
    model = LatentPrior(cfg)
    model(tf.zeros([1, cfg.max_len], tf.int32))
    return model


@pytest.mark.parametrize("kwargs", [{"condition_mode": "image"},
                                    {"width": 10, "num_heads": 4},
                                    {"K": 0}])
def test_invalid_prior_config(kwargs):
    values = dict(K=8, seq_len=4)
    values.update(kwargs)

    with pytest.raises(InvalidConfigException):
        PriorConfig(**values)


def test_vocabulary_layout():
    cfg = PriorConfig(8, 4, condition_mode="class-label", num_classes=3)

    assert cfg.vocab == 8 + 3 + 1
    assert cfg.separator_id == 11
    assert cfg.max_len == 1 + 4

    text = PriorConfig(8, 4, condition_mode="token-text", max_prompt_len=6)
    assert text.condition_vocab == prior.TEXT_VOCAB_SIZE
    assert text.max_len == 6 + 4


def test_class_label_prompts():
    cfg = PriorConfig(8, 4, num_classes=2)
    tokenizer = PromptTokenizer(cfg, ["blue", "red"])

    assert tokenizer.encode("red") == [1]
    assert tokenizer.encode_batch(["blue", "red"]).tolist() == [[0], [1]]
    with pytest.raises(ValidationError):
        tokenizer.encode("green")


def test_unlabelled_prior_uses_one_empty_class():
    tokenizer = PromptTokenizer(PriorConfig(8, 4))

    assert tokenizer.labels == [""]
    assert tokenizer.encode("") == [0]


def test_text_prompts_are_padded_bytes():
    cfg = PriorConfig(8, 4, condition_mode="token-text", max_prompt_len=6)
    tokenizer = PromptTokenizer(cfg)

    assert tokenizer.encode("ab") == [97, 98] + [prior.TEXT_PAD_ID] * 4
    assert len(tokenizer.encode("a much longer prompt")) == 6


def test_input_ids_layout():
    model = small_prior()

    ids = model.input_ids(tf.constant([[1]]), tf.constant([[5, 6]]))

    assert ids.numpy().tolist() == [[8 + 1, model.cfg.separator_id, 5, 6]]


def test_uniform_prior_loss_is_log_k():
    model = small_prior()
    model.head.kernel.assign(tf.zeros_like(model.head.kernel))
    model.head.bias.assign(tf.zeros_like(model.head.bias))
    tokens = np.random.RandomState(0).randint(0, 8, (3, 4))

    loss = prior.prior_loss(tokens, np.zeros((3, 1), np.int32), model)

    assert float(loss) == pytest.approx(math.log(8), rel=1e-5)


def test_out_of_range_tokens():
    model = small_prior()

    with pytest.raises(CodeIndexError):
        prior.prior_loss(np.array([[0, 1, 2, 8]]), np.zeros((1, 1)), model)


def test_logits_are_causal():
    model = small_prior()
    ids = np.array([[9, 10, 1, 2, 3]], np.int32)
    changed = ids.copy()
    changed[0, -1] = 7

    before = model(ids).numpy()
    after = model(changed).numpy()

    np.testing.assert_allclose(before[:, :-1], after[:, :-1], atol=1e-6)


def test_generation_shapes_and_range():
    model = small_prior()

    tokens = prior.prior_generate(np.array([[0], [1], [1]]), model,
                                  temperature=1., seed=0)

    assert tokens.shape == (3, 4)
    assert tokens.min() >= 0 and tokens.max() < 8


def test_greedy_generation_is_deterministic():
    model = small_prior()
    condition = np.array([[1]])

    first = prior.prior_generate(condition, model, temperature=0.)
    second = prior.prior_generate(condition, model, temperature=0.,
                                  seed=None)

    np.testing.assert_array_equal(first, second)


def test_seeded_sampling_is_reproducible():
    model = small_prior()
    condition = np.zeros((4, 1), np.int32)

    np.testing.assert_array_equal(
        prior.prior_generate(condition, model, 1.5, seed=3),
        prior.prior_generate(condition, model, 1.5, seed=3))


def test_negative_temperature():
    with pytest.raises(InvalidConfigException):
        prior.prior_generate(np.array([[0]]), small_prior(), -1.)


def test_prior_memorizes_one_sequence():
    model = small_prior()
    optimizer = tf.keras.optimizers.Adam(1e-2)
    tokens = np.array([[3, 1, 4, 1]])
    condition = np.array([[1]])

    first = prior.prior_train_step(tokens, condition, model, optimizer, 1.)
    for _ in range(300):
        prior.prior_train_step(tokens, condition, model, optimizer, 1.)
    last = float(prior.prior_loss(tokens, condition, model))

    assert first == pytest.approx(math.log(8), rel=0.5)
    assert last < 0.1 * math.log(8)
    np.testing.assert_array_equal(
        prior.prior_generate(condition, model, temperature=0.), tokens)
