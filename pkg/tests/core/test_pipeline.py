import numpy as np
import pytest
import tensorflow as tf

from divae.core import train
from divae.core.checkpoint import Checkpoint
from divae.core.evaluate import evaluate_image_sets
from divae.core.exceptions import (
    CheckpointError, InvalidConfigException, ShapeMismatchError)
from divae.core.pipeline import DiVAE
from divae.core.sampler import SamplerOptions
from tests.core.conftest import tiny_config
from tests.core.utilities import random_images, randomize_output


@pytest.fixture(scope="module")
def trained_model(trained_model_path):
    return DiVAE.load(trained_model_path)


def test_untrained_model_can_not_reconstruct(default_config):
    model = DiVAE(default_config)

    with pytest.raises(CheckpointError):
        model.reconstruct(random_images(2))
    with pytest.raises(InvalidConfigException):
        model.generate_tokens("red")


def test_only_trained_components_are_persisted(tmpdir):
    model = DiVAE(tiny_config(), labels=["red"])
    model.mark_trained("vq")

    checkpoint = model.persist(tmpdir.strpath, step=3, phase="vq")

    assert checkpoint.components() == ["encoder", "codebook", "aux_decoder"]
    loaded = DiVAE.load(tmpdir.strpath)
    assert loaded.trained == {"encoder", "codebook", "aux_decoder"}
    assert loaded.labels == ["red"]
    np.testing.assert_array_equal(loaded.codebook.entries.numpy(),
                                  model.codebook.entries.numpy())
    np.testing.assert_array_equal(loaded.schedule.betas,
                                  model.schedule.betas)


def test_load_missing_directory(tmpdir):
    with pytest.raises(CheckpointError):
        DiVAE.load(tmpdir.join("nothing").strpath)


def test_reconstruct_reports_metrics():
    model = DiVAE(tiny_config())
    randomize_output(model.unet, seed=1)
    model.mark_trained("vq")
    model.mark_trained("decoder")
    images = random_images(3)
    options = SamplerOptions(kind="ddim", steps=2, seed=4)

    reconstructions, metrics = model.reconstruct(images, options,
                                                 shuffled_control=True)

    assert reconstructions.shape == images.shape
    assert np.all(np.isfinite(reconstructions))
    assert metrics["n_images"] == 3
    assert metrics["fid_proxy"] >= 0.
    assert metrics["mse"] >= 0.
    assert "shuffled_mse" in metrics
    assert metrics["reference_fid"] == {"reconstruction_f8": 1.24}
    assert metrics["seconds_per_image"] == pytest.approx(
        metrics["sampling_seconds"] / 3)


def test_reconstruct_single_image_skips_fid():
    model = DiVAE(tiny_config())
    model.mark_trained("vq")
    model.mark_trained("decoder")

    _, metrics = model.reconstruct(random_images(1),
                                   SamplerOptions(kind="ddim", steps=2))

    assert "fid_proxy" not in metrics
    assert metrics["mse"] >= 0.


def test_reconstruct_rejects_wrong_resolution():
    model = DiVAE(tiny_config())
    model.mark_trained("vq")
    model.mark_trained("decoder")

    with pytest.raises(ShapeMismatchError):
        model.reconstruct(random_images(2, resolution=8))


def test_ema_decoder_is_used_once_trained(default_config):
    model = DiVAE(default_config)

    assert model.decoder() is model.unet
    model.mark_trained("decoder")
    assert model.decoder() is model.unet_ema


def test_ema_update_moves_towards_the_weights():
    model = DiVAE(tiny_config())
    randomize_output(model.unet, seed=2)
    before = model.unet_ema.conv_out.kernel.numpy()
    target = model.unet.conv_out.kernel.numpy()

    model.update_ema(0.5, step=100)

    np.testing.assert_allclose(model.unet_ema.conv_out.kernel.numpy(),
                               0.5 * before + 0.5 * target, atol=1e-6)


def test_decode_tokens_accepts_grids_and_sequences(trained_model):
    h = trained_model.latent_resolution
    grid = np.arange(2 * h * h).reshape((2, h, h)) % 16
    options = SamplerOptions(kind="ddim", steps=2, seed=0)

    from_grid = trained_model.decode_tokens(grid, options)
    from_sequence = trained_model.decode_tokens(grid.reshape((2, -1)),
                                                options)

    assert from_grid.shape == (2, 16, 16, 3)
    np.testing.assert_allclose(from_grid, from_sequence, atol=1e-6)


def test_decode_tokens_rejects_other_shapes(trained_model):
    with pytest.raises(ShapeMismatchError):
        trained_model.decode_tokens(np.zeros((2, 3, 3), dtype=np.int32))
    with pytest.raises(ShapeMismatchError):
        trained_model.decode_tokens(np.zeros((2, 5), dtype=np.int32))


def test_trained_model_generates_from_prompts(trained_model):
    h = trained_model.latent_resolution

    tokens = trained_model.generate_tokens("red", num=3, seed=1)
    image = trained_model.t2i("blue", SamplerOptions(kind="ddim", steps=2))

    assert tokens.shape == (3, h * h)
    assert tokens.min() >= 0 and tokens.max() < 16
    assert image.shape == (16, 16, 3)


def test_sample_without_prompt_uses_random_codes(trained_model):
    options = SamplerOptions(kind="ddim", steps=2, seed=0)

    images = trained_model.sample(num=2, options=options, seed=5)

    assert images.shape == (2, 16, 16, 3)
    np.testing.assert_array_equal(trained_model.random_tokens(2, seed=5),
                                  trained_model.random_tokens(2, seed=5))


def test_checkpoint_of_trained_model_keeps_schedule(trained_model_path,
                                                    trained_model):
    checkpoint = Checkpoint.load(trained_model_path)

    assert checkpoint.schedule["kind"] == "linear"
    assert trained_model.schedule.T == 20
    assert trained_model.trained == set(checkpoint.components())


def test_t2i_is_deterministic_without_sampling_noise(trained_model):
    options = SamplerOptions(kind="ddim", steps=3, eta=0., seed=3)

    first = trained_model.t2i("red", options, temperature=0., seed=1)
    second = trained_model.t2i("red", options, temperature=0., seed=2)

    np.testing.assert_array_equal(first, second)


@pytest.mark.slow
def test_decoder_relies_on_the_codes(tmpdir, tiny_dataset):
    tf.random.set_seed(0)
    config = tiny_config(phase=("vq", "decoder"), total_steps=600,
                         warmup_steps=20)
    model = train.train(config, tmpdir.strpath, tiny_dataset,
                        progress=False).model
    images = tiny_dataset[0].take(8).images
    options = SamplerOptions(kind="ddim", steps=10, eta=0., seed=0)

    _, metrics = model.reconstruct(images, options, shuffled_control=True)

    noise = np.random.RandomState(0).uniform(
        -1, 1, images.shape).astype(np.float32)
    assert metrics["mse"] < metrics["shuffled_mse"]
    assert metrics["fid_proxy"] < evaluate_image_sets(
        images, noise)["fid_proxy"]
