import logging

import numpy as np
import pytest

from divae.core.encoder import (
    AuxiliaryDecoder, Encoder, EncoderConfig, encode)
from divae.core.exceptions import InvalidConfigException, ShapeMismatchError


def small_encoder(rate=8, resolution=16, d=4):
    return Encoder(EncoderConfig(rate, channels=8, d=d,
                                 input_resolution=resolution, norm_groups=4))


@pytest.mark.parametrize("kwargs", [{"rate": 4},
                                    {"rate": 8, "input_resolution": 20},
                                    {"rate": 16, "input_resolution": 24},
                                    {"channels": 0}])
def test_invalid_encoder_config(kwargs):
    with pytest.raises(InvalidConfigException):
        EncoderConfig(**kwargs)


@pytest.mark.parametrize("rate, resolution, latent", [(8, 16, 2),
                                                      (8, 24, 3),
                                                      (8, 40, 5),
                                                      (16, 32, 2)])
def test_encoded_grid_shape(rate, resolution, latent):
    encoder = small_encoder(rate, resolution, d=3)
    images = np.random.RandomState(0).uniform(
        -1, 1, (2, resolution, resolution, 3)).astype(np.float32)

    z = encode(images, encoder)

    assert z.shape == (2, latent, latent, 3)
    assert encoder.cfg.latent_resolution == latent


def test_single_image_keeps_no_batch_axis():
    encoder = small_encoder()

    z = encode(np.zeros((16, 16, 3), np.float32), encoder)

    assert z.shape == (2, 2, 4)


def test_encoding_is_deterministic():
    encoder = small_encoder()
    images = np.random.RandomState(1).uniform(
        -1, 1, (3, 16, 16, 3)).astype(np.float32)

    np.testing.assert_array_equal(encode(images, encoder).numpy(),
                                  encode(images, encoder).numpy())


def test_shifting_the_image_by_the_rate_shifts_the_grid_by_one_cell(
        float64):
    # the patch stays far enough from the zero padded borders that the
    # group norm statistics of both images agree
    encoder = small_encoder(rate=8, resolution=256)
    patch = np.random.RandomState(2).uniform(-1, 1, (8, 8, 3))
    image = np.full((256, 256, 3), 0.2)
    shifted = image.copy()
    image[120:128, 120:128] = patch
    shifted[128:136, 128:136] = patch

    z = encode(image, encoder).numpy()
    z_shifted = encode(shifted, encoder).numpy()

    np.testing.assert_allclose(z_shifted[7:25, 7:25], z[6:24, 6:24],
                               atol=1e-8)
    assert np.abs(z[15, 15] - z[6, 6]).max() > 1e-6


def test_wrong_resolution():
    encoder = small_encoder()

    with pytest.raises(ShapeMismatchError):
        encode(np.zeros((1, 32, 32, 3), np.float32), encoder)


def test_out_of_range_pixels_are_clipped(caplog):
    encoder = small_encoder()
    images = np.random.RandomState(2).uniform(
        -1, 1, (2, 16, 16, 3)).astype(np.float32)

    with caplog.at_level(logging.WARNING):
        z = encode(3 * images, encoder)

    assert "were clipped" in caplog.text
    np.testing.assert_allclose(
        z.numpy(), encode(np.clip(3 * images, -1, 1), encoder).numpy())


def test_auxiliary_decoder_restores_image_shape():
    cfg = EncoderConfig(8, channels=8, d=4, input_resolution=32,
                        norm_groups=4)
    decoder = AuxiliaryDecoder(cfg, channels=8)

    images = decoder(np.zeros((2, 4, 4, 4), np.float32))

    assert images.shape == (2, 32, 32, 3)
