import logging
from collections import OrderedDict

import pytest
import tensorflow as tf

from divae import config as config_utils
from divae.core import train
from divae.core.data import load_dataset
from tests.core.utilities import write_image_folder

logging.basicConfig(level="DEBUG")

DESK_CONFIG_PATH = "configs/desk.cfg"

IMAGENET_CONFIG_PATH = "configs/paper.cfg"

# small enough to train every phase within seconds on a CPU
TINY_CONFIG = OrderedDict([
    ("resolution", 16),
    ("rate", 8),
    ("split_fraction", 0.25),
    ("num_workers", 2),
    ("timesteps", 20),
    ("encoder_channels", 8),
    ("codebook_size", 16),
    ("code_dim", 4),
    ("unet_channels", 8),
    ("channel_mults", (1, 2)),
    ("attn_resolutions", (8,)),
    ("time_embed_dim", 16),
    ("norm_groups", 4),
    ("aux_decoder_channels", 8),
    ("prior_layers", 1),
    ("prior_heads", 2),
    ("prior_width", 16),
    ("phase", ("vq", "decoder", "prior")),
    ("batch_size", 4),
    ("total_steps", 2),
    ("lr", 1e-3),
    ("warmup_steps", 1),
    ("checkpoint_every", 0),
    ("log_every", 1),
    ("ema_decay", 0.9),
    ("sample_steps", 4),
    ("eval_images", 4),
])


def tiny_config(**overrides):
    values = OrderedDict(TINY_CONFIG)
    values.update(overrides)
    return config_utils.resolve(overrides=values)


@pytest.fixture
def default_config():
    return tiny_config()


@pytest.fixture
def float64():
    tf.keras.backend.set_floatx("float64")
    yield
    tf.keras.backend.set_floatx("float32")


@pytest.fixture(scope="session")
def image_folder(tmpdir_factory):
    root = tmpdir_factory.mktemp("images").strpath
    return write_image_folder(root)


@pytest.fixture(scope="session")
def tiny_dataset(image_folder):
    config = tiny_config(data_dir=image_folder)
    return load_dataset(config_utils.dataset_spec(config))


@pytest.fixture(scope="session")
def trained_model_path(tmpdir_factory, image_folder, tiny_dataset):
    path = tmpdir_factory.mktemp("model").strpath
    config = tiny_config(data_dir=image_folder)
    train.train(config, path, tiny_dataset, progress=False)
    return path
