import argparse
import logging
from typing import Any, Dict, Text

from divae import config as config_utils
from divae.constants import DEFAULT_CONFIG_PATH, DEFAULT_MODELS_PATH

CONFIG_GROUPS = (
    ("Data", ("data_dir", "resolution", "split_fraction", "data_seed",
              "flip", "num_workers", "labels_file")),
    ("Diffusion schedule", ("timesteps", "schedule", "beta_start",
                            "beta_end")),
    ("Encoder and codebook", ("rate", "encoder_channels", "codebook_size",
                              "code_dim", "commitment_beta",
                              "codebook_update", "codebook_ema_decay")),
    ("Denoising network", ("unet_channels", "channel_mults",
                           "num_res_blocks", "attn_resolutions",
                           "time_embed_dim", "dropout", "norm_groups",
                           "num_heads", "inject_method", "inject_position",
                           "cond_projection_channels")),
    ("Losses", ("lambda_vlb", "detach_mean_in_vlb",
                "aux_decoder_channels")),
    ("Prior", ("prior_layers", "prior_heads", "prior_width",
               "condition_mode", "max_prompt_len")),
    ("Training", ("phase", "batch_size", "total_steps", "vq_steps",
                  "prior_steps", "lr", "warmup_steps", "weight_decay",
                  "grad_clip", "seed", "checkpoint_every", "log_every",
                  "use_ema", "ema_decay", "init_checkpoint")),
    ("Sampling", ("sampler", "sample_steps", "eta", "sample_seed",
                  "clip_denoised", "temperature")),
    ("Evaluation", ("eval_images", "feature_extractor", "ablation_budget",
                    "ablation_seeds")),
)


def add_logging_option_arguments(parser):
    """Add options to an argument parser to configure logging levels."""

    logging_arguments = parser.add_argument_group('Python Logging Options')

    # arguments for logging configuration
    logging_arguments.add_argument(
        '-v', '--verbose',
        help="Be verbose. Sets logging level to INFO",
        action="store_const",
        dest="loglevel",
        const=logging.INFO,
        default=logging.INFO,
    )
    logging_arguments.add_argument(
        '-vv', '--debug',
        help="Print lots of debugging statements. "
             "Sets logging level to DEBUG",
        action="store_const",
        dest="loglevel",
        const=logging.DEBUG,
    )
    logging_arguments.add_argument(
        '--quiet',
        help="Be quiet! Sets logging level to WARNING",
        action="store_const",
        dest="loglevel",
        const=logging.WARNING,
    )
    logging_arguments.add_argument(
        '--logfile',
        type=str,
        default=None,
        help="Store the log in this file in addition to the console.")


def add_config_param(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-c", "--config",
        type=str,
        default=None,
        help="Config file with 'key = value' lines, e.g. '{}'. Flags "
             "override its values.".format(DEFAULT_CONFIG_PATH))


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Adds a flag for every config key, `inject_method` is
    `--inject-method`."""

    for title, keys in CONFIG_GROUPS:
        group = parser.add_argument_group("{} config".format(title))
        for key in keys:
            group.add_argument(
                config_utils.flag_name(key),
                dest="config__" + key,
                type=str,
                default=argparse.SUPPRESS,
                metavar=key.upper(),
                help="default: {}".format(
                    config_utils.format_value(config_utils.DEFAULTS[key])))


def overrides_from_args(args: argparse.Namespace) -> Dict[Text, Any]:
    """Parsed values of the config flags given on the command line."""

    overrides = {}
    for name, raw in vars(args).items():
        if name.startswith("config__"):
            key = name[len("config__"):]
            overrides[key] = config_utils.parse_value(key, raw)
    return overrides


def add_model_param(parser: argparse.ArgumentParser,
                    required: bool = True) -> None:
    parser.add_argument(
        "-m", "--model",
        type=str,
        required=required,
        default=None if required else DEFAULT_MODELS_PATH,
        help="Checkpoint directory of a trained model.")


def add_sampler_arguments(parser: argparse.ArgumentParser) -> None:
    """Sampling flags; unset flags keep the values stored with the model."""

    sampler_arguments = parser.add_argument_group("Sampling")
    sampler_arguments.add_argument(
        "--sampler",
        choices=["ddpm", "ddim"],
        default=None,
        help="Ancestral sampling over every step or the implicit sampler.")
    sampler_arguments.add_argument(
        "--steps",
        type=int,
        default=None,
        help="Number of DDIM steps.")
    sampler_arguments.add_argument(
        "--eta",
        type=float,
        default=None,
        help="Stochasticity of DDIM, 0 is deterministic.")
    sampler_arguments.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Seed of the sampling noise.")
