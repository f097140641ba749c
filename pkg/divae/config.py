import logging
import os
from collections import OrderedDict
from typing import Any, Dict, Optional, Sequence, Text

from divae.core import utils
from divae.core.exceptions import InvalidConfigException

logger = logging.getLogger(__name__)

PHASES = ("vq", "decoder", "prior", "joint")

# every key with its default, the default also fixes the value type
DEFAULTS = OrderedDict([
    # data
    ("data_dir", "data/images"),
    ("resolution", 32),
    ("split_fraction", 0.1),
    ("data_seed", 0),
    ("flip", False),
    ("num_workers", 4),
    ("labels_file", "labels.tsv"),
    # diffusion schedule
    ("timesteps", 1000),
    ("schedule", "linear"),
    ("beta_start", 1e-4),
    ("beta_end", 0.02),
    # encoder and codebook
    ("rate", 8),
    ("encoder_channels", 32),
    ("codebook_size", 512),
    ("code_dim", 4),
    ("commitment_beta", 0.25),
    ("codebook_update", "gradient"),
    ("codebook_ema_decay", 0.99),
    # denoising network
    ("unet_channels", 32),
    ("channel_mults", (1, 2, 2, 2)),
    ("num_res_blocks", 1),
    ("attn_resolutions", (8,)),
    ("time_embed_dim", 128),
    ("dropout", 0.0),
    ("norm_groups", 8),
    ("num_heads", 1),
    ("inject_method", "concat"),
    ("inject_position", "middle"),
    ("cond_projection_channels", 0),
    # losses
    ("lambda_vlb", 0.001),
    ("detach_mean_in_vlb", True),
    ("aux_decoder_channels", 32),
    # prior
    ("prior_layers", 4),
    ("prior_heads", 4),
    ("prior_width", 128),
    ("condition_mode", "class-label"),
    ("max_prompt_len", 16),
    # training
    ("phase", ("vq", "decoder")),
    ("batch_size", 32),
    ("total_steps", 3000),
    ("vq_steps", 0),
    ("prior_steps", 0),
    ("lr", 1e-4),
    ("warmup_steps", 1000),
    ("weight_decay", 0.01),
    ("grad_clip", 1.0),
    ("seed", 0),
    ("checkpoint_every", 1000),
    ("log_every", 100),
    ("use_ema", True),
    ("ema_decay", 0.9999),
    ("init_checkpoint", ""),
    # sampling
    ("sampler", "ddim"),
    ("sample_steps", 25),
    ("eta", 0.0),
    ("sample_seed", 0),
    ("clip_denoised", True),
    ("temperature", 1.0),
    # evaluation
    ("eval_images", 64),
    ("feature_extractor", "proxy"),
    ("ablation_budget", 0.1),
    ("ablation_seeds", 1),
])

TRUE_VALUES = ("true", "yes", "on", "1")
FALSE_VALUES = ("false", "no", "off", "0")


def config_schema() -> Dict[Text, Any]:
    """JSON schema of a resolved configuration."""

    def integer(minimum=0):
        return {"type": "integer", "minimum": minimum}

    def number(minimum=0., maximum=None):
        schema = {"type": "number", "minimum": minimum}
        if maximum is not None:
            schema["maximum"] = maximum
        return schema

    def enum(*values):
        return {"type": "string", "enum": list(values)}

    def integers(minimum=1):
        return {"type": "array", "items": integer(minimum)}

    boolean = {"type": "boolean"}
    string = {"type": "string"}

    properties = {
        "data_dir": string,
        "resolution": integer(1),
        "split_fraction": number(0., 0.99),
        "data_seed": integer(),
        "flip": boolean,
        "num_workers": integer(1),
        "labels_file": string,
        "timesteps": integer(1),
        "schedule": enum("linear", "cosine"),
        "beta_start": number(0., 1.),
        "beta_end": number(0., 1.),
        "rate": {"type": "integer", "enum": [8, 16]},
        "encoder_channels": integer(1),
        "codebook_size": integer(1),
        "code_dim": integer(1),
        "commitment_beta": number(),
        "codebook_update": enum("gradient", "ema"),
        "codebook_ema_decay": number(0., 1.),
        "unet_channels": integer(1),
        "channel_mults": dict(integers(1), minItems=1),
        "num_res_blocks": integer(1),
        "attn_resolutions": integers(1),
        "time_embed_dim": integer(2),
        "dropout": number(0., 1.),
        "norm_groups": integer(1),
        "num_heads": integer(1),
        "inject_method": enum("concat", "add", "attention"),
        "inject_position": enum("encoder", "middle", "decoder"),
        "cond_projection_channels": integer(),
        "lambda_vlb": number(),
        "detach_mean_in_vlb": boolean,
        "aux_decoder_channels": integer(1),
        "prior_layers": integer(1),
        "prior_heads": integer(1),
        "prior_width": integer(1),
        "condition_mode": enum("class-label", "token-text"),
        "max_prompt_len": integer(1),
        "phase": {"type": "array", "minItems": 1,
                  "items": enum(*PHASES)},
        "batch_size": integer(1),
        "total_steps": integer(),
        "vq_steps": integer(),
        "prior_steps": integer(),
        "lr": number(),
        "warmup_steps": integer(),
        "weight_decay": number(),
        "grad_clip": number(),
        "seed": integer(),
        "checkpoint_every": integer(),
        "log_every": integer(1),
        "use_ema": boolean,
        "ema_decay": number(0., 1.),
        "init_checkpoint": string,
        "sampler": enum("ddpm", "ddim"),
        "sample_steps": integer(1),
        "eta": number(),
        "sample_seed": integer(),
        "clip_denoised": boolean,
        "temperature": number(),
        "eval_images": integer(2),
        "feature_extractor": string,
        "ablation_budget": number(0., 1.),
        "ablation_seeds": integer(1),
    }
    return {
        "type": "object",
        "properties": properties,
        "required": list(DEFAULTS.keys()),
        "additionalProperties": False,
    }


def _check_key(key: Text) -> None:
    if key not in DEFAULTS:
        raise InvalidConfigException(
            "Unknown config key '{}'.".format(key))


def parse_value(key: Text, raw: Text) -> Any:
    """Parses a raw string to the type of the key's default."""

    _check_key(key)
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in TRUE_VALUES:
                return True
            if raw.lower() in FALSE_VALUES:
                return False
            raise ValueError("not a boolean")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [item.strip() for item in raw.split(",") if item.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(item) for item in items)
            return tuple(items)
    except ValueError:
        raise InvalidConfigException(
            "Can not parse '{}' as a value of '{}', expected a value like "
            "'{}'.".format(raw, key, format_value(default)))
    return raw


def format_value(value: Any) -> Text:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(item) for item in value)
    return str(value)


def parse_config_text(text: Text, source: Text = "<string>"
                      ) -> Dict[Text, Any]:
    """Reads `key = value` lines; `#` starts a comment."""

    values = OrderedDict()
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, separator, raw = line.partition("=")
        if not separator:
            raise InvalidConfigException(
                "Line {} of {} is not a 'key = value' pair: '{}'."
                "".format(number, source, line))
        key = key.strip()
        values[key] = parse_value(key, raw)
    return values


def read_config_file(config_file: Text) -> Dict[Text, Any]:
    """Load the key value pairs stored in a config file."""

    if not config_file or not os.path.isfile(config_file):
        raise InvalidConfigException(
            "You have to provide a valid path to a config file. "
            "The file '{}' could not be found."
            "".format(os.path.abspath(config_file or "")))
    return parse_config_text(utils.read_file(config_file), config_file)


def dump_config(config: Dict[Text, Any]) -> Text:
    lines = ["{} = {}".format(key, format_value(config[key]))
             for key in DEFAULTS if key in config]
    return "\n".join(lines) + "\n"


def write_config_file(path: Text, config: Dict[Text, Any]) -> None:
    utils.create_dir_for_file(path)
    utils.dump_obj_as_str_to_file(path, dump_config(config))


def _as_json_types(config: Dict[Text, Any]) -> Dict[Text, Any]:
    return {key: list(value) if isinstance(value, tuple) else value
            for key, value in config.items()}


def validate_config(config: Dict[Text, Any]) -> None:
    """Raises an `InvalidConfigException` for invalid or inconsistent
    values."""

    from jsonschema import validate
    from jsonschema import ValidationError

    try:
        validate(_as_json_types(config), config_schema())
    except ValidationError as e:
        path = ".".join(str(p) for p in e.path) or "config"
        raise InvalidConfigException(
            "Invalid value for '{}': {}".format(path, e.message))

    if config["lr"] <= 0:
        raise InvalidConfigException(
            "The learning rate has to be positive, got {}."
            "".format(config["lr"]))
    if config["warmup_steps"] > config["total_steps"]:
        raise InvalidConfigException(
            "warmup_steps ({}) can not exceed total_steps ({})."
            "".format(config["warmup_steps"], config["total_steps"]))
    if config["resolution"] % config["rate"] != 0:
        raise InvalidConfigException(
            "The resolution {} is not divisible by the encoder rate {}."
            "".format(config["resolution"], config["rate"]))
    if config["schedule"] == "linear" and not (
            0. < config["beta_start"] <= config["beta_end"] < 1.):
        raise InvalidConfigException(
            "Linear schedules need 0 < beta_start <= beta_end < 1, got {} "
            "and {}.".format(config["beta_start"], config["beta_end"]))
    if config["sampler"] == "ddim" and (
            config["sample_steps"] > config["timesteps"]):
        raise InvalidConfigException(
            "sample_steps ({}) can not exceed the {} diffusion steps."
            "".format(config["sample_steps"], config["timesteps"]))
    if "joint" in config["phase"] and (
            "vq" in config["phase"] or "decoder" in config["phase"]):
        raise InvalidConfigException(
            "The joint phase replaces the vq and decoder phases, they can "
            "not be combined.")


def resolve(config_file: Optional[Text] = None,
            overrides: Optional[Dict[Text, Any]] = None) -> Dict[Text, Any]:
    """Defaults, updated by the config file, updated by overrides."""

    config = OrderedDict(DEFAULTS)
    if config_file:
        config.update(read_config_file(config_file))
    for key, value in (overrides or {}).items():
        _check_key(key)
        config[key] = value
    validate_config(config)
    return config


def flag_name(key: Text) -> Text:
    return "--" + key.replace("_", "-")


def steps_of_phase(config: Dict[Text, Any], phase: Text) -> int:
    steps = {"vq": config["vq_steps"],
             "prior": config["prior_steps"]}.get(phase, 0)
    return steps or config["total_steps"]


# builders turning a resolved config into component configurations

def make_schedule(config: Dict[Text, Any]):
    from divae.core import schedule

    return schedule.make_schedule(config["timesteps"], config["schedule"],
                                  config["beta_start"], config["beta_end"])


def encoder_config(config: Dict[Text, Any]):
    from divae.core.encoder import EncoderConfig

    return EncoderConfig(rate=config["rate"],
                         channels=config["encoder_channels"],
                         d=config["code_dim"],
                         input_resolution=config["resolution"],
                         norm_groups=config["norm_groups"])


def injection_spec(config: Dict[Text, Any]):
    from divae.core.unet import InjectionSpec

    return InjectionSpec(config["inject_method"], config["inject_position"])


def unet_config(config: Dict[Text, Any]):
    from divae.core.unet import UNetConfig

    return UNetConfig(
        image_resolution=config["resolution"],
        latent_resolution=config["resolution"] // config["rate"],
        cond_channels=config["code_dim"],
        base_channels=config["unet_channels"],
        channel_mults=config["channel_mults"],
        num_res_blocks=config["num_res_blocks"],
        attn_resolutions=config["attn_resolutions"],
        time_embed_dim=config["time_embed_dim"],
        dropout=config["dropout"],
        norm_groups=config["norm_groups"],
        num_heads=config["num_heads"],
        injection=injection_spec(config),
        cond_projection_channels=config["cond_projection_channels"])


def prior_config(config: Dict[Text, Any], num_classes: int = 1):
    from divae.core.prior import PriorConfig

    latent_resolution = config["resolution"] // config["rate"]
    return PriorConfig(K=config["codebook_size"],
                       seq_len=latent_resolution ** 2,
                       num_layers=config["prior_layers"],
                       num_heads=config["prior_heads"],
                       width=config["prior_width"],
                       condition_mode=config["condition_mode"],
                       num_classes=num_classes,
                       max_prompt_len=config["max_prompt_len"],
                       dropout=config["dropout"])


def loss_config(config: Dict[Text, Any]):
    from divae.core.losses import HybridLossConfig

    return HybridLossConfig(config["lambda_vlb"],
                            config["detach_mean_in_vlb"])


def sampler_options(config: Dict[Text, Any]):
    from divae.core.sampler import SamplerOptions

    return SamplerOptions(kind=config["sampler"],
                          steps=config["sample_steps"],
                          eta=config["eta"],
                          seed=config["sample_seed"],
                          clip_denoised=config["clip_denoised"])


def dataset_spec(config: Dict[Text, Any],
                 root: Optional[Text] = None):
    from divae.core.data import DatasetSpec

    return DatasetSpec(root or config["data_dir"],
                       resolution=config["resolution"],
                       split_fraction=config["split_fraction"],
                       seed=config["data_seed"],
                       flip=config["flip"],
                       num_workers=config["num_workers"],
                       labels_file=config["labels_file"] or None,
                       rate=config["rate"])


def scaled(config: Dict[Text, Any],
           budget: float,
           keys: Sequence[Text] = ("total_steps", "vq_steps", "prior_steps",
                                   "warmup_steps", "checkpoint_every")
           ) -> Dict[Text, Any]:
    """A copy with step counts scaled by `budget`."""

    config = OrderedDict(config)
    for key in keys:
        config[key] = int(round(config[key] * budget))
    config["warmup_steps"] = min(config["warmup_steps"],
                                 config["total_steps"])
    return config

