import argparse
import json
import os
import sys
from typing import Any, Dict, Optional, Text

from divae.core.exceptions import (
    DataIngestionError, InvalidArgumentsError, InvalidConfigException)


def get_validated_path(current: Optional[Text], parameter: Text,
                       default: Optional[Text] = None,
                       none_is_valid: bool = False) -> Optional[Text]:
    """Check whether a path or its default value exists and returns it.

    Args:
        current: The parsed value.
        parameter: The name of the parameter.
        default: The default value of the parameter.
        none_is_valid: `True` if `None` is valid value for the path,
                        else `False``

    Returns:
        The current value if it exists, else the default value of the
        argument if it exists, else `None` if that is allowed.
    """

    if current is None or not os.path.exists(current):
        if default is not None and os.path.exists(default):
            if current is not None:
                print_warning("'{}' not found. Using default location '{}' "
                              "instead.".format(current, default))
            current = default
        elif none_is_valid and current is None:
            current = None
        else:
            cancel_cause_not_found(current, parameter, default)

    return current


def cancel_cause_not_found(current: Optional[Text], parameter: Text,
                           default: Optional[Text]) -> None:
    """Raises because the given path does not exist."""

    default_clause = ""
    if default:
        default_clause = ("use the default location ('{}') or "
                          "".format(default))
    raise DataIngestionError(
        "The path '{}' does not exist. Please make sure to {}specify it "
        "with '--{}'.".format(current, default_clause, parameter),
        [current] if current else [])


def resolve_config(args: argparse.Namespace) -> Dict[Text, Any]:
    """Defaults, updated by `--config`, updated by the config flags."""

    from divae import config as config_utils
    from divae.cli.arguments import overrides_from_args

    config_file = get_validated_path(args.config, "config",
                                     none_is_valid=True)
    return config_utils.resolve(config_file, overrides_from_args(args))


def sampler_options_from_args(config: Dict[Text, Any],
                              args: argparse.Namespace):
    """The sampler of a model config, changed by the given sampling flags."""

    from divae.core.sampler import SamplerOptions

    steps = config["sample_steps"] if args.steps is None else args.steps
    kind = args.sampler or config["sampler"]
    if kind == "ddim" and steps > config["timesteps"]:
        raise InvalidConfigException(
            "--steps ({}) can not exceed the {} diffusion steps of the "
            "model.".format(steps, config["timesteps"]))
    return SamplerOptions(
        kind=kind,
        steps=steps,
        eta=config["eta"] if args.eta is None else args.eta,
        seed=config["sample_seed"] if args.seed is None else args.seed,
        clip_denoised=config["clip_denoised"])


def print_error_json(e: Exception) -> None:
    """Writes one line `{"error": ..., "message": ...}` to stderr."""

    message = getattr(e, "message", None) or str(e)
    sys.stderr.write(json.dumps({"error": type(e).__name__,
                                 "message": message}) + "\n")


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors like every other failure, as error JSON with
    exit status 1."""

    def error(self, message: Text) -> None:
        print_error_json(InvalidArgumentsError(
            "{}: {}".format(self.prog, message)))
        sys.exit(1)


def print_success(text: Text):
    print_color(text, bcolors.OKGREEN)


class bcolors(object):
    OKGREEN = '\033[92m'
    WARNING = '\033[93m'
    ENDC = '\033[0m'


def wrap_with_color(text: Text, color: Text):
    return color + text + bcolors.ENDC


def print_color(text: Text, color: Text):
    print(wrap_with_color(text, color))


def print_warning(text: Text):
    print_color(text, bcolors.WARNING)
