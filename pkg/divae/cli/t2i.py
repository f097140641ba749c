import argparse
import logging
from typing import List

from divae.cli import arguments
from divae.cli.utils import (
    get_validated_path, print_success, sampler_options_from_args)

logger = logging.getLogger(__name__)


# noinspection PyProtectedMember
def add_subparser(subparsers: argparse._SubParsersAction,
                  parents: List[argparse.ArgumentParser]):
    t2i_parser = subparsers.add_parser(
        "t2i",
        parents=parents,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="Generate an image for a prompt")

    arguments.add_model_param(t2i_parser)
    t2i_parser.add_argument(
        "-p", "--prompt",
        type=str,
        required=True,
        help="Class label or text the prior is conditioned on")
    t2i_parser.add_argument(
        "-o", "--out",
        type=str,
        required=True,
        help="PNG file the image is written to")
    t2i_parser.add_argument(
        "--temperature",
        type=float,
        default=None,
        help="Sampling temperature of the prior")
    arguments.add_sampler_arguments(t2i_parser)
    t2i_parser.set_defaults(func=t2i)


def t2i(args: argparse.Namespace) -> None:
    from divae.core.data import write_png
    from divae.core.pipeline import DiVAE

    model = DiVAE.load(get_validated_path(args.model, "model"))
    options = sampler_options_from_args(model.config, args)
    image = model.t2i(args.prompt, options, args.temperature, options.seed)
    write_png(args.out, image)
    print_success("Wrote the image for '{}' to '{}'."
                  "".format(args.prompt, args.out))
