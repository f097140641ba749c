import argparse
import logging
from typing import List

import numpy as np

from divae.cli import arguments
from divae.cli.utils import (
    get_validated_path, print_success, sampler_options_from_args)

logger = logging.getLogger(__name__)


# noinspection PyProtectedMember
def add_subparser(subparsers: argparse._SubParsersAction,
                  parents: List[argparse.ArgumentParser]):
    sample_parser = subparsers.add_parser(
        "sample",
        parents=parents,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="Decode code grids into images")

    arguments.add_model_param(sample_parser)
    sample_parser.add_argument(
        "-o", "--out",
        type=str,
        required=True,
        help="Directory for the sampled images")
    source = sample_parser.add_mutually_exclusive_group()
    source.add_argument(
        "--tokens",
        type=str,
        default=None,
        help="'.npy' file with code indices of shape [n, h, w] or "
             "[n, h * w]")
    source.add_argument(
        "--prompt",
        type=str,
        default=None,
        help="Sample the codes from the prior for this prompt")
    sample_parser.add_argument(
        "-n", "--num",
        type=int,
        default=1,
        help="Number of images if no tokens are given; without a prompt "
             "the codes are drawn uniformly")
    sample_parser.add_argument(
        "--temperature",
        type=float,
        default=None,
        help="Sampling temperature of the prior")
    arguments.add_sampler_arguments(sample_parser)
    sample_parser.set_defaults(func=sample)


def sample(args: argparse.Namespace) -> None:
    from divae.core.pipeline import DiVAE, save_images

    model = DiVAE.load(get_validated_path(args.model, "model"))
    tokens = None
    if args.tokens:
        tokens = np.load(get_validated_path(args.tokens, "tokens"))

    options = sampler_options_from_args(model.config, args)
    images = model.sample(args.num, tokens=tokens, prompt=args.prompt,
                          options=options, temperature=args.temperature,
                          seed=options.seed)
    paths = save_images(images, args.out, prefix="sample")
    print_success("Wrote {} samples to '{}'.".format(len(paths), args.out))
