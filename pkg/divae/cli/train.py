import argparse
import logging
from typing import List

from divae.cli import arguments
from divae.cli.utils import print_success, resolve_config
from divae.constants import DEFAULT_MODELS_PATH

logger = logging.getLogger(__name__)


# noinspection PyProtectedMember
def add_subparser(subparsers: argparse._SubParsersAction,
                  parents: List[argparse.ArgumentParser]):
    train_parser = subparsers.add_parser(
        "train",
        parents=parents,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="Train the encoder, the diffusion decoder and the prior")

    arguments.add_config_param(train_parser)
    train_parser.add_argument(
        "-o", "--out",
        type=str,
        default=DEFAULT_MODELS_PATH,
        help="Checkpoint directory of the trained model")
    train_parser.add_argument(
        "--data",
        type=str,
        default=None,
        help="Image folder to train on, overrides 'data_dir'")
    train_parser.add_argument(
        "--resume",
        action="store_true",
        help="Continue the training run stored in '--out'")
    arguments.add_config_flags(train_parser)
    train_parser.set_defaults(func=train)


def train(args: argparse.Namespace) -> None:
    from divae.core.train import train as train_model

    config = resolve_config(args)
    if args.data:
        config["data_dir"] = args.data

    result = train_model(config, args.out, resume=args.resume)
    print_success("Trained {} in '{}'."
                  "".format(", ".join(sorted(result.model.trained)),
                            args.out))
