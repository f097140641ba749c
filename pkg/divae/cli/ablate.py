import argparse
import logging
from typing import List

from divae.cli import arguments
from divae.cli.utils import print_success, resolve_config
from divae.constants import DEFAULT_RESULTS_PATH

logger = logging.getLogger(__name__)


# noinspection PyProtectedMember
def add_subparser(subparsers: argparse._SubParsersAction,
                  parents: List[argparse.ArgumentParser]):
    ablate_parser = subparsers.add_parser(
        "ablate",
        parents=parents,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="Compare where and how the codes enter the decoder")

    arguments.add_config_param(ablate_parser)
    ablate_parser.add_argument(
        "-o", "--out",
        type=str,
        default=DEFAULT_RESULTS_PATH,
        help="Directory for the cell checkpoints and the report")
    ablate_parser.add_argument(
        "--data",
        type=str,
        default=None,
        help="Image folder to train on, overrides 'data_dir'")
    ablate_parser.add_argument(
        "--budget",
        type=float,
        default=None,
        help="Fraction of the configured steps every cell trains for, "
             "defaults to 'ablation_budget'")
    ablate_parser.add_argument(
        "--seeds",
        type=int,
        default=None,
        help="Number of seeds per cell, defaults to 'ablation_seeds'")
    arguments.add_config_flags(ablate_parser)
    ablate_parser.set_defaults(func=ablate)


def ablate(args: argparse.Namespace) -> None:
    from divae.core.train import ablate as run_ablation, ablation_tables

    config = resolve_config(args)
    if args.data:
        config["data_dir"] = args.data

    report = run_ablation(config, args.out, args.budget, args.seeds,
                          progress=True)
    print(ablation_tables(report))
    print_success("Stored the ablation report in '{}'.".format(args.out))
