import argparse
import logging
from typing import List

from divae.cli.utils import get_validated_path, print_success
from divae.constants import FEATURE_EXTRACTOR_RESOLUTION

logger = logging.getLogger(__name__)


# noinspection PyProtectedMember
def add_subparser(subparsers: argparse._SubParsersAction,
                  parents: List[argparse.ArgumentParser]):
    eval_parser = subparsers.add_parser(
        "eval",
        parents=parents,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="Compare two image folders with the FID-proxy")

    eval_parser.add_argument(
        "--real",
        type=str,
        required=True,
        help="Folder of reference images")
    eval_parser.add_argument(
        "--fake",
        type=str,
        required=True,
        help="Folder of generated images")
    eval_parser.add_argument(
        "-o", "--out",
        type=str,
        required=True,
        help="JSON file the metrics are written to")
    eval_parser.add_argument(
        "--resolution",
        type=int,
        default=FEATURE_EXTRACTOR_RESOLUTION,
        help="Side length both image sets are resized to")
    eval_parser.add_argument(
        "--feature-extractor",
        type=str,
        default="proxy",
        help="'proxy' or a 'module:attribute' callable returning features")
    eval_parser.add_argument(
        "--limit",
        type=int,
        default=None,
        help="Use at most this many images of each folder")
    eval_parser.set_defaults(func=evaluate)


def evaluate(args: argparse.Namespace) -> None:
    from divae.core.data import load_image_folder
    from divae.core.evaluate import (
        evaluate_image_sets, load_extractor, reference_fids)
    from divae.core.pipeline import write_metrics

    real = load_image_folder(get_validated_path(args.real, "real"),
                             args.resolution, limit=args.limit)
    fake = load_image_folder(get_validated_path(args.fake, "fake"),
                             args.resolution, limit=args.limit)
    metrics = evaluate_image_sets(real.images, fake.images,
                                  load_extractor(args.feature_extractor))
    metrics["reference_fid"] = reference_fids()
    write_metrics(args.out, metrics)
    print_success("FID-proxy {:.4f} ({} real, {} fake images), written to "
                  "'{}'.".format(metrics["fid_proxy"], metrics["n_real"],
                                 metrics["n_fake"], args.out))
