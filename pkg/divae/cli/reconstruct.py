import argparse
import logging
import os
from typing import List

from divae.cli import arguments
from divae.cli.utils import (
    get_validated_path, print_success, sampler_options_from_args)

logger = logging.getLogger(__name__)

GRID_FILE = "grid.png"
METRICS_FILE = "metrics.json"


# noinspection PyProtectedMember
def add_subparser(subparsers: argparse._SubParsersAction,
                  parents: List[argparse.ArgumentParser]):
    reconstruct_parser = subparsers.add_parser(
        "reconstruct",
        parents=parents,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="Encode and decode a folder of images")

    arguments.add_model_param(reconstruct_parser)
    reconstruct_parser.add_argument(
        "-i", "--images",
        type=str,
        required=True,
        help="Folder of PNG or JPEG images")
    reconstruct_parser.add_argument(
        "-o", "--out",
        type=str,
        required=True,
        help="Directory for reconstructions, grid and metrics")
    reconstruct_parser.add_argument(
        "--limit",
        type=int,
        default=None,
        help="Reconstruct at most this many images")
    reconstruct_parser.add_argument(
        "--shuffled-control",
        action="store_true",
        help="Also decode every image from the codes of another image")
    arguments.add_sampler_arguments(reconstruct_parser)
    reconstruct_parser.set_defaults(func=reconstruct)


def reconstruct(args: argparse.Namespace) -> None:
    from divae.core.data import load_image_folder
    from divae.core.evaluate import load_extractor
    from divae.core.pipeline import (
        DiVAE, save_images, save_reconstruction_grid, write_metrics)

    model = DiVAE.load(get_validated_path(args.model, "model"))
    images_dir = get_validated_path(args.images, "images")
    dataset = load_image_folder(images_dir, model.config["resolution"],
                                model.config["num_workers"], args.limit)

    options = sampler_options_from_args(model.config, args)
    extractor = load_extractor(model.config["feature_extractor"])
    reconstructions, metrics = model.reconstruct(
        dataset.images, options, args.shuffled_control, extractor,
        progress=True)

    save_images(reconstructions, args.out, names=dataset.files)
    save_reconstruction_grid(dataset.images, reconstructions,
                             os.path.join(args.out, GRID_FILE))
    write_metrics(os.path.join(args.out, METRICS_FILE), metrics)
    print_success("Reconstructed {} images into '{}': {}"
                  "".format(len(dataset), args.out, metrics))
