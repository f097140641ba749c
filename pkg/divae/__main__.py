import argparse
import logging
import sys

from divae import version
from divae.cli import ablate, evaluate, reconstruct, sample, t2i, train
from divae.cli.arguments import add_logging_option_arguments
from divae.cli.utils import ArgumentParser, print_error_json
from divae.core.exceptions import InvalidArgumentsError
from divae.utils import configure_colored_logging, configure_file_logging

logger = logging.getLogger(__name__)


def create_argument_parser() -> ArgumentParser:
    """Parse all the command line arguments of the divae commands."""

    parser = ArgumentParser(
        prog="divae",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        description="Train and sample a discrete image autoencoder whose "
                    "decoder is a denoising diffusion model. The 'divae' "
                    "command trains models, reconstructs and generates "
                    "images and runs the injection ablation.")

    parser.add_argument("--version", action='store_true',
                        default=argparse.SUPPRESS,
                        help="Print installed divae version")

    parent_parser = argparse.ArgumentParser(add_help=False)
    add_logging_option_arguments(parent_parser)
    parent_parsers = [parent_parser]

    subparsers = parser.add_subparsers(help='divae commands',
                                       parser_class=ArgumentParser)

    train.add_subparser(subparsers, parents=parent_parsers)
    reconstruct.add_subparser(subparsers, parents=parent_parsers)
    sample.add_subparser(subparsers, parents=parent_parsers)
    t2i.add_subparser(subparsers, parents=parent_parsers)
    ablate.add_subparser(subparsers, parents=parent_parsers)
    evaluate.add_subparser(subparsers, parents=parent_parsers)

    return parser


def print_version() -> None:
    print("divae", version.__version__)


def main() -> None:
    arg_parser = create_argument_parser()
    cmdline_arguments = arg_parser.parse_args()

    if hasattr(cmdline_arguments, "func"):
        configure_colored_logging(cmdline_arguments.loglevel)
        configure_file_logging(cmdline_arguments.loglevel,
                               cmdline_arguments.logfile)
        try:
            cmdline_arguments.func(cmdline_arguments)
        except Exception as e:
            logger.debug("Command failed.", exc_info=True)
            print_error_json(e)
            sys.exit(1)
    elif hasattr(cmdline_arguments, "version"):
        print_version()
    else:
        # user has not provided a subcommand, let's print the help
        arg_parser.print_help()
        print_error_json(InvalidArgumentsError("No command specified."))
        sys.exit(1)


if __name__ == '__main__':
    main()
