"""
Command-line driver: ``adl <command> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numerical failure, 1 anything else.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from analytic_diffusion import __version__
from analytic_diffusion.errors import ConfigError, LabError
from analytic_diffusion.tools import COMMANDS
from analytic_diffusion.utils.config_utils import load_config, parse_assignments
from analytic_diffusion.utils.log_utils import setup_logging
from analytic_diffusion.utils.manifest_utils import config_from_manifest

logger = logging.getLogger("analytic_diffusion.cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adl",
        description="Training-free diffusion denoisers: statistics, sampling, sensitivity and benchmarks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS), help="experiment to run")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", help="key=value run configuration file")
    source.add_argument("--from-manifest", metavar="MANIFEST",
                        help="re-run with the configuration recorded in a manifest")
    parser.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    parser.add_argument("--out", help="output directory (same as --set output.dir=...)")
    parser.add_argument("--threads", type=int, help="parallelism cap (sets ADL_THREADS)")
    parser.add_argument("--debug", action="store_true", help="enable debug logging")
    return parser


def resolve_config(args: argparse.Namespace):
    overrides = parse_assignments(args.assignments)
    if args.out:
        overrides["output.dir"] = args.out
    if args.from_manifest:
        if not os.path.isfile(args.from_manifest):
            raise ConfigError(f"Manifest {args.from_manifest} does not exist")
        return config_from_manifest(args.from_manifest, overrides)
    return load_config(args.config, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.debug)
    if args.threads is not None:
        if args.threads < 1:
            logger.error("--threads must be >= 1")
            return ConfigError.exit_code
        os.environ["ADL_THREADS"] = str(args.threads)

    try:
        config = resolve_config(args)
        result = COMMANDS[args.command](config)
    except LabError as e:
        logger.error(f"{args.command}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.error("Interrupted")
        return 130

    print(json.dumps({"manifest": result.get("manifest"), "artifacts": len(result.get("artifacts", []))}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
