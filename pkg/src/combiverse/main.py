"""Command-line entry point for the combiverse pipeline.

Module Information:
    - Filename: main.py
    - Module: main
    - Location: src/combiverse/

Usage::

    combiverse decompose|reconstruct|combine|run-all --config run.yaml [--force] [--seed N] [--run-dir P]
    combiverse ablate --config run.yaml --modes base depth ssds-full [--seeds 0 1 2]
    combiverse init --out run.yaml
    combiverse example toy|two-cubes --out folder

Exit codes: 0 success, 2 validation or configuration error, 3 backend
failure, 4 optimization divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
from collections.abc import Sequence
import pathlib

from combiverse import __version__
from combiverse.errors import EXIT_FAILURE, EXIT_OK, CombiverseError
from combiverse.guidance.config import PRESETS
from combiverse.pipeline_cli.config import default_config_document, load_run_config, save_run_config
from combiverse.pipeline_cli.examples import EXAMPLES, write_example
from combiverse.pipeline_cli.stages import (
    cmd_ablate,
    cmd_combine,
    cmd_decompose,
    cmd_reconstruct,
    cmd_run_all,
)
from combiverse.utils_logger import init_logger, logger

STAGE_COMMANDS = {
    "decompose": cmd_decompose,
    "reconstruct": cmd_reconstruct,
    "combine": cmd_combine,
    "run-all": cmd_run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="combiverse", description="Compose a 3D scene from a single multi-object image."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=pathlib.Path, help="run configuration (YAML)")
    common.add_argument("--force", action="store_true", help="re-run stages that are up to date")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--run-dir", type=pathlib.Path, default=None, help="override the run directory")
    common.add_argument("--log-level", default="INFO", help="loguru level for console and file logs")

    for name in STAGE_COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")

    ablate = sub.add_parser("ablate", parents=[common], help="compare guidance presets")
    ablate.add_argument("--modes", nargs="+", required=True, choices=sorted(PRESETS))
    ablate.add_argument("--seeds", nargs="+", type=int, default=None)

    init = sub.add_parser("init", help="write the default run configuration")
    init.add_argument("--out", type=pathlib.Path, default=pathlib.Path("combiverse.yaml"))
    init.add_argument("--scene", default="scene.yaml")
    init.add_argument("--run-dir", default="run")

    example = sub.add_parser("example", help="write a bundled example scene and config")
    example.add_argument("name", choices=EXAMPLES)
    example.add_argument("--out", type=pathlib.Path, required=True)
    return parser


def _run(args: argparse.Namespace) -> None:
    if args.command == "init":
        init_logger()
        path = save_run_config(default_config_document(args.scene, args.run_dir), args.out)
        logger.info(f"Wrote default configuration to {path}")
        return
    if args.command == "example":
        init_logger()
        write_example(args.name, args.out)
        return

    config = load_run_config(args.config, run_dir=args.run_dir, seed=args.seed)
    init_logger(args.log_level, log_dir=config.run_dir / "logs")
    logger.info(f"combiverse {args.command}: run directory {config.run_dir}")
    if args.command == "ablate":
        report = cmd_ablate(config, args.modes, seeds=args.seeds)
        logger.info(f"Ablation results:\n{report.table.to_string(index=False)}")
        return
    STAGE_COMMANDS[args.command](config, force=args.force)


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run the command and translate failures to exit codes.

    Returns:
        int: 0 on success, otherwise the exit code of the failure.
    """
    args = build_parser().parse_args(argv)
    try:
        _run(args)
    except CombiverseError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_FAILURE
    logger.info("Done.")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())


__all__ = ["build_parser", "main"]
