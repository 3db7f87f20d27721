"""
Command-line entry point.
Universal targeted adversarial perturbations against a speaker recognition model.

Usage:
    python main.py <subcommand> --config run.toml [--out DIR] [--threads N]
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from config.run_config import load_run_config
from config.settings import settings
from orchestrator.orchestrator import CHANNEL_CONDITIONS, orchestrator
from orchestrator.response_builder import response_builder
from utils.errors import SpeakerUapError
from utils.validators import validate_threads

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "synth-corpus": "Generate the synthetic speaker corpus",
    "train-model": "Train the speaker model and write its checkpoint",
    "gen-rirs": "Simulate the room impulse response set",
    "attack-universal": "Train one universal perturbation per target",
    "attack-individual": "Run the per-utterance attack baseline",
    "evaluate": "Evaluate perturbations or run the check suites",
    "bench": "Time universal application against per-utterance attacks",
}


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.StreamHandler(sys.stdout),
        ],
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speaker-uap", description=__doc__.strip().splitlines()[1])
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="Run configuration (TOML)")
        sub.add_argument("--out", default=None, help="Output directory (default: [paths].out_dir)")
        sub.add_argument("--threads", type=int, default=None, help="Cap on worker threads")
        if name == "evaluate":
            sub.add_argument("--channel", choices=sorted(CHANNEL_CONDITIONS), default=None)
            sub.add_argument(
                "--suite", choices=["attack", "sweep", "properties", "gradients"], default="attack"
            )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.log_level)
    try:
        threads = validate_threads(args.threads)
        if threads is not None:
            settings.max_workers = threads
        config = load_run_config(args.config)
        options = {key: getattr(args, key) for key in ("channel", "suite") if hasattr(args, key)}
        result = orchestrator.run(args.command, config, args.out, options)
    except SpeakerUapError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed unexpectedly: {type(e).__name__}: {e}", exc_info=True)
        print(f"error: internal failure in {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return SpeakerUapError.exit_code
    print(response_builder.format_summary(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
