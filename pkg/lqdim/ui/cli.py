"""
lqdim/ui/cli.py
Command-line front door: `lqdim <command> [spec] [flags]`.

Exit codes: 0 ok, 1 invariant failure, 2 usage or parse error, 3 resource limit.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from lqdim.core.config import get_settings
from lqdim.core.exceptions import AppError, SpecParseError
from lqdim.core.logger import setup_logging
from lqdim.domain.schemas import RunConfig
from lqdim.services import pipeline_service
from lqdim.utils.files import resolve_spec_path

logger = logging.getLogger(__name__)

COMMANDS = ("spectrum", "entropy", "pack", "verify", "sphere-lift")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from exc


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="lqdim",
        description="L^q spectra and entropy dimension of self-conformal measures.",
    )
    parser.add_argument("--log-level", default=None, help="console log level (default from LQDIM_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("spec", nargs="?" if name == "verify" else None,
                       help="IFS spec file or bundled spec name (verify: all bundled specs when omitted)")
        p.add_argument("--q", dest="q_list", type=_floats, default=list(settings.q_grid))
        p.add_argument("--t-min", type=int, default=settings.t_min)
        p.add_argument("--t-max", type=int, default=settings.t_max)
        p.add_argument("--lam", type=float, default=settings.grid_lambda)
        p.add_argument("--restarts", type=int, default=settings.restarts)
        p.add_argument("--delta-atom", type=float, default=None)
        p.add_argument("--word-budget", type=int, default=settings.word_budget)
        p.add_argument("--random-packings", type=int, default=settings.random_packings)
        p.add_argument("--fit-window", type=int, default=settings.fit_window)
        p.add_argument("--out", dest="output_dir", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int, default=settings.seed)
        p.add_argument("--force", action="store_true", help="run entropy past a failed doubling gate")
        if name == "verify":
            p.add_argument("--packing", dest="packing_path", type=Path, default=None,
                           help="packing fixture (JSON) to verify against each measure")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Validate parsed flags into a RunConfig."""
    try:
        spec_path = resolve_spec_path(args.spec) if args.spec else None
    except FileNotFoundError as exc:
        raise SpecParseError(str(exc), field="spec", original=exc) from exc
    values = {
        "spec_path": spec_path,
        "analysis": args.command,
        "q_list": args.q_list,
        "t_min": args.t_min,
        "t_max": args.t_max,
        "lam": args.lam,
        "restarts": args.restarts,
        "delta_atom": args.delta_atom,
        "word_budget": args.word_budget,
        "random_packings": args.random_packings,
        "output_dir": args.output_dir,
        "seed": args.seed,
        "force": args.force,
        "fit_window": args.fit_window,
        "packing_path": getattr(args, "packing_path", None),
    }
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise SpecParseError(f"invalid option '{where}': {first['msg']}", field=where, original=exc) from exc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        settings = get_settings()
        setup_logging(args.log_level, settings.log_dir, enable_file_log=settings.log_to_file)
    try:
        config = config_from_args(args)
        outcome = pipeline_service.run(config)
    except AppError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    for line in outcome.summary:
        print(line)
    for path in outcome.files:
        print(f"wrote {path}")
    return outcome.exit_code
