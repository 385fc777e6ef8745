"""
AugRL Bench - Command line
train, verify, preview and stats commands with a stable exit-code contract:
0 success, 1 verification failure, 2 usage/config error, 3 I/O error
"""

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from config.schema import TrainConfig, config_help, load_config
from config.settings import (
    APP_NAME,
    APP_VERSION,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VERIFY_FAILED,
    MANIFEST_FILE,
    RUNS_DIR,
    STATS_FILE,
    VERIFY_SUITES,
    get_env_seed,
)
from core.augment import TransformSpec, apply_transform, parse_param
from core.errors import AugRLError, ConfigError, InvalidInputError, ParameterDomainError
from core.trainer import train
from core.verify import run_all, run_suite
from utils.helpers import export_dataframe, format_duration, read_pgm, run_timestamp, to_uint8, to_unit_range, write_pgm
from utils.logger import get_logger

logger = get_logger(__name__)


def _resolve_seed(cli_seed: Optional[int], default: int) -> int:
    """--seed, then AUGRL_SEED, then the config's own seed"""
    if cli_seed is not None:
        return cli_seed
    env_seed = get_env_seed()
    return env_seed if env_seed is not None else default


def _usage(message: str) -> int:
    logger.error(message)
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _io_error(message: str) -> int:
    logger.error(message)
    print(f"I/O error: {message}", file=sys.stderr)
    return EXIT_IO


# ==================== TRAIN ====================

def cmd_train(args: argparse.Namespace) -> int:
    try:
        if args.config:
            config, raw = load_config(args.config)
        else:
            config, raw = TrainConfig(), None
    except ConfigError as e:
        return _usage(str(e))
    except OSError as e:
        return _io_error(f"cannot read config {args.config}: {e}")

    config = config.model_copy(update={"seed": _resolve_seed(args.seed, config.seed)})
    out_dir = Path(args.out) if args.out else RUNS_DIR / run_timestamp()
    if (out_dir / MANIFEST_FILE).exists():
        return _usage(f"{out_dir} already holds a run; choose another --out")

    try:
        result = train(config, out_dir, raw)
    except ConfigError as e:
        return _usage(str(e))
    except OSError as e:
        return _io_error(str(e))
    except AugRLError as e:
        logger.error(f"Training failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    print(f"run: {result.run_dir}")
    print(f"steps: {result.steps}  updates: {result.updates}  updates/step: {result.updates_per_step}")
    print(f"final eval return: {result.final_eval:.4f}")
    for kind, score in result.complexity.items():
        label = "complex" if score.complex else "simple"
        print(f"transform {kind}: similarity {score.score:.4f} (baseline {score.baseline:.4f}) {label}")
    return EXIT_OK


# ==================== VERIFY ====================

def cmd_verify(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args.seed, 0)
    started = time.time()
    try:
        if args.suite == "all":
            report = run_all(seed, threads=args.threads)
        else:
            report = run_suite(args.suite, seed)
    except InvalidInputError as e:
        return _usage(str(e))

    print(report.to_text())
    print(f"elapsed {format_duration(time.time() - started)}")
    if args.report:
        try:
            report.to_csv(args.report)
        except OSError as e:
            return _io_error(f"cannot write report {args.report}: {e}")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


# ==================== PREVIEW ====================

def cmd_preview(args: argparse.Namespace) -> int:
    try:
        spec = TransformSpec.parse(args.transform)
        param = parse_param(args.param)
    except ParameterDomainError as e:
        return _usage(str(e))

    try:
        image = read_pgm(args.input)
    except OSError as e:
        # PGMFormatError is an OSError
        return _io_error(f"cannot read {args.input}: {e}")

    try:
        frame = apply_transform(spec, param, to_unit_range(image)[np.newaxis])
    except (ParameterDomainError, InvalidInputError) as e:
        return _usage(str(e))

    try:
        write_pgm(args.output, to_uint8(frame[0]))
    except OSError as e:
        return _io_error(f"cannot write {args.output}: {e}")
    logger.info(f"Preview {args.param} on {args.input} → {args.output}")
    return EXIT_OK


# ==================== STATS ====================

def summarize_stats(stats: pd.DataFrame, last: Optional[int] = None) -> pd.DataFrame:
    """Mean, std and final value of every statistic column"""
    if last:
        stats = stats.tail(last)
    numeric = stats.drop(columns=["step"], errors="ignore").select_dtypes("number")
    summary = pd.DataFrame({
        "mean": numeric.mean(),
        "std": numeric.std(ddof=0),
        "final": numeric.iloc[-1] if len(numeric) else np.nan,
    })
    summary.index.name = "statistic"
    return summary.reset_index()


def cmd_stats(args: argparse.Namespace) -> int:
    path = Path(args.run) / STATS_FILE
    try:
        stats = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        return _io_error(f"cannot read {path}: {e}")

    summary = summarize_stats(stats, args.last)
    print(summary.to_string(index=False))
    if args.out:
        try:
            export_dataframe(summary, args.out)
        except OSError as e:
            return _io_error(f"cannot write {args.out}: {e}")
    return EXIT_OK


# ==================== PARSER ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augrl",
        description=f"{APP_NAME} {APP_VERSION}: augmentation actor-critic training and verification",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train one seed from a config file",
                       epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="Run config file (dotted key = value lines); defaults when omitted")
    p.add_argument("--seed", type=int, help="Seed (falls back to AUGRL_SEED, then the config)")
    p.add_argument("--out", help="Run directory (default: runs/<timestamp>)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("verify", help="Run numerical verification suites")
    p.add_argument("--suite", default="all", help=f"One of: {', '.join(VERIFY_SUITES)}, all")
    p.add_argument("--seed", type=int, help="Seed (falls back to AUGRL_SEED, then 0)")
    p.add_argument("--threads", type=int, default=1, help="Worker threads for --suite all")
    p.add_argument("--report", help="Also write the report as CSV")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser(
        "preview",
        help="Apply one transform to a PGM image",
        description="Apply one transform to a PGM image. The output header is always written in "
                    "canonical form (no comments, single separators), so an identity transform "
                    "reproduces the input byte for byte only when its header is already canonical.",
    )
    p.add_argument("--transform", required=True, help="Transform family, e.g. shift:max_pad=4")
    p.add_argument("--param", required=True, help="Parameter, e.g. shift:dx=2,dy=0")
    p.add_argument("--in", dest="input", required=True, help="Input 8-bit PGM (P5)")
    p.add_argument("--out", dest="output", required=True, help="Output PGM")
    p.set_defaults(handler=cmd_preview)

    p = sub.add_parser("stats", help="Summarize the recorded statistics of a run")
    p.add_argument("--run", required=True, help="Run directory")
    p.add_argument("--last", type=int, help="Only the last N records")
    p.add_argument("--out", help="Write the summary as CSV")
    p.set_defaults(handler=cmd_stats)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors
        return int(e.code or 0)
    return args.handler(args)
