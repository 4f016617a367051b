"""Command-line entry point.

    dropbench pipeline --config cfg.toml
    dropbench generate|train|attribute|corrupt|evaluate|report --config cfg.toml

Failures exit nonzero and print a single machine-readable JSON error record
on stderr: {"error": ..., "stage": ..., "type": ...}.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import pipeline
from .config import load_config
from .errors import ArtifactError, ConfigurationError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes for per-sample stages (default: CPU count)")
    p.add_argument("--force", action="store_true",
                   help="accept artifacts with a mismatched config hash")
    p.add_argument("--restrict-correct", action="store_true",
                   help="evaluate only correctly classified samples")
    p.add_argument("--k-grid", type=str, default=None,
                   help="comma-separated corruption levels, e.g. 0.05,0.15,0.25")
    p.add_argument("--include-k-1", action="store_true",
                   help="append k=1.0 to the corruption grid")
    p.add_argument("--out", type=str, default=None,
                   help="output root (also settable via DROPBENCH_OUT)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dropbench",
        description="corruption-based evaluation of post-hoc attribution methods")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in pipeline.STAGES + ("pipeline",):
        p = sub.add_parser(name, help=f"run the {name} stage"
                           if name != "pipeline" else "run all stages in order")
        _add_common(p)
    return parser


def _overrides_from(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.restrict_correct:
        overrides["restrict_correct"] = True
    if args.include_k_1:
        overrides["include_k_1"] = True
    if args.k_grid:
        try:
            overrides["k_grid"] = [float(tok) for tok in args.k_grid.split(",") if tok]
        except ValueError as exc:
            raise ConfigurationError(f"bad --k-grid value: {exc}") from exc
    if args.out:
        overrides["output_root"] = args.out
    return overrides


_STAGE_FN = {
    "generate": pipeline.stage_generate,
    "train": pipeline.stage_train,
    "attribute": pipeline.stage_attribute,
    "corrupt": pipeline.stage_corrupt,
    "evaluate": pipeline.stage_evaluate,
    "report": pipeline.stage_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides_from(args))
        if args.command == "pipeline":
            out = pipeline.run_pipeline(cfg, force=args.force, jobs=args.jobs)
        elif args.command == "attribute":
            out = pipeline.stage_attribute(cfg, force=args.force, jobs=args.jobs)
        else:
            out = _STAGE_FN[args.command](cfg, force=args.force)
        print(json.dumps({"ok": True, "stage": args.command,
                          "config_hash": cfg.config_hash, "artifacts": str(out)}))
        return 0
    except (ConfigurationError, ArtifactError) as exc:
        _emit_error(args.command, exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports everything
        _emit_error(args.command, exc)
        return 1


def _emit_error(stage: str, exc: Exception) -> None:
    record = {"error": str(exc), "stage": stage, "type": type(exc).__name__}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
