"""``posegeom`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import PoseGeomError
from .harness import TASKS, load_config, run, write_report

log = logging.getLogger("posegeom")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posegeom", description="Pose geometry toolkit experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    p.add_argument("--out", type=Path, help="output directory (overrides config.output)")
    p.add_argument("--workers", type=int, help="scene-level worker processes")
    p.add_argument("--seed", type=int, help="base seed (overrides config.seed)")
    return p


def _setup_logging() -> None:
    level = os.environ.get("POSEGEOM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        print("posegeom: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, task=args.task, seed=args.seed,
                          out=str(args.out) if args.out else None, workers=args.workers)
        log.info("running %s with seed %d", args.task, cfg["seed"])
        report = run(args.task, cfg)
    except (PoseGeomError, OSError) as exc:
        print(f"posegeom: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.task == "synth":
        print(report["results"][0]["scene_dir"])
        return 0
    out = Path(cfg.get("output") or ".")
    path = write_report(report, out)
    print(path)
    if args.task == "gradcheck" and not report["aggregate"]["all_passed"]:
        print("posegeom: gradient check failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
