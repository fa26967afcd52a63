"""Command line: ``degenctrl run <config.json>`` and ``degenctrl validate <config.json>``.

Exit status: 0 success, 1 unreadable or invalid config, 2 invariant
violation, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import json
import logging
import os
from pathlib import Path
import platform
import sys
import time

import numpy as np

from . import __version__
from .errors import InvariantViolation, SolverError
from .studies import ConfigError, ExperimentConfig, make_tasks, parse_config, run_task

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_NONCONVERGED = 0, 1, 2, 3
SEED_ENV = "DEGENCTRL_SEED"

log = logging.getLogger("degenctrl")


def load_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if isinstance(raw, dict) and os.environ.get(SEED_ENV):
        try:
            raw["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, "must be an integer") from None
    return parse_config(raw)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, rows: list) -> None:
    columns = []
    for r in rows:
        columns.extend(k for k in r if k not in columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(format_value(r[c]) if c in r else "" for c in columns)


def write_field(path: Path, values: np.ndarray) -> None:
    """One row per time level (or interval), one column per node."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for col in np.asarray(values).T:
            w.writerow(format_value(v) for v in col)


def execute(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = make_tasks(cfg)
    cfg_dict = cfg.to_dict()
    start = time.perf_counter()
    status = EXIT_OK
    results = []
    try:
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run_task, [cfg_dict] * len(tasks), tasks))
        else:
            results = [run_task(cfg_dict, t) for t in tasks]
    except InvariantViolation as exc:
        log.error("invariant violated: %s", exc)
        status = EXIT_ASSERT
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        status = EXIT_NONCONVERGED

    rows = [r for res in results for r in res["rows"]]
    write_csv(out_dir / "report.csv", rows)
    for i, res in enumerate(results):
        for name, values in res["fields"].items():
            write_field(out_dir / f"field_{name}_{i}.csv", values)
    if status == EXIT_OK and not all(res["converged"] for res in results):
        status = EXIT_NONCONVERGED
    meta = {
        "config": cfg_dict,
        "versions": {"degenctrl": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "wall_time_s": time.perf_counter() - start,
        "tasks": len(tasks),
        "exit_status": status,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degenctrl", description="Degenerate parabolic control experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        return EXIT_OK
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg, Path(args.out or cfg.output), args.jobs)


if __name__ == "__main__":
    sys.exit(main())
