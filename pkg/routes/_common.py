"""子命令共用的參數與設定載入。"""

from __future__ import annotations

import argparse
import json
from pathlib import Path
from typing import Optional

from common.config import AppConfig
from config import StudyConfig
from services.study_service import StudyReport


def add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON study configuration file")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one configuration value (repeatable, last one wins)",
    )
    parser.add_argument("--output-dir", type=Path, default=None, help="base directory for run outputs")


def load_config(args: argparse.Namespace) -> StudyConfig:
    return StudyConfig.load(args.config, args.override)


def output_dir(args: argparse.Namespace, env: AppConfig, cfg: StudyConfig) -> Optional[Path]:
    if args.output_dir is not None:
        return args.output_dir
    if cfg.output.dir:
        return None
    return env.output_dir


def print_report(report: StudyReport) -> None:
    runs = report.summary.get("runs", {})
    line = {
        "kind": report.kind,
        "run_dir": str(report.run_dir),
        "rmse": {label: s.get("rmse") for label, s in runs.items()} if isinstance(runs, dict) else {},
    }
    if "elbow_k" in report.summary:
        line["elbow_k"] = report.summary["elbow_k"]
    if "best_quality" in report.summary:
        line["best_quality"] = report.summary["best_quality"]
    print(json.dumps(line, default=str))
