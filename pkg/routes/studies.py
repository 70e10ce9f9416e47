"""研究子命令：sweep-k、sweep-quality、noise-study、scalability、run-study。"""

from __future__ import annotations

import argparse
from typing import Optional

from common.config import AppConfig
from routes._common import add_config_args, load_config, output_dir, print_report
from services.study_service import run_study


def study_handler(kind: Optional[str], command: str):
    def _run(args: argparse.Namespace, env: AppConfig) -> int:
        cfg = load_config(args)
        report = run_study(cfg, output_dir(args, env, cfg), kind=kind, command=command)
        print_report(report)
        return 0

    return _run


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("sweep-k", help="dADMM-K over sweep.k_values with elbow selection")
    add_config_args(p)
    p.set_defaults(handler=study_handler("k-sweep", "sweep-k"))

    p = subparsers.add_parser("sweep-quality", help="dADMM-J over sweep.qualities with codec-on-truth reference")
    add_config_args(p)
    p.set_defaults(handler=study_handler("quality-sweep", "sweep-quality"))

    p = subparsers.add_parser("noise-study", help="noise_ladder.methods at every noise_ladder.levels NSD")
    add_config_args(p)
    p.set_defaults(handler=study_handler("noise-ladder", "noise-study"))

    p = subparsers.add_parser("scalability", help="CTR and dADMM for each partition.node_counts on one sinogram")
    add_config_args(p)
    p.set_defaults(handler=study_handler("scalability", "scalability"))

    p = subparsers.add_parser("run-study", help="run whatever study.kind the configuration names")
    add_config_args(p)
    p.set_defaults(handler=study_handler(None, "run-study"))
