"""工具子命令：cost-model（記憶體/通訊成本模型）與 info。"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import metadata
from pathlib import Path

from common.config import VERSION, AppConfig
from common.errors import ConfigError
from routes._common import load_config
from services.comm import comm_model, memory_model


def _parse_nodes(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise ConfigError("--nodes", f"expected a number or 'inf', got {text!r}") from None
    if not math.isinf(value) and not value.is_integer():
        raise ConfigError("--nodes", f"expected an integer node count, got {text!r}")
    return value


def _fmt_nodes(M: float) -> str:
    return "inf" if math.isinf(M) else str(int(M))


def _cost_model(args: argparse.Namespace, env: AppConfig) -> int:
    X = float(args.image_bytes)
    D = float(args.data_bytes)
    if X < 0 or D < 0:
        raise ConfigError("--image-bytes" if X < 0 else "--data-bytes", "must be >= 0")

    if args.table is not None:
        if args.table < 1:
            raise ConfigError("--table", "must be >= 1")
        rows = [(float(M), memory_model(M, D, X), comm_model(M, X)) for M in range(1, args.table + 1)]
        rows.append((math.inf, memory_model(math.inf, D, X), comm_model(math.inf, X)))
        print("nodes,memory_bytes,communication_bytes")
        for M, mem, com in rows:
            print(f"{_fmt_nodes(M)},{mem:.1f},{com:.1f}")
        if args.csv is not None:
            args.csv.parent.mkdir(parents=True, exist_ok=True)
            with args.csv.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["nodes", "memory_bytes", "communication_bytes"])
                for M, mem, com in rows:
                    writer.writerow([_fmt_nodes(M), repr(mem), repr(com)])
        return 0

    if args.nodes is None:
        raise ConfigError("--nodes", "required unless --table is given")
    M = _parse_nodes(args.nodes)
    mem = memory_model(M, D, X)
    com = comm_model(M, X)
    ratio = com / X if X else (2.0 if math.isinf(M) else 2.0 * (M - 1.0) / M)
    m_txt = _fmt_nodes(M)
    print(f"Memory({m_txt}) = D/{m_txt} + 3X = {mem:.1f} bytes")
    print(f"Communication({m_txt}) = 2(M-1)/M X = {ratio:g}X = {com:.1f} bytes")
    if args.csv is not None:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        with args.csv.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["nodes", "memory_bytes", "communication_bytes"])
            writer.writerow([m_txt, repr(mem), repr(com)])
    return 0


def _dist_version(name: str) -> str:
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "not installed"


def _info(args: argparse.Namespace, env: AppConfig) -> int:
    payload = {
        "version": VERSION,
        "python": sys.version.split()[0],
        "dependencies": {
            name: _dist_version(name) for name in ("numpy", "scipy", "Pillow", "python-dotenv")
        },
        "environment": {
            "output_dir": str(env.output_dir),
            "log_level": env.log_level,
            "worker_timeout": env.worker_timeout,
        },
    }
    if args.config is not None or args.override:
        cfg = load_config(args)
        payload["config"] = cfg.to_dict()
        payload["config_hash"] = cfg.config_hash()
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("cost-model", help="per-node memory and communication cost models")
    p.add_argument("--nodes", default=None, help="node count M (integer or 'inf')")
    p.add_argument("--image-bytes", type=float, required=True, help="image size X in bytes")
    p.add_argument("--data-bytes", type=float, default=0.0, help="sinogram size D in bytes")
    p.add_argument("--table", type=int, default=None, metavar="N", help="tabulate M = 1..N plus M -> inf")
    p.add_argument("--csv", type=Path, default=None, help="also write the values as CSV")
    p.set_defaults(handler=_cost_model)

    p = subparsers.add_parser("info", help="version, dependency versions and resolved configuration")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(handler=_info)
