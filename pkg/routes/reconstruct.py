"""投影與重建子命令：project、reconstruct-ctr、reconstruct-dadmm。"""

from __future__ import annotations

import argparse
import json

from common.config import AppConfig
from common.services.logging import log_event
from routes._common import add_config_args, load_config, output_dir
from routes.studies import study_handler
from services.run_repository import RunRepository
from services.study_service import noisy_data, prepare, resolve_output_dir


def _project(args: argparse.Namespace, env: AppConfig) -> int:
    cfg = load_config(args)
    run_dir = resolve_output_dir(cfg, output_dir(args, env, cfg))
    exp = prepare(cfg)
    data = noisy_data(exp, cfg)

    repo = RunRepository(run_dir, save_pgm=cfg.output.save_pgm)
    repo.save_image("truth", exp.truth)
    repo.save_image("padded", exp.padded)
    repo.save_sinogram("sinogram", data)
    summary = {
        "kind": "project",
        "config_hash": cfg.config_hash(),
        "grid_side": exp.geometry.image_side,
        "n_angles": exp.geometry.n_angles,
        "n_detectors": exp.geometry.n_detectors,
        "nnz": exp.projector.nnz,
        "nsd": cfg.noise.nsd,
        "sinogram_max": float(exp.clean.values.max()),
    }
    repo.save_summary(summary)
    repo.save_json("config.json", cfg.to_dict())
    repo.write_manifest("project", "project", cfg.config_hash(), cfg.seeds())
    log_event("info", "project_done", output_dir=str(run_dir), nnz=exp.projector.nnz)
    print(json.dumps({"kind": "project", "run_dir": str(run_dir), "nnz": exp.projector.nnz}))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("project", help="generate the phantom and its (noisy) sinogram")
    add_config_args(p)
    p.set_defaults(handler=_project)

    p = subparsers.add_parser("reconstruct-ctr", help="centralized gradient-descent reconstruction")
    add_config_args(p)
    p.set_defaults(handler=study_handler("ctr-baseline", "reconstruct-ctr"))

    p = subparsers.add_parser(
        "reconstruct-dadmm",
        help="decentralized ADMM reconstruction (codec from quantizer.kind)",
    )
    add_config_args(p)
    p.set_defaults(handler=study_handler("dadmm", "reconstruct-dadmm"))
