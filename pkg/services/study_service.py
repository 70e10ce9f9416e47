"""研究流程：建立 phantom 與 sinogram，執行 CTR / dADMM 各種變體並彙整結果。"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from common.config import load_env
from common.models.geometry import ImageGrid, Roi, ScanGeometry, Sinogram
from common.models.projector import SparseProjector
from common.models.specs import QuantizerSpec
from common.models.trace import CommStats, ConvergenceTrace, TraceEntry
from common.services.logging import log_event
from config import StudyConfig
from services.comm import InProcessTransport, partition_angles, partition_image
from services.metrics import add_noise, psnr, rmse
from services.phantom_service import make_phantom
from services.projector import build_projector, crop_image, forward_project, pad_image
from services.quantizers import compression_report, decode_message, elbow_select, encode_segment
from services.run_repository import RunRepository
from services.solvers import build_nodes, ctr_solve, dadmm_run


@dataclass
class Experiment:
    """同一組設定下所有執行共用的 phantom、幾何、系統矩陣與乾淨 sinogram。"""

    truth: ImageGrid
    padded: ImageGrid
    roi: Roi
    geometry: ScanGeometry
    projector: SparseProjector
    clean: Sinogram


@dataclass
class RunResult:
    label: str
    method: str
    image: ImageGrid
    trace: ConvergenceTrace
    stats: Optional[CommStats] = None
    summary: Dict[str, object] = field(default_factory=dict)


def prepare(cfg: StudyConfig) -> Experiment:
    truth = make_phantom(
        cfg.phantom.kind,
        cfg.phantom.side,
        intensity=cfg.phantom.intensity,
        path=cfg.phantom.path,
    )
    if cfg.geometry.pad:
        padded, roi = pad_image(truth)
    else:
        padded, roi = truth, Roi(0, 0, truth.height, truth.width)
    geom = cfg.geometry.build(padded.width)
    P = build_projector(geom)
    return Experiment(truth, padded, roi, geom, P, forward_project(P, padded))


def _summarize(truth: ImageGrid, image: ImageGrid, trace: ConvergenceTrace) -> Dict[str, object]:
    best = trace.best_iteration()
    series = trace.rmse_series()
    return {
        "rmse": rmse(image, truth),
        "psnr": psnr(image, truth),
        "iterations": len(trace),
        "converged": trace.converged,
        "best_iteration": best,
        "best_rmse": min(series) if series else None,
        "final_rmse": trace.final_rmse(),
    }


def run_ctr(exp: Experiment, cfg: StudyConfig, data: Sinogram, label: str = "ctr") -> RunResult:
    """CTR 基準；每一步梯度下降記錄一筆 trace。"""

    P = exp.projector
    d = data.flat
    trace = ConvergenceTrace()

    def _record(step: int, u: np.ndarray, rel: float) -> None:
        img = crop_image(ImageGrid(P.image_side, P.image_side, u), exp.roi)
        r = P.matrix @ u - d
        trace.append(TraceEntry(step, rmse(img, exp.truth), rel, 0.5 * float(r @ r)))

    u = ctr_solve(P, data, cfg.ctr, on_iteration=_record)
    trace.converged = bool(trace.entries) and trace.entries[-1].relative_x_change < cfg.ctr.stop_tol
    image = crop_image(u, exp.roi)
    return RunResult(label, "ctr", image, trace, None, _summarize(exp.truth, image, trace))


def method_quantizer(method: str, base: QuantizerSpec) -> QuantizerSpec:
    """dadmm-k 強制 kmeans、dadmm-j 強制 jpeg，其餘參數沿用設定。"""

    spec = copy.deepcopy(base)
    if method == "dadmm-k":
        spec.kind = "kmeans"
    elif method == "dadmm-j":
        spec.kind = "jpeg"
    return spec


def run_dadmm(
    exp: Experiment,
    cfg: StudyConfig,
    data: Sinogram,
    quantizer: QuantizerSpec,
    label: str = "dadmm",
    method: str = "dadmm",
    timeout: Optional[float] = None,
) -> RunResult:
    admm = copy.deepcopy(cfg.admm)
    admm.quantizer = quantizer
    admm.validate()
    M = cfg.partition.nodes
    P = exp.projector
    side = P.image_side

    angles = partition_angles(exp.geometry.n_angles, M)
    segments = partition_image(P.n_cols, side, M)
    nodes = build_nodes(P, data, angles, segments, admm)
    transport = InProcessTransport(M, timeout=timeout if timeout is not None else load_env().worker_timeout)
    x, trace = dadmm_run(nodes, admm, transport, truth=exp.truth, roi=exp.roi)

    image = crop_image(x, exp.roi)
    summary = _summarize(exp.truth, image, trace)
    # 以最終影像實測 codec 的壓縮比例
    msgs = [
        encode_segment(
            x.pixels[lo:hi],
            quantizer,
            segment_index=m,
            block_shape=segments.block_shape(m),
            seed=np.random.SeedSequence([quantizer.seed, len(trace), m]),
        )
        for m, (lo, hi) in enumerate(segments.ranges)
    ]
    summary.update(
        {
            "nodes": M,
            "quantizer": quantizer.kind,
            "bytes_sent": transport.stats.total_sent,
            "bytes_received": transport.stats.total_received,
            "header_bytes": transport.stats.total_header,
            "compression": compression_report(msgs),
        }
    )
    return RunResult(label, method, image, trace, transport.stats, summary)


def run_method(exp: Experiment, cfg: StudyConfig, data: Sinogram, method: str, label: str) -> RunResult:
    if method == "ctr":
        return run_ctr(exp, cfg, data, label)
    return run_dadmm(exp, cfg, data, method_quantizer(method, cfg.quantizer), label, method)


def noisy_data(exp: Experiment, cfg: StudyConfig, nsd: Optional[float] = None) -> Sinogram:
    spec = copy.deepcopy(cfg.noise)
    if nsd is not None:
        spec.nsd = nsd
    return add_noise(exp.clean, spec)


# ---------------------------------------------------------------------------
# 研究種類
# ---------------------------------------------------------------------------


def _single(kind: str) -> Callable[[Experiment, StudyConfig, RunRepository], Dict[str, object]]:
    method = {"ctr-baseline": "ctr"}.get(kind, kind)

    def _run(exp: Experiment, cfg: StudyConfig, repo: RunRepository) -> Dict[str, object]:
        result = run_method(exp, cfg, noisy_data(exp, cfg), method, method)
        _save_result(repo, result)
        return {"runs": {result.label: result.summary}}

    return _run


def codec_reference(exp: Experiment, cfg: StudyConfig, spec: QuantizerSpec) -> float:
    """把 codec 直接套在真值上（依節點區段切塊編碼再解碼），回傳裁切後的 RMSE。"""

    P = exp.projector
    segments = partition_image(P.n_cols, P.image_side, cfg.partition.nodes)
    pixels = exp.padded.pixels
    decoded = np.concatenate(
        [
            decode_message(
                encode_segment(
                    pixels[lo:hi],
                    spec,
                    segment_index=m,
                    block_shape=segments.block_shape(m),
                    seed=np.random.SeedSequence([spec.seed, 0, m]),
                )
            )
            for m, (lo, hi) in enumerate(segments.ranges)
        ]
    )
    image = crop_image(ImageGrid(P.image_side, P.image_side, decoded), exp.roi)
    return rmse(image, exp.truth)


def _k_sweep(exp: Experiment, cfg: StudyConfig, repo: RunRepository) -> Dict[str, object]:
    data = noisy_data(exp, cfg)
    curve: List[List[float]] = []
    reference: List[List[float]] = []
    runs: Dict[str, object] = {}
    for k in cfg.sweep.k_values:
        spec = method_quantizer("dadmm-k", cfg.quantizer)
        spec.k = k
        result = run_dadmm(exp, cfg, data, spec, label=f"dadmm-k_k{k}", method="dadmm-k")
        result.summary["reference_rmse"] = codec_reference(exp, cfg, spec)
        _save_result(repo, result)
        runs[result.label] = result.summary
        curve.append([k, float(result.summary["rmse"])])
        reference.append([k, float(result.summary["reference_rmse"])])
    elbow = elbow_select([(int(k), r) for k, r in curve])
    drops = [curve[i][1] - curve[i + 1][1] for i in range(len(curve) - 1)]
    return {
        "runs": runs,
        "rmse_by_k": curve,
        "reference_by_k": reference,
        "elbow_k": elbow,
        "drops": drops,
        # 第一段下降相對第二段下降的倍數（2→3 對 3→4）
        "drop_ratio": drops[0] / drops[1] if len(drops) > 1 and drops[1] > 0 else None,
    }


def _quality_sweep(exp: Experiment, cfg: StudyConfig, repo: RunRepository) -> Dict[str, object]:
    data = noisy_data(exp, cfg)
    curve: List[List[float]] = []
    reference: List[List[float]] = []
    runs: Dict[str, object] = {}
    for quality in cfg.sweep.qualities:
        spec = method_quantizer("dadmm-j", cfg.quantizer)
        spec.quality = quality
        result = run_dadmm(exp, cfg, data, spec, label=f"dadmm-j_q{quality}", method="dadmm-j")
        result.summary["reference_rmse"] = codec_reference(exp, cfg, spec)
        _save_result(repo, result)
        runs[result.label] = result.summary
        curve.append([quality, float(result.summary["rmse"])])
        reference.append([quality, float(result.summary["reference_rmse"])])
    best = min(curve, key=lambda row: row[1])
    return {
        "runs": runs,
        "rmse_by_quality": curve,
        "reference_by_quality": reference,
        "best_quality": int(best[0]),
    }


def _noise_ladder(exp: Experiment, cfg: StudyConfig, repo: RunRepository) -> Dict[str, object]:
    runs: Dict[str, object] = {}
    table: Dict[str, List[float]] = {m: [] for m in cfg.noise_ladder.methods}
    # 參考值與雜訊無關；ctr 不經過 codec
    reference: Dict[str, Optional[float]] = {
        m: None if m == "ctr" else codec_reference(exp, cfg, method_quantizer(m, cfg.quantizer))
        for m in cfg.noise_ladder.methods
    }
    for nsd in cfg.noise_ladder.levels:
        data = noisy_data(exp, cfg, nsd)
        for method in cfg.noise_ladder.methods:
            label = f"{method}_nsd{nsd:g}"
            result = run_method(exp, cfg, data, method, label)
            result.summary["nsd"] = nsd
            result.summary["reference_rmse"] = reference[method]
            _save_result(repo, result)
            runs[label] = result.summary
            table[method].append(float(result.summary["rmse"]))
    return {
        "runs": runs,
        "levels": list(cfg.noise_ladder.levels),
        "rmse_by_method": table,
        "reference": reference,
    }


def _scalability(exp: Experiment, cfg: StudyConfig, repo: RunRepository) -> Dict[str, object]:
    """同一份 sinogram 上的 CTR 與各節點數 dADMM，逐輪 RMSE 併成一份 scalability.csv。"""

    data = noisy_data(exp, cfg)
    results = [run_ctr(exp, cfg, data, "ctr")]
    for M in cfg.partition.node_counts:
        sub = copy.deepcopy(cfg)
        sub.partition.nodes = M
        results.append(run_dadmm(exp, sub, data, cfg.quantizer, label=f"dadmm_m{M}", method="dadmm"))
    for result in results:
        _save_result(repo, result)

    series = [r.trace.rmse_series() for r in results]
    length = max(len(s) for s in series)
    rows = [[k, *(s[k] if k < len(s) else None for s in series)] for k in range(length)]
    repo.save_table("scalability.csv", ["iteration", *(r.label for r in results)], rows)

    comparison = [
        {
            "label": r.label,
            "nodes": r.summary.get("nodes", 1),
            "rmse": r.summary["rmse"],
            "iterations": r.summary["iterations"],
            "bytes_sent": r.summary.get("bytes_sent", 0),
        }
        for r in results
    ]
    return {"runs": {r.label: r.summary for r in results}, "comparison": comparison}


STUDIES = {
    "ctr-baseline": _single("ctr-baseline"),
    "dadmm": _single("dadmm"),
    "dadmm-k": _single("dadmm-k"),
    "dadmm-j": _single("dadmm-j"),
    "k-sweep": _k_sweep,
    "quality-sweep": _quality_sweep,
    "noise-ladder": _noise_ladder,
    "scalability": _scalability,
}


def _save_result(repo: RunRepository, result: RunResult) -> None:
    repo.save_image(result.label, result.image)
    repo.save_trace(result.label, result.trace)
    if result.stats is not None:
        repo.save_comm(result.label, result.stats)


@dataclass
class StudyReport:
    kind: str
    run_dir: Path
    summary: Dict[str, object]


def resolve_output_dir(cfg: StudyConfig, output_dir: Optional[Path] = None) -> Path:
    if output_dir is not None:
        base = Path(output_dir)
    elif cfg.output.dir:
        base = Path(cfg.output.dir)
    else:
        base = load_env().output_dir
    return base / cfg.study.name


def run_study(
    cfg: StudyConfig,
    output_dir: Optional[Path] = None,
    *,
    kind: Optional[str] = None,
    command: str = "run-study",
) -> StudyReport:
    """執行 ``kind``（預設為 ``study.kind``）並把所有輸出寫到執行目錄。"""

    kind = kind or cfg.study.kind
    run_dir = resolve_output_dir(cfg, output_dir)
    log_event("info", "study_started", kind=kind, output_dir=str(run_dir))

    exp = prepare(cfg)
    repo = RunRepository(run_dir, save_pgm=cfg.output.save_pgm)
    repo.save_image("truth", exp.truth)
    if cfg.output.save_sinogram:
        repo.save_sinogram("sinogram", exp.clean)

    body = STUDIES[kind](exp, cfg, repo)
    summary: Dict[str, object] = {
        "kind": kind,
        "config_hash": cfg.config_hash(),
        "phantom": {"kind": cfg.phantom.kind, "side": cfg.phantom.side},
        "geometry": {
            "n_angles": exp.geometry.n_angles,
            "n_detectors": exp.geometry.n_detectors,
            "grid_side": exp.geometry.image_side,
        },
        **body,
    }
    repo.save_summary(summary)
    repo.save_json("config.json", cfg.to_dict())
    repo.write_manifest(command, kind, cfg.config_hash(), cfg.seeds())
    log_event("info", "study_finished", kind=kind, output_dir=str(run_dir))
    return StudyReport(kind, run_dir, summary)
