"""CTR 梯度下降與去中心化 ADMM（dADMM）的更新規則。

dADMM 每個節點一個 worker thread；節點只在每輪的 allgather 同步。
每輪順序：u 子問題 → 負責區段的 x 子問題 → 量化 → allgather → 解碼拼接 → 對偶更新。
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from common.errors import CollectiveAborted, DimensionError, DivergenceError, NodeFailure
from common.models.geometry import ImageGrid, Roi, Sinogram
from common.models.node_state import NodeState
from common.models.partition import AnglePartition, SegmentPartition
from common.models.projector import SparseProjector
from common.models.specs import AdmmConfig, CtrConfig
from common.models.trace import ConvergenceTrace, TraceEntry
from common.services.logging import log_event
from services.comm import Transport, allgather_segments
from services.metrics import rmse
from services.projector import estimate_operator_norm
from services.quantizers import decode_message, encode_segment


DIVERGENCE_NORM = 1e12
# power iteration 由下方逼近最大特徵值，步長再留一點餘裕
STEP_SAFETY = 1.01


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    num = float(np.linalg.norm(new - old))
    den = float(np.linalg.norm(new))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


def _check_norm(vec: np.ndarray, what: str, *, node_id: Optional[int] = None, iteration: Optional[int] = None) -> None:
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
        raise DivergenceError(f"{what} norm {norm:.3g} exceeds {DIVERGENCE_NORM:g}", node_id=node_id, iteration=iteration)


def auto_step(P: SparseProjector, shift: float = 0.0, seed: int = 0) -> float:
    """1 / (‖P‖² + shift)，‖P‖² 以 power iteration 估計。"""

    lipschitz = estimate_operator_norm(P, seed=seed) + shift
    if lipschitz <= 0.0:
        return 1.0
    return 1.0 / (STEP_SAFETY * lipschitz)


# ---------------------------------------------------------------------------
# CTR
# ---------------------------------------------------------------------------


def ctr_solve(
    P: SparseProjector,
    d: Sinogram,
    cfg: CtrConfig,
    on_iteration: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> ImageGrid:
    """由全零開始迭代 u ← u − η·Pᵀ(Pu − d)，直到 E 步或相對更新量 < stop_tol。"""

    data = d.flat
    if P.n_rows != data.size:
        raise DimensionError(f"projector has {P.n_rows} rows, sinogram has {data.size} values")
    cfg.validate()
    eta = cfg.learning_rate if cfg.learning_rate is not None else auto_step(P)

    u = np.zeros(P.n_cols, dtype=np.float64)
    converged = False
    steps = 0
    for e in range(cfg.iterations):
        grad = P.matrix.T @ (P.matrix @ u - data)
        u_new = u - eta * grad
        _check_norm(u_new, "ctr iterate", iteration=e)
        rel = _relative_change(u_new, u)
        u = u_new
        steps = e + 1
        if on_iteration is not None:
            on_iteration(e, u, rel)
        if rel < cfg.stop_tol:
            converged = True
            break

    log_event("info", "ctr_done", iterations=steps, converged=converged, learning_rate=eta)
    return ImageGrid(P.image_side, P.image_side, u)


# ---------------------------------------------------------------------------
# dADMM 更新規則
# ---------------------------------------------------------------------------


def local_u_update(node: NodeState, cfg: AdmmConfig) -> np.ndarray:
    """E₁ 步梯度下降求解 Tikhonov 形式的本地子問題，由上一輪的 u_m 暖啟動。"""

    rho = cfg.rho
    P = node.projector.matrix
    target = node.x_local - node.lam / rho
    u = node.u
    for _ in range(cfg.inner_iters_u):
        grad = P.T @ (P @ u - node.data) + rho * (u - target)
        u = u - node.eta1 * grad
    _check_norm(u, "u", node_id=node.node_id)
    node.u = u
    return u


def local_x_segment_update(node: NodeState, cfg: AdmmConfig) -> np.ndarray:
    """只在自己負責的區段上迭代 x[m] ← x[m] − η₂ρ(x[m] − u_m[seg] − λ_m[seg]/ρ)。"""

    seg = node.segment_slice
    rho = cfg.rho
    target = node.u[seg] + node.lam[seg] / rho
    x = node.x_local[seg].copy()
    for _ in range(cfg.inner_iters_x):
        x = x - cfg.eta2 * rho * (x - target)
    return x


def dual_update(node: NodeState, x_global: Union[ImageGrid, np.ndarray], rho: float) -> np.ndarray:
    x = x_global.pixels if isinstance(x_global, ImageGrid) else np.asarray(x_global, dtype=np.float64)
    if x.shape != node.u.shape:
        raise DimensionError(f"node {node.node_id}: x has {x.size} values, expected {node.n}")
    node.lam = node.lam + rho * (node.u - x)
    return node.lam


def build_nodes(
    P: SparseProjector,
    d: Sinogram,
    angles: AnglePartition,
    segments: SegmentPartition,
    cfg: AdmmConfig,
) -> List[NodeState]:
    """依角度與區段分配切出每個節點的 P_m、d_m，u、λ、x 皆由零開始。"""

    if P.n_rows != d.flat.size:
        raise DimensionError(f"projector has {P.n_rows} rows, sinogram has {d.flat.size} values")
    if angles.M != segments.M:
        raise DimensionError(f"angle partition has {angles.M} nodes, segment partition has {segments.M}")
    side = P.image_side
    n = P.n_cols
    if segments.ranges and segments.ranges[-1][1] != n:
        raise DimensionError(f"segment partition covers {segments.ranges[-1][1]} pixels, image has {n}")

    nodes: List[NodeState] = []
    for m in range(angles.M):
        idx = angles.assignment[m]
        Pm = P.select_angles(idx)
        dm = d.select_angles(idx).flat.copy()
        eta1 = cfg.eta1 if cfg.eta1 is not None else auto_step(Pm, shift=cfg.rho, seed=m)
        nodes.append(
            NodeState(
                node_id=m,
                projector=Pm,
                data=dm,
                u=np.zeros(n),
                lam=np.zeros(n),
                x_local=np.zeros(n),
                segment=segments.ranges[m],
                shape=(side, side),
                eta1=eta1,
            )
        )
    return nodes


def _check_segments(nodes: List[NodeState]) -> None:
    n = nodes[0].n
    expected = 0
    for m, node in enumerate(nodes):
        if node.node_id != m:
            raise DimensionError(f"nodes must be ordered by id; position {m} holds node {node.node_id}")
        if node.n != n:
            raise DimensionError(f"node {m} has image length {node.n}, node 0 has {n}")
        lo, hi = node.segment
        if lo != expected:
            raise DimensionError(f"node {m} segment starts at {lo}, expected {expected}")
        expected = hi
    if expected != n:
        raise DimensionError(f"segments cover [0, {expected}), image has {n} pixels")


@dataclass
class _NodeLog:
    objective: List[float] = field(default_factory=list)
    rel_change: List[float] = field(default_factory=list)
    rmse: List[Optional[float]] = field(default_factory=list)
    converged: bool = False


def dadmm_run(
    nodes: List[NodeState],
    cfg: AdmmConfig,
    transport: Transport,
    trace_sink: Optional[Callable[[TraceEntry], None]] = None,
    *,
    truth: Optional[ImageGrid] = None,
    roi: Optional[Roi] = None,
) -> Tuple[ImageGrid, ConvergenceTrace]:
    """執行 dADMM；回傳最後的共識影像與逐輪紀錄。

    ``truth`` 為未補零的參考影像時，需同時給 ``roi`` 以便只在原始範圍計算 RMSE。
    """

    if not nodes:
        raise DimensionError("dADMM needs at least one node")
    cfg.validate()
    M = len(nodes)
    _check_segments(nodes)
    if transport.n_nodes != M:
        raise DimensionError(f"transport has {transport.n_nodes} nodes, got {M} node states")

    height, width = nodes[0].shape
    q = cfg.quantizer
    logs = [_NodeLog() for _ in range(M)]
    failures: Dict[int, Tuple[int, BaseException]] = {}
    failures_lock = threading.Lock()
    final_x: List[Optional[np.ndarray]] = [None]

    def _truth_rmse(x: np.ndarray) -> Optional[float]:
        if truth is None:
            return None
        img = ImageGrid(width, height, x)
        if roi is not None:
            img = roi.crop(img)
        return rmse(img, truth)

    def _worker(node: NodeState) -> None:
        m = node.node_id
        log = logs[m]
        lo, hi = node.segment
        block = ((hi - lo) // width, width)
        k = 0
        try:
            for k in range(cfg.outer_iters):
                local_u_update(node, cfg)
                seg = local_x_segment_update(node, cfg)
                msg = encode_segment(
                    seg,
                    q,
                    segment_index=m,
                    block_shape=block,
                    seed=np.random.SeedSequence([q.seed, k, m]),
                )
                msgs = allgather_segments(transport, msg, M, node_id=m, iteration=k)
                x_new = np.concatenate([decode_message(mm) for mm in msgs])
                if x_new.size != node.n:
                    raise DimensionError(f"assembled x has {x_new.size} values, expected {node.n}")
                _check_norm(x_new, "x", node_id=m, iteration=k)
                rel = _relative_change(x_new, node.x_local)
                node.x_local = x_new
                dual_update(node, x_new, cfg.rho)

                log.objective.append(node.local_objective(x_new))
                log.rel_change.append(rel)
                if m == 0:
                    err = _truth_rmse(x_new)
                    log.rmse.append(err)
                    log_event("debug", "dadmm_iteration", iteration=k, rel_change=rel, rmse=err)
                if rel < cfg.stop_tol:
                    log.converged = True
                    break
            if m == 0:
                final_x[0] = node.x_local.copy()
        except BaseException as exc:  # noqa: BLE001
            if isinstance(exc, DivergenceError) and exc.iteration is None:
                exc = DivergenceError("node iterate diverged", node_id=m, iteration=k)
            with failures_lock:
                failures[m] = (k, exc)
            if not isinstance(exc, CollectiveAborted):
                log_event("error", "node_failed", node=m, iteration=k, error=f"{type(exc).__name__}: {exc}")
            transport.abort(m)

    threads = [
        threading.Thread(target=_worker, args=(node,), name=f"dadmm-node-{node.node_id}", daemon=True)
        for node in nodes
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if failures:
        primary = [m for m, (_, e) in sorted(failures.items()) if not isinstance(e, CollectiveAborted)]
        m = primary[0] if primary else min(failures)
        iteration, cause = failures[m]
        if isinstance(cause, CollectiveAborted) and cause.failing_node is not None:
            m = cause.failing_node
        if isinstance(cause, DivergenceError):
            raise DivergenceError("dADMM diverged", node_id=m, iteration=iteration) from cause
        raise NodeFailure(m, iteration, cause) from cause

    trace = ConvergenceTrace(converged=logs[0].converged)
    n_iters = len(logs[0].rel_change)
    for k in range(n_iters):
        snapshot = transport.stats.iteration_snapshot(k)
        entry = TraceEntry(
            iteration=k,
            rmse_vs_truth=logs[0].rmse[k],
            relative_x_change=logs[0].rel_change[k],
            objective=float(sum(log.objective[k] for log in logs)),
            bytes_sent=sum(r.bytes_sent for r in snapshot),
            bytes_received=sum(r.bytes_received for r in snapshot),
            header_bytes=sum(r.header_bytes for r in snapshot),
        )
        trace.append(entry)
        if trace_sink is not None:
            trace_sink(entry)

    log_event(
        "info",
        "dadmm_done",
        nodes=M,
        iterations=n_iters,
        converged=trace.converged,
        bytes_sent=transport.stats.total_sent,
        bytes_received=transport.stats.total_received,
    )
    assert final_x[0] is not None
    return ImageGrid(width, height, final_x[0]), trace
