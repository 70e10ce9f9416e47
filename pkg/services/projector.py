"""平行束 x-ray 轉換的離散化：系統矩陣建構、正投影與反投影。

影像格以原點為中心、像素邊長 1，第 0 列在最上方（y 最大）。角度 θ、偵測器座標 t
的射線為 ``(t cosθ − s sinθ, t sinθ + s cosθ)``。每條射線以參數式逐格前進，
交點參數合併排序後取相鄰差值即為各像素的交會長度。
"""

from __future__ import annotations

import math
import time
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sps

from common.errors import DimensionError, GeometryError
from common.models.geometry import ImageGrid, Roi, ScanGeometry, Sinogram
from common.models.projector import SparseProjector
from common.services.logging import log_event


# 小於此值的三角函數視為 0，軸向射線的長度才會剛好是 1.0
_AXIS_SNAP = 1e-12
# 角落附近浮點誤差產生的零長度片段
_MIN_SEGMENT = 1e-10


def padded_side(side: int) -> int:
    return int(math.ceil(side * math.sqrt(2.0) - 1e-9))


def _trace_ray(
    t: float, cos_t: float, sin_t: float, side: int
) -> Tuple[np.ndarray, np.ndarray]:
    """回傳單一射線經過的 (像素索引, 交會長度)，像素索引遞增排序且不重複。"""

    half = side / 2.0
    px, py = t * cos_t, t * sin_t
    dx, dy = -sin_t, cos_t

    s_lo, s_hi = -math.inf, math.inf
    for p, d in ((px, dx), (py, dy)):
        if d == 0.0:
            # 與軸平行：落在邊界上時歸給正座標側的像素
            if not (-half <= p < half):
                return _EMPTY_IDX, _EMPTY_LEN
            continue
        a = (-half - p) / d
        b = (half - p) / d
        s_lo = max(s_lo, min(a, b))
        s_hi = min(s_hi, max(a, b))
    if not s_hi > s_lo:
        return _EMPTY_IDX, _EMPTY_LEN

    lines = np.arange(side + 1, dtype=np.float64) - half
    params = [np.array([s_lo, s_hi])]
    if dx != 0.0:
        params.append((lines - px) / dx)
    if dy != 0.0:
        params.append((lines - py) / dy)
    alphas = np.concatenate(params)
    alphas = np.unique(alphas[(alphas >= s_lo) & (alphas <= s_hi)])

    lengths = np.diff(alphas)
    mids = 0.5 * (alphas[:-1] + alphas[1:])
    mx = px + mids * dx
    my = py + mids * dy
    cols = np.floor(mx + half).astype(np.int64)
    rows = np.ceil(half - my).astype(np.int64) - 1

    keep = (
        (lengths > _MIN_SEGMENT)
        & (cols >= 0)
        & (cols < side)
        & (rows >= 0)
        & (rows < side)
    )
    if not np.any(keep):
        return _EMPTY_IDX, _EMPTY_LEN
    pix = rows[keep] * side + cols[keep]
    uniq, inverse = np.unique(pix, return_inverse=True)
    return uniq, np.bincount(inverse, weights=lengths[keep])


_EMPTY_IDX = np.zeros(0, dtype=np.int64)
_EMPTY_LEN = np.zeros(0, dtype=np.float64)


def build_projector(geom: ScanGeometry) -> SparseProjector:
    """依幾何建立系統矩陣；列依 (角度, 偵測器) 以角度為主序排列。"""

    span = geom.n_detectors * geom.detector_spacing
    if span + 1e-9 < geom.image_side:
        raise GeometryError(
            f"geometry.n_detectors: detector line spans {span:g} pixels, "
            f"grid side is {geom.image_side}"
        )

    started = time.perf_counter()
    side = geom.image_side
    positions = geom.detector_positions()
    indptr: List[int] = [0]
    indices: List[np.ndarray] = []
    data: List[np.ndarray] = []
    nnz = 0

    for theta in geom.angles:
        rad = math.radians(theta)
        cos_t, sin_t = math.cos(rad), math.sin(rad)
        if abs(cos_t) < _AXIS_SNAP:
            cos_t = 0.0
        if abs(sin_t) < _AXIS_SNAP:
            sin_t = 0.0
        for t in positions:
            idx, lens = _trace_ray(float(t), cos_t, sin_t, side)
            indices.append(idx)
            data.append(lens)
            nnz += idx.size
            indptr.append(nnz)

    matrix = sps.csr_matrix(
        (
            np.concatenate(data) if data else _EMPTY_LEN,
            np.concatenate(indices) if indices else _EMPTY_IDX,
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(geom.n_rays, geom.n_pixels),
    )
    projector = SparseProjector(
        matrix=matrix,
        n_detectors=geom.n_detectors,
        angle_indices=tuple(range(geom.n_angles)),
        image_side=side,
    )
    log_event(
        "info",
        "projector_built",
        rows=projector.n_rows,
        cols=projector.n_cols,
        nnz=projector.nnz,
        seconds=round(time.perf_counter() - started, 4),
    )
    return projector


def forward_project(P: SparseProjector, u: ImageGrid) -> Sinogram:
    """d = P u"""

    if P.n_cols != u.n:
        raise DimensionError(f"projector has {P.n_cols} columns, image has {u.n} pixels")
    values = P.matrix @ u.pixels
    return Sinogram(P.n_angles, P.n_detectors, values)


def back_project(P: SparseProjector, d: Sinogram) -> ImageGrid:
    """Pᵀ d"""

    flat = d.flat
    if P.n_rows != flat.size:
        raise DimensionError(f"projector has {P.n_rows} rows, sinogram has {flat.size} values")
    side = P.image_side
    return ImageGrid(side, side, P.matrix.T @ flat)


def pad_image(u: ImageGrid, side: Optional[int] = None) -> Tuple[ImageGrid, Roi]:
    """補零到 ``side``（預設 ceil(原邊長·√2)），原影像置中；回傳補零後影像與其 ROI。"""

    if u.width != u.height:
        raise DimensionError(f"padding expects a square image, got {u.width}x{u.height}")
    target = padded_side(u.width) if side is None else int(side)
    if target < u.width:
        raise DimensionError(f"padded side {target} smaller than image side {u.width}")
    off = (target - u.width) // 2
    out = np.zeros((target, target), dtype=np.float64)
    out[off : off + u.height, off : off + u.width] = u.as_array()
    return ImageGrid.from_array(out), Roi(off, off, u.height, u.width)


def crop_image(u: ImageGrid, roi: Roi) -> ImageGrid:
    if roi.row0 + roi.height > u.height or roi.col0 + roi.width > u.width:
        raise DimensionError(f"roi {roi} outside {u.width}x{u.height} image")
    return roi.crop(u)


def estimate_operator_norm(P: SparseProjector, iters: int = 50, seed: int = 0) -> float:
    """以 power iteration 估計 ‖P‖²，也就是 PᵀP 的最大特徵值。"""

    if P.n_rows == 0 or P.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(P.n_cols)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max(1, iters)):
        w = P.matrix.T @ (P.matrix @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam
