"""影像區段傳輸前的有損編碼：identity、一維 K-means 純量量化與 JPEG。

所有 codec 都是純函式，可由多個節點 worker 同時呼叫。編碼結果一律包成
``QuantizedMessage``，``byte_size`` 即實際序列化的 metadata + payload 長度。
"""

from __future__ import annotations

import io
import math
import struct
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from scipy.cluster.vq import kmeans2

from common.errors import CodecError, ConfigError
from common.models.message import QuantizedMessage
from common.models.specs import QuantizerSpec


SeedLike = Union[int, np.random.SeedSequence, None]

KMEANS_ITERS = 50
# 不同值數量在此以下時，額外以最佳連續分割作為 kmeans2 的起點
EXACT_SEED_MAX_DISTINCT = 64

JPEG_META = struct.Struct("<IIBdd")  # rows, cols, quality, vmin, vmax
JPEG_BLOCK = 8

ELBOW_EPS = 1e-12
ELBOW_MIN_DROP = 0.05
ELBOW_MIN_RATIO = 1.5


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise CodecError("cannot encode an empty vector")
    if not np.all(np.isfinite(arr)):
        raise CodecError("codec input contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# identity
# ---------------------------------------------------------------------------


def identity_encode(v, segment_index: int = 0) -> QuantizedMessage:
    arr = _as_vector(v)
    return QuantizedMessage(
        codec="identity",
        segment_index=segment_index,
        decoded_length=arr.size,
        metadata=b"",
        # 以 float32 傳送：失真為單精度捨入，|v − decoded| ≤ 2⁻²⁴·|v|
        payload=arr.astype("<f4").tobytes(),
    )


def identity_decode(msg: QuantizedMessage) -> np.ndarray:
    if len(msg.payload) != 4 * msg.decoded_length:
        raise CodecError(
            f"identity payload has {len(msg.payload)} bytes, expected {4 * msg.decoded_length}"
        )
    return np.frombuffer(msg.payload, dtype="<f4").astype(np.float64)


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------


def _assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """centers 已排序；以相鄰中點切分，回傳最近中心的索引。"""

    if centers.size == 1:
        return np.zeros(x.size, dtype=np.int64)
    bounds = 0.5 * (centers[:-1] + centers[1:])
    return np.searchsorted(bounds, x, side="left").astype(np.int64)


def _run_kmeans2(x: np.ndarray, init, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, float]:
    """以 ``scipy.cluster.vq.kmeans2`` 做 Lloyd 迭代；回傳排序後的中心與平方誤差。"""

    if isinstance(init, np.ndarray):
        centers, labels = kmeans2(x, init, iter=KMEANS_ITERS, minit="matrix", check_finite=False)
    else:
        centers, labels = kmeans2(x, int(init), iter=KMEANS_ITERS, minit="++", seed=rng, check_finite=False)
    sse = float(np.sum((x - centers[labels]) ** 2))
    return np.sort(np.asarray(centers, dtype=np.float64)), sse


def optimal_partition_centers(values: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    """排序後不同值的最佳連續 k 分割（動態規劃），回傳各群加權平均。"""

    m = values.size
    w = np.concatenate([[0.0], np.cumsum(weights)])
    wx = np.concatenate([[0.0], np.cumsum(weights * values)])
    wxx = np.concatenate([[0.0], np.cumsum(weights * values * values)])

    def cost(i: int, j: int) -> float:
        # values[i:j]
        cw = w[j] - w[i]
        s = wx[j] - wx[i]
        return float(wxx[j] - wxx[i] - s * s / cw)

    inf = math.inf
    best = np.full((k + 1, m + 1), inf)
    split = np.zeros((k + 1, m + 1), dtype=np.int64)
    best[0, 0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, m + 1):
            for i in range(c - 1, j):
                if best[c - 1, i] == inf:
                    continue
                val = best[c - 1, i] + cost(i, j)
                if val < best[c, j]:
                    best[c, j] = val
                    split[c, j] = i
    centers = []
    j = m
    for c in range(k, 0, -1):
        i = split[c, j]
        centers.append((wx[j] - wx[i]) / (w[j] - w[i]))
        j = i
    return np.asarray(sorted(centers), dtype=np.float64)


def fit_codebook(x: np.ndarray, k: int, seed: SeedLike = 0, restarts: int = 3) -> np.ndarray:
    """回傳排序後的碼本；k 不小於不同值數量時就是那些不同值本身。"""

    distinct, counts = np.unique(x, return_counts=True)
    if distinct.size <= k:
        return distinct.astype(np.float64)

    rng = np.random.default_rng(seed)
    best_centers: Optional[np.ndarray] = None
    best_sse = math.inf
    for _ in range(max(1, restarts)):
        centers, sse = _run_kmeans2(x, k, rng)
        if sse < best_sse:
            best_centers, best_sse = centers, sse
    if distinct.size <= EXACT_SEED_MAX_DISTINCT:
        seeded = optimal_partition_centers(distinct, counts.astype(np.float64), k)
        centers, sse = _run_kmeans2(x, seeded)
        if sse < best_sse:
            best_centers, best_sse = centers, sse
    assert best_centers is not None
    return best_centers


def code_bits(k: int) -> int:
    return int(math.ceil(math.log2(k))) if k > 1 else 0


def _pack_codes(codes: np.ndarray, bits: int) -> bytes:
    if bits == 0:
        return b""
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
    bitmat = ((codes.astype(np.uint64)[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return np.packbits(bitmat.reshape(-1)).tobytes()


def _unpack_codes(payload: bytes, n: int, bits: int) -> np.ndarray:
    if bits == 0:
        if payload:
            raise CodecError("kmeans payload must be empty for a single-center codebook")
        return np.zeros(n, dtype=np.int64)
    expected = (n * bits + 7) // 8
    if len(payload) != expected:
        raise CodecError(f"kmeans payload has {len(payload)} bytes, expected {expected}")
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[: n * bits]
    weights = (1 << np.arange(bits - 1, -1, -1)).astype(np.int64)
    return flat.reshape(n, bits).astype(np.int64) @ weights


def kmeans_quantize(
    v,
    k: int,
    seed: SeedLike = 0,
    *,
    restarts: int = 3,
    segment_index: int = 0,
) -> QuantizedMessage:
    """一維 K-means（scipy kmeans2）；每個元素以 ceil(log2 k) 位元的碼字傳送，碼本為 32-bit 浮點。"""

    if k < 1:
        raise ConfigError("quantizer.k", "must be >= 1")
    x = _as_vector(v)
    centers = fit_codebook(x, k, seed=seed, restarts=restarts).astype("<f4")
    # 以實際傳送的 float32 中心重新指派
    codes = _assign(x, centers.astype(np.float64))
    return QuantizedMessage(
        codec="kmeans",
        segment_index=segment_index,
        decoded_length=x.size,
        metadata=centers.tobytes(),
        payload=_pack_codes(codes, code_bits(centers.size)),
    )


def kmeans_dequantize(msg: QuantizedMessage) -> np.ndarray:
    if msg.codec != "kmeans":
        raise CodecError(f"expected a kmeans message, got {msg.codec}")
    if not msg.metadata or len(msg.metadata) % 4:
        raise CodecError(f"kmeans codebook has invalid size {len(msg.metadata)}")
    centers = np.frombuffer(msg.metadata, dtype="<f4").astype(np.float64)
    codes = _unpack_codes(msg.payload, msg.decoded_length, code_bits(centers.size))
    if codes.size and int(codes.max()) >= centers.size:
        raise CodecError(f"kmeans code {int(codes.max())} >= codebook size {centers.size}")
    return centers[codes]


# ---------------------------------------------------------------------------
# JPEG
# ---------------------------------------------------------------------------


def jpeg_encode(
    v,
    block_shape: Tuple[int, int],
    quality: int,
    *,
    segment_index: int = 0,
) -> QuantizedMessage:
    """把區段線性映射到 8-bit 後以 baseline JPEG（IJG 標準亮度表）壓縮。"""

    x = _as_vector(v)
    rows, cols = int(block_shape[0]), int(block_shape[1])
    if rows * cols != x.size:
        raise CodecError(f"block shape {rows}x{cols} does not match {x.size} values")
    if not 1 <= int(quality) <= 100:
        raise ConfigError("quantizer.quality", "must be an integer in [1, 100]")
    vmin, vmax = float(x.min()), float(x.max())
    meta = JPEG_META.pack(rows, cols, int(quality), vmin, vmax)
    if vmin == vmax:
        return QuantizedMessage("jpeg", segment_index, x.size, meta, b"")

    scaled = np.rint((x - vmin) / (vmax - vmin) * 255.0).clip(0, 255).astype(np.uint8)
    block = scaled.reshape(rows, cols)
    pad_r = (-rows) % JPEG_BLOCK
    pad_c = (-cols) % JPEG_BLOCK
    if pad_r or pad_c:
        block = np.pad(block, ((0, pad_r), (0, pad_c)), mode="edge")

    buf = io.BytesIO()
    Image.fromarray(block).convert("L").save(buf, format="JPEG", quality=int(quality))
    return QuantizedMessage("jpeg", segment_index, x.size, meta, buf.getvalue())


def jpeg_decode(msg: QuantizedMessage) -> np.ndarray:
    if msg.codec != "jpeg":
        raise CodecError(f"expected a jpeg message, got {msg.codec}")
    if len(msg.metadata) != JPEG_META.size:
        raise CodecError(f"jpeg metadata has {len(msg.metadata)} bytes, expected {JPEG_META.size}")
    rows, cols, _quality, vmin, vmax = JPEG_META.unpack(msg.metadata)
    if rows * cols != msg.decoded_length:
        raise CodecError(f"jpeg block {rows}x{cols} does not match length {msg.decoded_length}")
    if not msg.payload:
        if vmin != vmax:
            raise CodecError("jpeg payload missing for a non-constant block")
        return np.full(msg.decoded_length, vmin, dtype=np.float64)

    try:
        with Image.open(io.BytesIO(msg.payload)) as img:
            img.load()
            arr = np.asarray(img.convert("L"), dtype=np.float64)
    except (OSError, SyntaxError, ValueError) as exc:
        raise CodecError(f"malformed jpeg stream: {exc}") from exc
    if arr.shape[0] < rows or arr.shape[1] < cols:
        raise CodecError(f"jpeg image {arr.shape} smaller than block {rows}x{cols}")
    arr = arr[:rows, :cols]
    return (arr / 255.0 * (vmax - vmin) + vmin).reshape(-1)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def encode_segment(
    v,
    spec: QuantizerSpec,
    segment_index: int = 0,
    block_shape: Optional[Tuple[int, int]] = None,
    seed: SeedLike = None,
) -> QuantizedMessage:
    if spec.kind == "identity":
        return identity_encode(v, segment_index)
    if spec.kind == "kmeans":
        return kmeans_quantize(
            v,
            spec.k,
            spec.seed if seed is None else seed,
            restarts=spec.restarts,
            segment_index=segment_index,
        )
    if spec.kind == "jpeg":
        arr = np.asarray(v).reshape(-1)
        shape = block_shape if block_shape is not None else (1, arr.size)
        return jpeg_encode(arr, shape, spec.quality, segment_index=segment_index)
    raise ConfigError("quantizer.kind", f"unknown codec {spec.kind!r}")


def decode_message(msg: QuantizedMessage) -> np.ndarray:
    if msg.codec == "identity":
        out = identity_decode(msg)
    elif msg.codec == "kmeans":
        out = kmeans_dequantize(msg)
    elif msg.codec == "jpeg":
        out = jpeg_decode(msg)
    else:
        raise CodecError(f"unknown codec {msg.codec!r}")
    if out.size != msg.decoded_length:
        raise CodecError(f"decoded {out.size} values, header says {msg.decoded_length}")
    return out


# ---------------------------------------------------------------------------
# elbow / reporting
# ---------------------------------------------------------------------------


def elbow_select(rmse_by_k: Sequence[Tuple[int, float]]) -> Optional[int]:
    """回傳下降比最大的 k；曲線平坦或近似線性時回傳 ``None``（沒有 elbow）。"""

    points = list(rmse_by_k)
    if len(points) < 3:
        raise ConfigError("sweep.k_values", "elbow selection needs at least 3 points")
    ks = [int(k) for k, _ in points]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError("sweep.k_values", "k values must be strictly increasing")
    r = np.asarray([float(e) for _, e in points], dtype=np.float64)

    span = float(r.max() - r.min())
    if span <= ELBOW_EPS:
        return None
    drops = r[:-1] - r[1:]
    if float(drops.max()) <= ELBOW_MIN_DROP * span:
        return None

    best_i, best_ratio = None, -math.inf
    for i in range(1, r.size - 1):
        # 只有本身下降夠明顯的點才算候選，避免平坦尾端的微小差值放大比值
        if drops[i - 1] <= ELBOW_MIN_DROP * span:
            continue
        ratio = (r[i - 1] - r[i]) / (max(r[i] - r[i + 1], 0.0) + ELBOW_EPS)
        if ratio > best_ratio:
            best_i, best_ratio = i, ratio
    if best_i is None or best_ratio < ELBOW_MIN_RATIO:
        return None
    return ks[best_i]


def compression_report(msgs: Iterable[QuantizedMessage]) -> dict:
    """實測大小相對於 32-bit 原始像素的比例。"""

    items: List[QuantizedMessage] = list(msgs)
    n = sum(m.decoded_length for m in items)
    raw = 4 * n
    encoded = sum(m.byte_size for m in items)
    wire = sum(m.wire_size for m in items)
    ratio = encoded / raw if raw else 0.0
    return {
        "messages": len(items),
        "pixels": n,
        "raw_bytes": raw,
        "encoded_bytes": encoded,
        "wire_bytes": wire,
        "size_ratio": ratio,
        "compression": 1.0 - ratio if raw else 0.0,
        "bits_per_pixel": 8.0 * encoded / n if n else 0.0,
    }
