"""重建品質指標與 sinogram 雜訊注入。"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from common.errors import ConfigError, DimensionError
from common.models.geometry import ImageGrid, Sinogram
from common.models.specs import NoiseSpec


def _check_same_shape(x: ImageGrid, o: ImageGrid) -> None:
    if (x.width, x.height) != (o.width, o.height):
        raise DimensionError(f"image shapes differ: {x.width}x{x.height} vs {o.width}x{o.height}")


def rmse(x: ImageGrid, o: ImageGrid) -> float:
    _check_same_shape(x, o)
    diff = x.pixels - o.pixels
    return float(np.sqrt(np.mean(diff * diff)))


def psnr(x: ImageGrid, o: ImageGrid, i_max: Optional[float] = None) -> float:
    """20·log10(i_max / rmse)；rmse 為 0 時回傳 ``math.inf``。

    ``i_max`` 預設為參考影像 ``o`` 的最大值。
    """

    peak = float(o.pixels.max()) if i_max is None else float(i_max)
    if not peak > 0:
        raise ConfigError("metrics.i_max", f"must be > 0 (got {peak:g})")
    err = rmse(x, o)
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / err)


def add_noise(d: Sinogram, spec: NoiseSpec, x_peak: Optional[float] = None) -> Sinogram:
    """加上 σ = nsd/100 · x_peak 的零均值高斯雜訊；x_peak 預設為 sinogram 最大值。"""

    spec.validate()
    if spec.nsd == 0:
        return Sinogram(d.n_angles, d.n_detectors, d.values.copy())
    peak = x_peak if x_peak is not None else spec.x_peak
    if peak is None:
        peak = float(d.values.max())
    if not peak > 0:
        raise ConfigError("noise.x_peak", f"must be > 0 when nsd > 0 (got {peak:g})")
    sigma = spec.nsd / 100.0 * float(peak)
    rng = np.random.default_rng(spec.seed)
    noisy = d.values + rng.normal(0.0, sigma, size=d.values.shape)
    return Sinogram(d.n_angles, d.n_detectors, noisy)


def noise_sigma(nsd: float, x_peak: float) -> float:
    return nsd / 100.0 * x_peak
