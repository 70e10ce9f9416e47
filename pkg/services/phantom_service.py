"""測試影像（phantom）的產生與影像、sinogram 檔案讀寫。"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

from common.errors import ConfigError
from common.models.geometry import ImageGrid, Sinogram


PHANTOM_KINDS = ("three-level", "shepp-logan", "file")
MIN_PHANTOM_SIDE = 16
RAW_SUFFIX = ".raw"

# 修改版 Shepp-Logan：(強度, 半長軸 a, 半短軸 b, 中心 x0, 中心 y0, 旋轉角度)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def _unit_coords(side: int) -> Tuple[np.ndarray, np.ndarray]:
    """像素中心在 [-1, 1]² 的座標；第 0 列為 y 最大。"""

    c = (np.arange(side, dtype=np.float64) + 0.5) / side * 2.0 - 1.0
    X, Y = np.meshgrid(c, -c)
    return X, Y


def three_level(side: int, intensity: float = 1.0) -> ImageGrid:
    """背景 0、外圓 0.5、內圓 1（乘上 intensity）的同心圓盤。"""

    X, Y = _unit_coords(side)
    r2 = X * X + Y * Y
    img = np.zeros((side, side), dtype=np.float64)
    img[r2 <= 0.75**2] = 0.5 * intensity
    img[(X + 0.1) ** 2 + (Y - 0.1) ** 2 <= 0.35**2] = 1.0 * intensity
    return ImageGrid.from_array(img)


def shepp_logan(side: int) -> ImageGrid:
    X, Y = _unit_coords(side)
    img = np.zeros((side, side), dtype=np.float64)
    for value, a, b, x0, y0, phi in _SHEPP_LOGAN:
        t = np.radians(phi)
        xr = (X - x0) * np.cos(t) + (Y - y0) * np.sin(t)
        yr = -(X - x0) * np.sin(t) + (Y - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return ImageGrid.from_array(np.clip(img, 0.0, 1.0))


def make_phantom(
    kind: str,
    side: int,
    *,
    intensity: float = 1.0,
    path: Optional[Union[str, Path]] = None,
) -> ImageGrid:
    if kind not in PHANTOM_KINDS:
        raise ConfigError("phantom.kind", f"must be one of {', '.join(PHANTOM_KINDS)} (got {kind!r})")
    if int(side) < MIN_PHANTOM_SIDE:
        raise ConfigError("phantom.side", f"must be >= {MIN_PHANTOM_SIDE} (got {side})")
    if kind == "three-level":
        return three_level(side, intensity)
    if kind == "shepp-logan":
        img = shepp_logan(side)
        return ImageGrid(side, side, img.pixels * intensity)
    if path is None:
        raise ConfigError("phantom.path", "required when phantom.kind is 'file'")
    img = load_image_file(Path(path))
    if (img.width, img.height) != (side, side):
        # 與設定邊長不同時以 Pillow 重新取樣
        resized = Image.fromarray(img.as_array().astype(np.float32)).resize(
            (side, side), Image.BILINEAR
        )
        img = ImageGrid.from_array(np.asarray(resized, dtype=np.float64))
    return ImageGrid(side, side, img.pixels * intensity)


# ---------------------------------------------------------------------------
# 檔案讀寫
# ---------------------------------------------------------------------------


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".txt")


def save_raw_image(img: ImageGrid, path: Path) -> Path:
    """little-endian float32 原始檔，旁邊附一個寫著 ``width height`` 的文字檔。"""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(img.pixels.astype("<f4").tobytes())
    sidecar_path(path).write_text(f"{img.width} {img.height}\n", encoding="utf-8")
    return path


def load_raw_image(path: Path) -> ImageGrid:
    path = Path(path)
    side = sidecar_path(path)
    try:
        width, height = (int(tok) for tok in side.read_text(encoding="utf-8").split()[:2])
    except ValueError as exc:
        raise OSError(f"{side}: expected 'width height'") from exc
    raw = path.read_bytes()
    if len(raw) != 4 * width * height:
        raise OSError(f"{path}: {len(raw)} bytes, expected {4 * width * height} for {width}x{height}")
    pixels = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return ImageGrid(width, height, pixels)


def load_image_file(path: Path) -> ImageGrid:
    """讀取任一 Pillow 支援的灰階影像（值縮放到 [0, 1]），或 ``.raw`` 浮點檔。"""

    path = Path(path)
    if path.suffix.lower() == RAW_SUFFIX:
        return load_raw_image(path)
    with Image.open(path) as im:
        if im.mode in ("F", "I", "I;16"):
            arr = np.asarray(im, dtype=np.float64)
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return ImageGrid.from_array(arr)


def to_uint8(values: np.ndarray, vmin: Optional[float] = None, vmax: Optional[float] = None) -> np.ndarray:
    lo = float(values.min()) if vmin is None else vmin
    hi = float(values.max()) if vmax is None else vmax
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint((np.clip(values, lo, hi) - lo) / (hi - lo) * 255.0).astype(np.uint8)


def save_pgm(
    array: Union[ImageGrid, np.ndarray],
    path: Path,
    vmin: Optional[float] = None,
    vmax: Optional[float] = None,
) -> Path:
    """8-bit portable graymap，供肉眼檢查用。"""

    arr = array.as_array() if isinstance(array, ImageGrid) else np.asarray(array, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(arr, vmin, vmax)).convert("L").save(path, format="PPM")
    return path


def save_sinogram(d: Sinogram, path: Path) -> Path:
    """每列一個角度；sidecar 寫 ``n_detectors n_angles``。"""

    return save_raw_image(ImageGrid.from_array(d.values), path)


def load_sinogram(path: Path) -> Sinogram:
    img = load_raw_image(path)
    return Sinogram(img.height, img.width, img.pixels)
