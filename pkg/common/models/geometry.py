"""掃描幾何、影像與 sinogram 的資料結構。"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from common.errors import DimensionError, GeometryError


@dataclass(frozen=True)
class ScanGeometry:
    """平行束掃描幾何；影像格為 ``image_side × image_side`` 的單位像素。"""

    angles: Tuple[float, ...]
    n_detectors: int
    image_side: int
    detector_spacing: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if not self.angles:
            raise GeometryError("geometry.angles: at least one angle is required")
        prev = None
        for a in self.angles:
            if not (0.0 <= a < 180.0) or not math.isfinite(a):
                raise GeometryError(f"geometry.angles: {a} outside [0, 180)")
            if prev is not None and a <= prev:
                raise GeometryError("geometry.angles: must be strictly increasing")
            prev = a
        if self.n_detectors < 1:
            raise GeometryError("geometry.n_detectors: must be >= 1")
        if self.image_side < 1:
            raise GeometryError("geometry.image_side: must be >= 1")
        if not (self.detector_spacing > 0 and math.isfinite(self.detector_spacing)):
            raise GeometryError("geometry.detector_spacing: must be > 0")

    @classmethod
    def uniform(
        cls,
        n_angles: int,
        image_side: int,
        n_detectors: Optional[int] = None,
        detector_spacing: float = 1.0,
    ) -> "ScanGeometry":
        """``n_angles`` 個等間距角度，涵蓋 [0, 180)。"""

        if n_angles < 1:
            raise GeometryError("geometry.n_angles: must be >= 1")
        angles = tuple(180.0 * i / n_angles for i in range(n_angles))
        return cls(
            angles=angles,
            n_detectors=n_detectors if n_detectors is not None else image_side,
            image_side=image_side,
            detector_spacing=detector_spacing,
        )

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def n_rays(self) -> int:
        return self.n_angles * self.n_detectors

    @property
    def n_pixels(self) -> int:
        return self.image_side * self.image_side

    def detector_positions(self) -> np.ndarray:
        k = np.arange(self.n_detectors, dtype=np.float64)
        return (k - (self.n_detectors - 1) / 2.0) * self.detector_spacing


@dataclass
class ImageGrid:
    """row-major 的影像向量，附帶寬高。"""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1)
        if self.pixels.size != self.width * self.height:
            raise DimensionError(
                f"image has {self.pixels.size} pixels, expected {self.width}x{self.height}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise DimensionError("image contains non-finite values")

    @classmethod
    def zeros(cls, width: int, height: int) -> "ImageGrid":
        return cls(width, height, np.zeros(width * height))

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ImageGrid":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], arr.reshape(-1).copy())

    @property
    def n(self) -> int:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width)


@dataclass
class Sinogram:
    """每個角度一列的投影資料。"""

    n_angles: int
    n_detectors: int
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.size != self.n_angles * self.n_detectors:
            raise DimensionError(
                f"sinogram has {arr.size} values, expected {self.n_angles}x{self.n_detectors}"
            )
        self.values = arr.reshape(self.n_angles, self.n_detectors)
        if not np.all(np.isfinite(self.values)):
            raise DimensionError("sinogram contains non-finite values")

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def select_angles(self, indices: Sequence[int]) -> "Sinogram":
        idx = np.asarray(list(indices), dtype=np.int64)
        return Sinogram(len(idx), self.n_detectors, self.values[idx].copy())


@dataclass(frozen=True)
class Roi:
    """補零前影像在補零後格子中的位置。"""

    row0: int
    col0: int
    height: int
    width: int

    def crop(self, image: ImageGrid) -> ImageGrid:
        arr = image.as_array()[self.row0 : self.row0 + self.height, self.col0 : self.col0 + self.width]
        return ImageGrid.from_array(arr)

