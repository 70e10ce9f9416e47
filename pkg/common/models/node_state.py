"""單一 dADMM 節點的本地狀態。"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from common.errors import DimensionError
from common.models.projector import SparseProjector


@dataclass
class NodeState:
    """節點 m 的 (d_m, P_m, u_m, λ_m, x 副本, 負責區段)。

    各向量長度皆為 n；``segment`` 為此節點負責更新的 x 區段 ``[lo, hi)``。
    ``eta1`` 為已決定好的本地步長。狀態只由該節點的 worker 修改。
    """

    node_id: int
    projector: SparseProjector
    data: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    x_local: np.ndarray
    segment: Tuple[int, int]
    shape: Tuple[int, int]
    eta1: float

    def __post_init__(self) -> None:
        n = self.shape[0] * self.shape[1]
        for name in ("u", "lam", "x_local"):
            vec = getattr(self, name)
            if vec.shape != (n,):
                raise DimensionError(f"node {self.node_id}: {name} has shape {vec.shape}, expected ({n},)")
        if self.projector.n_cols != n:
            raise DimensionError(f"node {self.node_id}: projector has {self.projector.n_cols} columns, expected {n}")
        if self.data.shape != (self.projector.n_rows,):
            raise DimensionError(
                f"node {self.node_id}: data has {self.data.size} values, projector has {self.projector.n_rows} rows"
            )
        lo, hi = self.segment
        if not 0 <= lo <= hi <= n:
            raise DimensionError(f"node {self.node_id}: segment {self.segment} outside [0, {n})")

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def segment_slice(self) -> slice:
        return slice(self.segment[0], self.segment[1])

    def local_objective(self, x: np.ndarray) -> float:
        """½‖P_m x − d_m‖²"""

        r = self.projector.matrix @ x - self.data
        return 0.5 * float(r @ r)
