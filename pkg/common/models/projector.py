"""系統矩陣 P 的稀疏表示。"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sps


@dataclass(frozen=True)
class SparseProjector:
    """以 CSR 儲存的交會長度矩陣；列依 (角度, 偵測器) 以角度為主序排列。

    ``angle_indices`` 記錄這些列屬於整體幾何中的哪些角度，節點子集也沿用。
    建構後不可變，可同時被多個節點 worker 讀取。
    """

    matrix: sps.csr_matrix
    n_detectors: int
    angle_indices: Tuple[int, ...]
    image_side: int

    @property
    def n_rows(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def n_angles(self) -> int:
        return len(self.angle_indices)

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def row(self, j: int) -> List[Tuple[int, float]]:
        lo, hi = self.matrix.indptr[j], self.matrix.indptr[j + 1]
        return [
            (int(i), float(v))
            for i, v in zip(self.matrix.indices[lo:hi], self.matrix.data[lo:hi])
        ]

    @property
    def rows(self) -> List[List[Tuple[int, float]]]:
        return [self.row(j) for j in range(self.n_rows)]

    def select_angles(self, positions: Sequence[int]) -> "SparseProjector":
        """取出第 ``positions`` 個角度（本投影器內的位置）對應的列。"""

        pos = np.asarray(list(positions), dtype=np.int64)
        if pos.size == 0:
            empty = sps.csr_matrix((0, self.n_cols), dtype=np.float64)
            return SparseProjector(empty, self.n_detectors, (), self.image_side)
        rows = (pos[:, None] * self.n_detectors + np.arange(self.n_detectors)[None, :]).reshape(-1)
        sub = self.matrix[rows].tocsr()
        sub.sort_indices()
        return SparseProjector(
            sub,
            self.n_detectors,
            tuple(self.angle_indices[p] for p in pos.tolist()),
            self.image_side,
        )
