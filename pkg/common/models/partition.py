"""角度與影像分段的分配結果。"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple


@dataclass
class AnglePartition:
    """每個節點負責的角度索引（round-robin）。"""

    M: int
    assignment: List[List[int]] = field(default_factory=list)

    def counts(self) -> List[int]:
        return [len(a) for a in self.assignment]


@dataclass
class SegmentPartition:
    """每個節點負責的影像向量區段 ``[lo, hi)``，依列對齊。"""

    M: int
    width: int
    ranges: List[Tuple[int, int]] = field(default_factory=list)

    def sizes(self) -> List[int]:
        return [hi - lo for lo, hi in self.ranges]

    def rows(self, m: int) -> int:
        lo, hi = self.ranges[m]
        return (hi - lo) // self.width

    def block_shape(self, m: int) -> Tuple[int, int]:
        return self.rows(m), self.width
