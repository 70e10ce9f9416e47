"""資料與影像的分配、區段 allgather（含位元組統計）以及記憶體/通訊成本模型。"""

from __future__ import annotations

import math
import threading
from typing import Dict, List, Optional, Protocol, Tuple

from common.errors import CollectiveAborted, ConfigError, DimensionError, TransportError
from common.models.message import QuantizedMessage
from common.models.partition import AnglePartition, SegmentPartition
from common.models.trace import CommStats


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------


def partition_angles(n_angles: int, M: int) -> AnglePartition:
    """round-robin：節點 m 負責 m, m+M, m+2M, …"""

    if M < 1:
        raise ConfigError("partition.nodes", "must be >= 1")
    if M > n_angles:
        raise ConfigError("partition.nodes", f"{M} nodes exceed {n_angles} angles")
    return AnglePartition(M=M, assignment=[list(range(m, n_angles, M)) for m in range(M)])


def partition_image(n: int, width: int, M: int) -> SegmentPartition:
    """依列切成 M 個連續區塊，高度相差不超過一列；前 height % M 塊多一列。"""

    if width < 1 or n % width:
        raise DimensionError(f"{n} pixels are not a whole number of rows of width {width}")
    height = n // width
    if M < 1:
        raise ConfigError("partition.nodes", "must be >= 1")
    if M > height:
        raise ConfigError("partition.nodes", f"{M} nodes exceed image height {height}")
    base, extra = divmod(height, M)
    ranges: List[Tuple[int, int]] = []
    row = 0
    for m in range(M):
        h = base + (1 if m < extra else 0)
        ranges.append((row * width, (row + h) * width))
        row += h
    return SegmentPartition(M=M, width=width, ranges=ranges)


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


class Transport(Protocol):
    n_nodes: int
    stats: CommStats

    def allgather(self, node_id: int, iteration: int, message: QuantizedMessage) -> List[QuantizedMessage]:
        ...

    def barrier(self, node_id: int) -> None:
        ...

    def abort(self, node_id: int) -> None:
        ...


class InProcessTransport:
    """同一個 process 內的訊息匯流排，每個節點一個 worker thread。

    allgather 以 ``threading.Barrier`` 同步；訊息依迭代奇偶交替寫入兩組槽位，
    因此第 k+2 次寫入前所有節點都已讀完第 k 次的內容，只需一道 barrier。
    """

    def __init__(self, n_nodes: int, timeout: float = 600.0) -> None:
        if n_nodes < 1:
            raise ConfigError("partition.nodes", "must be >= 1")
        self.n_nodes = n_nodes
        self.timeout = timeout
        self.stats = CommStats()
        self._barrier = threading.Barrier(n_nodes, timeout=timeout)
        self._slots: List[List[Optional[Tuple[int, bytes]]]] = [
            [None] * n_nodes,
            [None] * n_nodes,
        ]
        self._lock = threading.Lock()
        self._failed: Optional[int] = None

    @property
    def failed_node(self) -> Optional[int]:
        with self._lock:
            return self._failed

    def abort(self, node_id: int) -> None:
        with self._lock:
            if self._failed is None:
                self._failed = node_id
        self._barrier.abort()

    def _raise_aborted(self, iteration: Optional[int]) -> None:
        failed = self.failed_node
        if failed is None and iteration is not None:
            # 逾時：找出這一輪還沒送出訊息的節點
            slots = self._slots[iteration % 2]
            for m, slot in enumerate(slots):
                if slot is None or slot[0] != iteration:
                    failed = m
                    break
            with self._lock:
                if self._failed is None:
                    self._failed = failed
        raise CollectiveAborted(
            f"collective aborted (failing node {failed})" if failed is not None else "collective aborted",
            failing_node=failed,
        )

    def _wait(self, iteration: Optional[int]) -> None:
        if self.failed_node is not None:
            self._raise_aborted(iteration)
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError:
            self._raise_aborted(iteration)

    def barrier(self, node_id: int) -> None:
        self._check_node(node_id)
        self._wait(None)

    def allgather(self, node_id: int, iteration: int, message: QuantizedMessage) -> List[QuantizedMessage]:
        self._check_node(node_id)
        wire = message.to_bytes()
        parity = iteration % 2
        self._slots[parity][node_id] = (iteration, wire)
        self._wait(iteration)

        out: List[QuantizedMessage] = []
        received = 0
        for m, slot in enumerate(self._slots[parity]):
            if slot is None or slot[0] != iteration:
                raise TransportError(f"node {m} has no message for iteration {iteration}", failing_node=m)
            if m == node_id:
                out.append(message)
                continue
            msg = QuantizedMessage.from_bytes(slot[1])
            received += msg.byte_size
            out.append(msg)

        peers = self.n_nodes - 1
        self.stats.add(
            iteration,
            node_id,
            sent=message.byte_size * peers,
            received=received,
            header=message.header_bytes * peers * 2,
        )
        return out

    def _check_node(self, node_id: int) -> None:
        if not 0 <= node_id < self.n_nodes:
            raise TransportError(f"node id {node_id} outside [0, {self.n_nodes})", failing_node=node_id)


def allgather_segments(
    transport: Transport,
    local: QuantizedMessage,
    M: int,
    *,
    node_id: int,
    iteration: int,
) -> List[QuantizedMessage]:
    """集體交換各節點的區段；回傳依區段索引排序的 M 則訊息。"""

    if transport.n_nodes != M:
        raise DimensionError(f"transport has {transport.n_nodes} nodes, expected {M}")
    msgs = transport.allgather(node_id, iteration, local)
    by_segment: Dict[int, QuantizedMessage] = {m.segment_index: m for m in msgs}
    if sorted(by_segment) != list(range(M)):
        raise TransportError(
            f"allgather returned segments {sorted(by_segment)}, expected 0..{M - 1}",
            failing_node=node_id,
        )
    return [by_segment[m] for m in range(M)]


# ---------------------------------------------------------------------------
# cost models
# ---------------------------------------------------------------------------


def _check_nodes(M: float) -> float:
    M = float(M)
    if math.isnan(M) or M < 1:
        raise ConfigError("nodes", "must be >= 1")
    return M


def memory_model(M: float, D: float, X: float) -> float:
    """每個節點的記憶體：D/M + 3X（M 可為 ``math.inf``）。"""

    M = _check_nodes(M)
    return (0.0 if math.isinf(M) else D / M) + 3.0 * X


def comm_model(M: float, X: float) -> float:
    """每個節點每輪的通訊量：2(M−1)X/M。"""

    M = _check_nodes(M)
    if math.isinf(M):
        return 2.0 * X
    return 2.0 * (M - 1.0) * X / M
