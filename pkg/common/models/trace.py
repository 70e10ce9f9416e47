"""收斂紀錄與通訊位元組統計。"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple


@dataclass
class CommRecord:
    iteration: int
    node: int
    bytes_sent: int = 0
    bytes_received: int = 0
    header_bytes: int = 0


class CommStats:
    """以 (iteration, node) 為鍵累計的收送位元組，可被多個 worker 同時寫入。"""

    CSV_COLUMNS = ("iteration", "node", "bytes_sent", "bytes_received", "header_bytes")

    def __init__(self) -> None:
        self._records: Dict[Tuple[int, int], CommRecord] = {}
        self._lock = threading.Lock()

    def add(
        self,
        iteration: int,
        node: int,
        *,
        sent: int = 0,
        received: int = 0,
        header: int = 0,
    ) -> None:
        with self._lock:
            rec = self._records.get((iteration, node))
            if rec is None:
                rec = CommRecord(iteration, node)
                self._records[(iteration, node)] = rec
            rec.bytes_sent += sent
            rec.bytes_received += received
            rec.header_bytes += header

    def records(self) -> List[CommRecord]:
        with self._lock:
            return [
                CommRecord(r.iteration, r.node, r.bytes_sent, r.bytes_received, r.header_bytes)
                for _, r in sorted(self._records.items())
            ]

    def iteration_snapshot(self, iteration: int) -> List[CommRecord]:
        return [r for r in self.records() if r.iteration == iteration]

    def get(self, iteration: int, node: int) -> CommRecord:
        with self._lock:
            r = self._records.get((iteration, node))
            if r is None:
                return CommRecord(iteration, node)
            return CommRecord(r.iteration, r.node, r.bytes_sent, r.bytes_received, r.header_bytes)

    @property
    def total_sent(self) -> int:
        return sum(r.bytes_sent for r in self.records())

    @property
    def total_received(self) -> int:
        return sum(r.bytes_received for r in self.records())

    @property
    def total_header(self) -> int:
        return sum(r.header_bytes for r in self.records())

    def to_csv(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.CSV_COLUMNS)
            for r in self.records():
                writer.writerow([r.iteration, r.node, r.bytes_sent, r.bytes_received, r.header_bytes])


@dataclass
class TraceEntry:
    iteration: int
    rmse_vs_truth: Optional[float]
    relative_x_change: float
    objective: float
    bytes_sent: int = 0
    bytes_received: int = 0
    header_bytes: int = 0


@dataclass
class ConvergenceTrace:
    entries: List[TraceEntry] = field(default_factory=list)
    converged: bool = False

    CSV_COLUMNS = (
        "iteration",
        "rmse_vs_truth",
        "relative_x_change",
        "objective",
        "bytes_sent",
        "bytes_received",
        "header_bytes",
    )

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: TraceEntry) -> None:
        self.entries.append(entry)

    def rmse_series(self) -> List[float]:
        return [e.rmse_vs_truth for e in self.entries if e.rmse_vs_truth is not None]

    def best_iteration(self) -> Optional[int]:
        best = None
        for e in self.entries:
            if e.rmse_vs_truth is None:
                continue
            if best is None or e.rmse_vs_truth < best.rmse_vs_truth:
                best = e
        return None if best is None else best.iteration

    def final_rmse(self) -> Optional[float]:
        series = self.rmse_series()
        return series[-1] if series else None

    def to_csv(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.CSV_COLUMNS)
            for e in self.entries:
                writer.writerow(
                    [
                        e.iteration,
                        "" if e.rmse_vs_truth is None else repr(float(e.rmse_vs_truth)),
                        repr(float(e.relative_x_change)),
                        repr(float(e.objective)) if math.isfinite(e.objective) else "nan",
                        e.bytes_sent,
                        e.bytes_received,
                        e.header_bytes,
                    ]
                )
