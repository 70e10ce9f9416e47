"""共用的小型幾何、系統矩陣與執行多節點集體通訊的工具。"""

from __future__ import annotations

import threading
from typing import Callable, Dict, List

import numpy as np
import pytest

from common.models.geometry import ImageGrid, ScanGeometry
from services.projector import build_projector


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    monkeypatch.setenv("DTOMO_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("DTOMO_LOG_LEVEL", "ERROR")
    monkeypatch.setenv("DTOMO_WORKER_TIMEOUT", "120")
    from common.services.logging import set_level

    set_level("error")


@pytest.fixture
def small_geometry() -> ScanGeometry:
    # 8×8 格、36 個角度、12 個偵測器（涵蓋對角線）
    return ScanGeometry.uniform(36, 8, n_detectors=12)


@pytest.fixture
def small_projector(small_geometry):
    return build_projector(small_geometry)


@pytest.fixture
def random_image() -> ImageGrid:
    rng = np.random.default_rng(7)
    return ImageGrid(8, 8, rng.uniform(0.0, 1.0, 64))


def run_collective(M: int, fn: Callable[[int], object], timeout: float = 30.0) -> Dict[int, object]:
    """每個節點一個 thread 執行 ``fn(node_id)``；回傳值或例外依節點收集。"""

    results: Dict[int, object] = {}
    lock = threading.Lock()

    def _target(m: int) -> None:
        try:
            out = fn(m)
        except BaseException as exc:  # noqa: BLE001
            out = exc
        with lock:
            results[m] = out

    threads: List[threading.Thread] = [threading.Thread(target=_target, args=(m,), daemon=True) for m in range(M)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
    return results
