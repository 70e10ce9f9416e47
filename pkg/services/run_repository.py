"""重建結果的輸出儲存庫：影像、收斂紀錄、通訊統計、摘要與 manifest。"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from common.config import VERSION
from common.models.geometry import ImageGrid, Sinogram
from common.models.trace import CommStats, ConvergenceTrace
from common.services.logging import log_event
from services.phantom_service import save_pgm, save_raw_image, save_sinogram


@dataclass
class RunManifest:
    """一次執行的來源資訊；``created_at`` 以外的欄位在重跑時完全相同。"""

    command: str
    study_kind: str
    config_hash: str
    seeds: Dict[str, int]
    version: str
    created_at: str
    files: List[str] = field(default_factory=list)
    python: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _jsonable(value: Any) -> Any:
    """inf / nan 無法以標準 JSON 表示，改寫成字串。"""

    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class RunRepository:
    """管理單次執行的輸出目錄。"""

    def __init__(self, run_dir: Path, *, save_pgm: bool = True) -> None:
        self._run_dir = Path(run_dir)
        self._save_pgm = save_pgm
        self._files: List[str] = []
        self._ensure_dir_exists()

    @property
    def run_dir(self) -> Path:
        return self._run_dir

    @property
    def files(self) -> List[str]:
        return list(self._files)

    def _ensure_dir_exists(self) -> None:
        self._run_dir.mkdir(parents=True, exist_ok=True)

    def _track(self, path: Path) -> Path:
        rel = path.relative_to(self._run_dir).as_posix()
        if rel not in self._files:
            self._files.append(rel)
        return path

    def save_image(self, label: str, img: ImageGrid, *, vmin: Optional[float] = None, vmax: Optional[float] = None) -> Path:
        """寫入 ``<label>.raw``（附 ``.txt``），並視設定附上 ``.pgm``。"""

        raw = save_raw_image(img, self._run_dir / f"{label}.raw")
        self._track(raw)
        self._track(raw.with_suffix(".txt"))
        if self._save_pgm:
            self._track(save_pgm(img, self._run_dir / f"{label}.pgm", vmin, vmax))
        return raw

    def save_sinogram(self, label: str, d: Sinogram) -> Path:
        raw = save_sinogram(d, self._run_dir / f"{label}.raw")
        self._track(raw)
        self._track(raw.with_suffix(".txt"))
        if self._save_pgm:
            self._track(save_pgm(d.values, self._run_dir / f"{label}.pgm"))
        return raw

    def save_trace(self, label: str, trace: ConvergenceTrace) -> Path:
        path = self._run_dir / f"{label}_trace.csv"
        trace.to_csv(path)
        return self._track(path)

    def save_comm(self, label: str, stats: CommStats) -> Path:
        path = self._run_dir / f"{label}_comm.csv"
        stats.to_csv(path)
        return self._track(path)

    def save_table(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """寫入比較用的 CSV；浮點數以 repr 保留全部精度，None 寫成空欄。"""

        path = self._run_dir / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(columns))
            for row in rows:
                writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
        return self._track(path)

    def save_json(self, name: str, payload: dict) -> Path:
        path = self._run_dir / name
        path.write_text(
            json.dumps(_jsonable(payload), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return self._track(path)

    def save_summary(self, summary: dict) -> Path:
        return self.save_json("summary.json", summary)

    def write_manifest(self, command: str, study_kind: str, config_hash: str, seeds: Dict[str, int]) -> Path:
        manifest = RunManifest(
            command=command,
            study_kind=study_kind,
            config_hash=config_hash,
            seeds=dict(seeds),
            version=VERSION,
            created_at=datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            files=sorted(self._files),
            python=sys.version.split()[0],
        )
        path = self._run_dir / "manifest.json"
        path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        log_event("info", "run_written", path=str(self._run_dir), files=len(manifest.files))
        return path

    @staticmethod
    def load_manifest(run_dir: Path) -> Optional[RunManifest]:
        path = Path(run_dir) / "manifest.json"
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            log_event("warning", "manifest_unreadable", path=str(path), error=str(e))
            return None
        return RunManifest(**data)
