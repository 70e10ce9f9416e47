"""研究設定模組：JSON 設定檔、點號覆寫與設定雜湊。"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from common.errors import ConfigError
from common.models.geometry import ScanGeometry
from common.models.specs import AdmmConfig, CtrConfig, NoiseSpec, QuantizerSpec
from common.utils.validators import ensure_choice, ensure_nonnegative, ensure_positive, ensure_positive_int


STUDY_KINDS = (
    "ctr-baseline",
    "dadmm",
    "dadmm-k",
    "dadmm-j",
    "k-sweep",
    "quality-sweep",
    "noise-ladder",
    "scalability",
)
LADDER_METHODS = ("ctr", "dadmm", "dadmm-k", "dadmm-j")


@dataclass
class StudySpec:
    kind: str = "dadmm"
    name: str = "study"

    def validate(self, prefix: str = "study") -> "StudySpec":
        ensure_choice(self.kind, STUDY_KINDS, f"{prefix}.kind")
        if not self.name or "/" in self.name:
            raise ConfigError(f"{prefix}.name", "must be a non-empty name without '/'")
        return self


@dataclass
class PhantomSpec:
    kind: str = "three-level"
    side: int = 64
    intensity: float = 1.0
    path: Optional[str] = None

    def validate(self, prefix: str = "phantom") -> "PhantomSpec":
        ensure_choice(self.kind, ("three-level", "shepp-logan", "file"), f"{prefix}.kind")
        ensure_positive_int(self.side, f"{prefix}.side")
        if self.side < 16:
            raise ConfigError(f"{prefix}.side", f"must be >= 16 (got {self.side})")
        ensure_positive(self.intensity, f"{prefix}.intensity")
        if self.kind == "file" and not self.path:
            raise ConfigError(f"{prefix}.path", "required when phantom.kind is 'file'")
        return self


@dataclass
class GeometrySpec:
    """``n_detectors`` 為 null 時等於（補零後的）影像邊長。"""

    n_angles: int = 180
    n_detectors: Optional[int] = None
    detector_spacing: float = 1.0
    pad: bool = True

    def validate(self, prefix: str = "geometry") -> "GeometrySpec":
        ensure_positive_int(self.n_angles, f"{prefix}.n_angles")
        if self.n_detectors is not None:
            ensure_positive_int(self.n_detectors, f"{prefix}.n_detectors")
        ensure_positive(self.detector_spacing, f"{prefix}.detector_spacing")
        return self

    def build(self, image_side: int) -> ScanGeometry:
        return ScanGeometry.uniform(
            self.n_angles,
            image_side,
            n_detectors=self.n_detectors if self.n_detectors is not None else image_side,
            detector_spacing=self.detector_spacing,
        )


@dataclass
class PartitionSpec:
    """``node_counts`` 只用於 scalability 研究：同一份 sinogram 依序以各個 M 重建。"""

    nodes: int = 1
    node_counts: List[int] = field(default_factory=lambda: [2, 10])

    def validate(self, prefix: str = "partition") -> "PartitionSpec":
        ensure_positive_int(self.nodes, f"{prefix}.nodes")
        if not self.node_counts:
            raise ConfigError(f"{prefix}.node_counts", "must not be empty")
        for i, m in enumerate(self.node_counts):
            ensure_positive_int(m, f"{prefix}.node_counts[{i}]")
        return self


@dataclass
class SweepSpec:
    k_values: List[int] = field(default_factory=lambda: [2, 3, 4, 5, 6])
    qualities: List[int] = field(default_factory=lambda: [10, 20, 30, 50, 70, 90])

    def validate(self, prefix: str = "sweep") -> "SweepSpec":
        if len(self.k_values) < 3:
            raise ConfigError(f"{prefix}.k_values", "needs at least 3 values")
        for i, k in enumerate(self.k_values):
            ensure_positive_int(k, f"{prefix}.k_values[{i}]")
        if any(b <= a for a, b in zip(self.k_values, self.k_values[1:])):
            raise ConfigError(f"{prefix}.k_values", "must be strictly increasing")
        if len(self.qualities) < 2:
            raise ConfigError(f"{prefix}.qualities", "needs at least 2 values")
        for i, q in enumerate(self.qualities):
            if ensure_positive_int(q, f"{prefix}.qualities[{i}]") > 100:
                raise ConfigError(f"{prefix}.qualities[{i}]", "must be in 1..100")
        if any(b <= a for a, b in zip(self.qualities, self.qualities[1:])):
            raise ConfigError(f"{prefix}.qualities", "must be strictly increasing")
        return self


@dataclass
class NoiseLadderSpec:
    levels: List[float] = field(default_factory=lambda: [0.0, 0.24, 0.77, 2.43])
    methods: List[str] = field(default_factory=lambda: ["dadmm-k", "dadmm-j"])

    def validate(self, prefix: str = "noise_ladder") -> "NoiseLadderSpec":
        if not self.levels:
            raise ConfigError(f"{prefix}.levels", "must not be empty")
        for i, nsd in enumerate(self.levels):
            ensure_nonnegative(nsd, f"{prefix}.levels[{i}]")
        if not self.methods:
            raise ConfigError(f"{prefix}.methods", "must not be empty")
        for i, m in enumerate(self.methods):
            ensure_choice(m, LADDER_METHODS, f"{prefix}.methods[{i}]")
        return self


@dataclass
class OutputSpec:
    """``dir`` 為 null 時使用環境變數 ``DTOMO_OUTPUT_DIR``。"""

    dir: Optional[str] = None
    save_pgm: bool = True
    save_sinogram: bool = False

    def validate(self, prefix: str = "output") -> "OutputSpec":
        return self


# 設定檔區段 → dataclass
SECTIONS: Dict[str, type] = {
    "study": StudySpec,
    "phantom": PhantomSpec,
    "geometry": GeometrySpec,
    "partition": PartitionSpec,
    "ctr": CtrConfig,
    "admm": AdmmConfig,
    "quantizer": QuantizerSpec,
    "noise": NoiseSpec,
    "sweep": SweepSpec,
    "noise_ladder": NoiseLadderSpec,
    "output": OutputSpec,
}
# admm.quantizer 由獨立的 quantizer 區段提供
_NESTED = {"admm": ("quantizer",)}


def _is_optional(tp: Any) -> Tuple[bool, Any]:
    if typing.get_origin(tp) is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(typing.get_args(tp)) == 2:
            return True, args[0]
    return False, tp


def _coerce(value: Any, tp: Any, loc: str) -> Any:
    optional, inner = _is_optional(tp)
    if optional:
        # 步長等欄位以 "auto" 表示自動估計
        if value is None or value == "auto":
            return None
        return _coerce(value, inner, loc)
    if typing.get_origin(tp) in (list, List):
        (item_tp,) = typing.get_args(tp) or (Any,)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(loc, f"expected a list, got {type(value).__name__}")
        return [_coerce(v, item_tp, f"{loc}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(loc, f"expected true/false, got {value!r}")
    if tp is int:
        if isinstance(value, bool):
            raise ConfigError(loc, f"expected an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(loc, f"expected an integer, got {value!r}")
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(loc, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(loc, f"expected a string, got {value!r}")
        return value
    return value


def _build_section(name: str, raw: Any) -> Any:
    cls = SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError(name, f"expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)} - set(_NESTED.get(name, ()))
    kwargs: Dict[str, Any] = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown key")
        kwargs[key] = _coerce(value, hints[key], f"{name}.{key}")
    return cls(**kwargs)


def parse_override(text: str) -> Tuple[str, str, Any]:
    """``section.key=value``；value 先以 JSON 解析，失敗則視為字串。"""

    key, sep, raw_value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError("override", f"expected section.key=value, got {text!r}")
    section, dot, name = key.partition(".")
    if not dot or not section or not name or "." in name:
        raise ConfigError(key, "override keys must look like section.key")
    try:
        value = json.loads(raw_value)
    except ValueError:
        value = raw_value
    return section, name, value


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}
    for text in overrides:
        section, name, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        target = out.setdefault(section, {})
        if not isinstance(target, dict):
            raise ConfigError(section, f"expected an object, got {type(target).__name__}")
        target[name] = value
    return out


@dataclass
class StudyConfig:
    """一次研究的完整設定，由設定檔加上覆寫解析而來。"""

    study: StudySpec = field(default_factory=StudySpec)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    ctr: CtrConfig = field(default_factory=CtrConfig)
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    quantizer: QuantizerSpec = field(default_factory=QuantizerSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    noise_ladder: NoiseLadderSpec = field(default_factory=NoiseLadderSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    source: Optional[Path] = None

    def __post_init__(self) -> None:
        # admm.quantizer 與 quantizer 區段是同一個物件
        self.admm.quantizer = self.quantizer

    @classmethod
    def from_dict(cls, raw: Dict[str, Any], source: Optional[Path] = None) -> "StudyConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
        sections: Dict[str, Any] = {}
        for name, value in raw.items():
            if name not in SECTIONS:
                raise ConfigError(name, "unknown section")
            sections[name] = _build_section(name, value)
        cfg = cls(**sections, source=source)
        return cfg.validate()

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()) -> "StudyConfig":
        """讀取 JSON 設定檔（可省略）並套用覆寫，最後驗證所有欄位。"""

        raw: Dict[str, Any] = {}
        source = None
        if path is not None:
            source = Path(path)
            if not source.is_file():
                raise ConfigError("config", f"{source}: file not found")
            try:
                raw = json.loads(source.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError("config", f"{source}: invalid JSON at line {exc.lineno} column {exc.colno}") from exc
            except OSError as exc:
                raise ConfigError("config", f"{source}: {exc.strerror or exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("config", f"{source}: top level must be an object")
        return cls.from_dict(apply_overrides(raw, overrides), source=source)

    def validate(self) -> "StudyConfig":
        self.study.validate()
        self.phantom.validate()
        self.geometry.validate()
        self.partition.validate()
        self.ctr.validate()
        self.admm.validate()
        self.noise.validate()
        self.sweep.validate()
        self.noise_ladder.validate()
        self.output.validate()
        if self.partition.nodes > self.geometry.n_angles:
            raise ConfigError("partition.nodes", f"{self.partition.nodes} nodes exceed {self.geometry.n_angles} angles")
        if self.study.kind == "scalability":
            for i, m in enumerate(self.partition.node_counts):
                if m > self.geometry.n_angles:
                    raise ConfigError(f"partition.node_counts[{i}]", f"{m} nodes exceed {self.geometry.n_angles} angles")
        return self

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for name in SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            for nested in _NESTED.get(name, ()):
                section.pop(nested, None)
            out[name] = section
        return out

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def seeds(self) -> Dict[str, int]:
        return {"quantizer": self.quantizer.seed, "noise": self.noise.seed}

    def with_overrides(self, overrides: Iterable[str]) -> "StudyConfig":
        return StudyConfig.from_dict(apply_overrides(self.to_dict(), overrides), source=self.source)
