"""求解器、量化器與雜訊的參數設定。

每個 dataclass 對應設定檔中的一個區段；``validate()`` 以點號路徑回報錯誤。
步長欄位為 ``None`` 時代表由 power iteration 估計的算子範數自動決定。
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from common.errors import ConfigError
from common.utils.validators import (
    ensure_choice,
    ensure_nonnegative,
    ensure_nonnegative_int,
    ensure_positive,
    ensure_positive_int,
)


QUANTIZER_KINDS = ("identity", "kmeans", "jpeg")


@dataclass
class QuantizerSpec:
    kind: str = "identity"
    k: int = 3
    quality: int = 30
    seed: int = 0
    restarts: int = 3

    def validate(self, prefix: str = "quantizer") -> "QuantizerSpec":
        ensure_choice(self.kind, QUANTIZER_KINDS, f"{prefix}.kind")
        ensure_positive_int(self.k, f"{prefix}.k")
        ensure_positive_int(self.restarts, f"{prefix}.restarts")
        ensure_nonnegative_int(self.seed, f"{prefix}.seed")
        if isinstance(self.quality, bool) or int(self.quality) != self.quality or not 1 <= self.quality <= 100:
            raise ConfigError(f"{prefix}.quality", "must be an integer in [1, 100]")
        return self


@dataclass
class CtrConfig:
    learning_rate: Optional[float] = None
    iterations: int = 1000
    stop_tol: float = 1e-6

    def validate(self, prefix: str = "ctr") -> "CtrConfig":
        if self.learning_rate is not None:
            ensure_positive(self.learning_rate, f"{prefix}.learning_rate")
        ensure_positive_int(self.iterations, f"{prefix}.iterations")
        ensure_nonnegative(self.stop_tol, f"{prefix}.stop_tol")
        return self


@dataclass
class AdmmConfig:
    rho: float = 1.0
    eta1: Optional[float] = 1e-6
    eta2: float = 0.2
    inner_iters_u: int = 10
    inner_iters_x: int = 10
    outer_iters: int = 1000
    stop_tol: float = 1e-6
    quantizer: QuantizerSpec = field(default_factory=QuantizerSpec)

    def validate(self, prefix: str = "admm") -> "AdmmConfig":
        ensure_positive(self.rho, f"{prefix}.rho")
        if self.eta1 is not None:
            ensure_positive(self.eta1, f"{prefix}.eta1")
        ensure_positive(self.eta2, f"{prefix}.eta2")
        # 純量不動點迭代需 |1 - η₂ρ| < 1
        if self.eta2 * self.rho >= 2.0:
            raise ConfigError(f"{prefix}.eta2", f"eta2*rho must be < 2 (got {self.eta2 * self.rho:g})")
        ensure_positive_int(self.inner_iters_u, f"{prefix}.inner_iters_u")
        ensure_positive_int(self.inner_iters_x, f"{prefix}.inner_iters_x")
        ensure_positive_int(self.outer_iters, f"{prefix}.outer_iters")
        ensure_nonnegative(self.stop_tol, f"{prefix}.stop_tol")
        self.quantizer.validate()
        return self


@dataclass
class NoiseSpec:
    nsd: float = 0.0
    seed: int = 0
    x_peak: Optional[float] = None

    def validate(self, prefix: str = "noise") -> "NoiseSpec":
        ensure_nonnegative(self.nsd, f"{prefix}.nsd")
        ensure_nonnegative_int(self.seed, f"{prefix}.seed")
        if self.x_peak is not None:
            ensure_positive(self.x_peak, f"{prefix}.x_peak")
        return self
