"""重建流程共用的例外類別與 CLI 結束碼對應。"""

from __future__ import annotations

from typing import Optional


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


class TomoError(Exception):
    """所有重建相關錯誤的基底類別。"""


class ConfigError(TomoError, ValueError):
    """設定檔或參數不合法；訊息以點號路徑開頭，例如 ``admm.rho``。"""

    def __init__(self, location: str, message: str) -> None:
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class GeometryError(TomoError, ValueError):
    """掃描幾何不合法。"""


class DimensionError(TomoError, ValueError):
    """運算元長度或形狀不一致。"""


class DivergenceError(TomoError, ArithmeticError):
    """迭代值的範數超過發散門檻。"""

    def __init__(
        self,
        message: str,
        *,
        node_id: Optional[int] = None,
        iteration: Optional[int] = None,
    ) -> None:
        self.node_id = node_id
        self.iteration = iteration
        parts = [message]
        if node_id is not None:
            parts.append(f"node={node_id}")
        if iteration is not None:
            parts.append(f"iteration={iteration}")
        super().__init__(" ".join(parts))


class CodecError(TomoError, ValueError):
    """量化訊息損毀或編碼輸入不合法。"""


class TransportError(TomoError, RuntimeError):
    """節點間傳輸失敗。"""

    def __init__(self, message: str, *, failing_node: Optional[int] = None) -> None:
        self.failing_node = failing_node
        super().__init__(message)


class CollectiveAborted(TransportError):
    """集體通訊因某節點失敗或逾時而中止。"""


class NodeFailure(TomoError, RuntimeError):
    """某個節點的 worker 在指定迭代失敗。"""

    def __init__(self, node_id: int, iteration: int, cause: BaseException) -> None:
        self.node_id = node_id
        self.iteration = iteration
        self.cause = cause
        super().__init__(
            f"node {node_id} failed at iteration {iteration}: {type(cause).__name__}: {cause}"
        )


def exit_code_for(exc: BaseException) -> int:
    """依例外類型決定 CLI 結束碼。"""

    if isinstance(exc, NodeFailure):
        return exit_code_for(exc.cause)
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGED
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, TomoError):
        return EXIT_CONFIG
    return EXIT_IO
