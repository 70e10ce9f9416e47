import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

try:
    from dotenv import load_dotenv  # type: ignore
except Exception:
    load_dotenv = None  # type: ignore


PROJECT_ROOT = Path(__file__).resolve().parents[1]
VERSION = "0.3.0"


@dataclass
class AppConfig:
    output_dir: Path
    log_level: str
    worker_timeout: float


def validate_log_level(value: Optional[str]) -> str:
    v = (value or "INFO").strip().upper()
    if v not in {"DEBUG", "INFO", "WARNING", "ERROR"}:
        raise ValueError(f"Invalid log level: {value}")
    return v


def validate_timeout(value: Optional[str]) -> float:
    try:
        v = float(value) if value not in (None, "") else 600.0
    except ValueError as exc:
        raise ValueError(f"Invalid worker timeout: {value}") from exc
    if v <= 0:
        raise ValueError("Invalid worker timeout: expected > 0 seconds")
    return v


def load_env(env_file: Optional[Path] = None) -> AppConfig:
    # .env 只補預設值，真正的環境變數優先
    try:
        if load_dotenv:
            load_dotenv(env_file or PROJECT_ROOT / ".env", override=False)
    except Exception:
        pass
    output_dir = Path(os.getenv("DTOMO_OUTPUT_DIR", "runs")).expanduser()
    log_level = validate_log_level(os.getenv("DTOMO_LOG_LEVEL"))
    worker_timeout = validate_timeout(os.getenv("DTOMO_WORKER_TIMEOUT"))
    return AppConfig(
        output_dir=output_dir,
        log_level=log_level,
        worker_timeout=worker_timeout,
    )
