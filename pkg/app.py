"""斷層影像重建命令列入口：CTR、dADMM 與各項研究。"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional


def _ensure_package_imports() -> None:
    current_dir = Path(__file__).resolve().parent
    insert_path = str(current_dir)
    if insert_path not in sys.path:
        sys.path.insert(0, insert_path)


_ensure_package_imports()

from common.config import VERSION, AppConfig, load_env  # noqa: E402
from common.errors import EXIT_CONFIG, ConfigError, TomoError, exit_code_for  # noqa: E402
from common.services.logging import log_event, set_level  # noqa: E402
from routes import reconstruct, studies, tools  # noqa: E402


class CliParser(argparse.ArgumentParser):
    """用法錯誤改拋 ``ConfigError``，結束碼因此為 1 而不是 argparse 的 2。"""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError("usage", f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog="dtomo",
        description="Tomographic reconstruction with centralized gradient descent and quantized decentralized ADMM.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=CliParser)
    subparsers.required = True
    reconstruct.register(subparsers)
    studies.register(subparsers)
    tools.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        env: AppConfig = load_env()
    except ValueError as exc:
        print(f"error: env: {exc}", file=sys.stderr)
        log_event("error", "config_error", location="env", message=str(exc))
        return EXIT_CONFIG
    set_level(env.log_level)

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return int(args.handler(args, env))
    except SystemExit as exc:
        # --help / --version
        return int(exc.code or 0) if isinstance(exc.code, int) else 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        log_event("error", "config_error", location=exc.location, message=str(exc))
        return exit_code_for(exc)
    except (TomoError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        log_event("error", "command_failed", error=type(exc).__name__, message=str(exc))
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
