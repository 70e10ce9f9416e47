"""命令列子命令群組；每個模組以 ``register(subparsers)`` 掛上自己的子命令。"""

from . import reconstruct, studies, tools

__all__ = ["reconstruct", "studies", "tools"]
