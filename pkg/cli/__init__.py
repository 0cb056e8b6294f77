# cli/__init__.py
from .config import RunConfig
from .commands import COMMANDS

__all__ = ['RunConfig', 'COMMANDS']
