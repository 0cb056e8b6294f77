# common/__init__.py
from .errors import (
    PortraitError,
    ValidationError,
    ConfigurationError,
    IntegrityError,
    NumericalAbort,
)

__all__ = [
    'PortraitError',
    'ValidationError',
    'ConfigurationError',
    'IntegrityError',
    'NumericalAbort',
]
