"""
Utility helper functions
"""
import math
import re
from typing import Any, Optional, Sequence

import numpy as np

from ..config import settings
from ..errors import InvalidArgumentError


def safe_float(s: Any) -> Optional[float]:
    """Convert a scalar or string to float; None when it does not parse or is not finite."""
    if s is None or isinstance(s, bool):
        return None
    if isinstance(s, str):
        if not s.strip():
            return None
        s = s.strip()
    try:
        value = float(s)
    except (ValueError, TypeError):
        return None
    return value if math.isfinite(value) else None


def finite_float(value: Any, name: str) -> float:
    """Like safe_float, but raise InvalidArgumentError naming the field."""
    out = safe_float(value)
    if out is None:
        raise InvalidArgumentError(f"{name} must be a finite real number, got {value!r}")
    return out


def finite_vector(values: Any, name: str, length: Optional[int] = None) -> np.ndarray:
    """
    Convert a sequence to a finite float vector.

    Args:
        values: sequence of numbers
        name: field name used in error messages
        length: required length, if any

    Returns:
        1-D float64 array
    """
    if isinstance(values, (str, bytes)) or not isinstance(values, (Sequence, np.ndarray)):
        raise InvalidArgumentError(f"{name} must be a list of numbers, got {values!r}")
    out = np.array([finite_float(v, f"{name}[{k}]") for k, v in enumerate(values)], dtype=float)
    if length is not None and out.shape != (length,):
        raise InvalidArgumentError(f"{name} must have {length} entries, got {out.size}")
    return out


def slug(s: str) -> str:
    """Convert string to a filesystem-safe slug"""
    return re.sub(r'[^a-zA-Z0-9_-]', '_', s.strip())


def format_sig(value: float, digits: Optional[int] = None) -> str:
    """Format a float with the configured number of significant digits."""
    digits = settings.float_digits if digits is None else digits
    return f"{value:.{digits}g}"


def float_format(digits: Optional[int] = None) -> str:
    """printf-style format string for pandas writers."""
    digits = settings.float_digits if digits is None else digits
    return f"%.{digits}g"
