"""
Runtime settings.

Values are read once from the environment; per-run parameters belong in the
scenario file instead.
"""
import os
from dataclasses import dataclass


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw.strip())
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or not raw.strip():
        return default
    try:
        return float(raw.strip())
    except ValueError:
        return default


@dataclass(frozen=True)
class Settings:
    """Process-wide knobs.

    Attributes:
        robustness_cap: largest agent count accepted by the exact robustness oracle
        log_level: default logging level name for the CLI
        float_digits: significant digits of every floating-point output value
        dwell_tolerance: slack (s) applied when comparing message spacing with dwell_min
        eigen_tolerance: largest |Re(lambda)| of S accepted without a warning
    """

    robustness_cap: int = 12
    log_level: str = "INFO"
    float_digits: int = 9
    dwell_tolerance: float = 1e-9
    eigen_tolerance: float = 1e-9

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            robustness_cap=_env_int("ELC_ROBUSTNESS_CAP", cls.robustness_cap),
            log_level=(os.environ.get("ELC_LOG_LEVEL") or cls.log_level).upper(),
            float_digits=_env_int("ELC_FLOAT_DIGITS", cls.float_digits),
            dwell_tolerance=_env_float("ELC_DWELL_TOLERANCE", cls.dwell_tolerance),
            eigen_tolerance=_env_float("ELC_EIGEN_TOLERANCE", cls.eigen_tolerance),
        )


# Global instance
settings = Settings.from_env()
