"""Input validation helpers shared across the package."""

from __future__ import annotations

from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a config value or combination of values is invalid."""


def check_positive(name: str, value: float) -> None:
    if not value > 0:
        raise ConfigurationError(f"{name} must be > 0, got {value!r}")


def check_range(name: str, rng: Sequence[float], low_ok: float | None = None) -> None:
    if len(rng) != 2 or rng[0] > rng[1]:
        raise ConfigurationError(f"{name} must be (low, high) with low <= high, got {rng!r}")
    if low_ok is not None and rng[0] < low_ok:
        raise ConfigurationError(f"{name} lower bound must be >= {low_ok}, got {rng!r}")


def check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must be in [0, 1], got {value!r}")


def check_observation(obs: np.ndarray, cells_x: int, cells_y: int, channels: int) -> None:
    """Check an observation grid against the active grid shape."""
    if obs.ndim != 3 or obs.shape != (cells_x, cells_y, channels):
        raise ValueError(
            f"observation shape {tuple(obs.shape)} does not match grid "
            f"({cells_x}, {cells_y}, {channels})"
        )


def check_mode(mode: str) -> None:
    from .config import MODES

    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {sorted(MODES)}")
