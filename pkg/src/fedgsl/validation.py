"""Small input-validation helpers used throughout the package."""

from __future__ import annotations

import numpy as np

from .exceptions import InputError


def require(condition: bool, message: str) -> None:
    """Raise :class:`InputError` with ``message`` unless ``condition`` holds."""
    if not condition:
        raise InputError(message)


def as_rng(seed) -> np.random.Generator:
    """Return a numpy Generator from an int seed, a Generator, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derived_rng(*parts) -> np.random.Generator:
    """Deterministic Generator derived from a tuple of integer components.

    Used to give sub-tasks (clients, repeats, rounds) independent streams that
    are a pure function of the master seed plus their index.
    """
    return np.random.default_rng(np.random.SeedSequence(tuple(int(p) for p in parts)))


def check_mask(mask, n: int, name: str = "mask") -> np.ndarray:
    """Validate and return a boolean mask of length ``n``."""
    arr = np.asarray(mask)
    if arr.dtype != np.bool_:
        raise InputError(f"{name} must be boolean, got dtype {arr.dtype}")
    if arr.shape != (n,):
        raise InputError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr
