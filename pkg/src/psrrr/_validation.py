"""Shared input-validation helpers."""

from __future__ import annotations

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or parameter value."""


class DataError(ValueError):
    """Malformed, inconsistent, or degenerate input data."""


class AllSnpsFilteredError(DataError):
    """Every SNP was removed by quality-control filtering."""


class DegenerateFactorError(DataError):
    """The genotype latent factor Xb is identically zero."""


def as_float_matrix(x, name="X", order=None):
    """Coerce to a 2-D float64 array, raising with the offending name."""
    arr = np.asarray(x, dtype=np.float64, order=order)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_float_vector(x, name="z"):
    arr = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_block_sizes(sizes, n_features):
    """Validate contiguous group sizes and return (offsets, sizes) int64 arrays.

    Groups are contiguous column blocks: group l owns columns
    offsets[l] .. offsets[l] + sizes[l] - 1.
    """
    sizes = np.asarray(sizes, dtype=np.int64).ravel()
    if sizes.size == 0:
        raise ValueError("at least one group is required")
    if np.any(sizes < 1):
        raise ValueError("group sizes must be >= 1")
    if int(sizes.sum()) != n_features:
        raise ValueError(
            f"group sizes sum to {int(sizes.sum())} but the design has "
            f"{n_features} columns"
        )
    offsets = np.zeros(sizes.size, dtype=np.int64)
    np.cumsum(sizes[:-1], out=offsets[1:])
    return offsets, sizes


def check_weights(weights, n_groups, sizes=None):
    """Return validated positive group weights; default is sqrt(size)."""
    if weights is None:
        if sizes is None:
            raise ValueError("weights or sizes must be provided")
        return np.sqrt(np.asarray(sizes, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size != n_groups:
        raise ValueError(f"expected {n_groups} weights, got {w.size}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("group weights must be finite and strictly positive")
    return w


def check_unit_interval(value, name, *, open_low=False, open_high=False):
    value = float(value)
    low_ok = value > 0 if open_low else value >= 0
    high_ok = value < 1 if open_high else value <= 1
    if not (low_ok and high_ok):
        lo = "(" if open_low else "["
        hi = ")" if open_high else "]"
        raise ConfigError(f"{name} must lie in {lo}0, 1{hi}, got {value}")
    return value


def check_positive(value, name, kind=float):
    value = kind(value)
    if not value > 0:
        raise ConfigError(f"{name} must be > 0, got {value}")
    return value
