"""Small shared helpers: seeded stream splitting, count allocation, CSV formatting."""

from __future__ import annotations

import numpy as np


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent generator for replicate ``rep`` of a master ``seed``.

    Streams are derived with ``SeedSequence(seed, spawn_key=(rep,))``, so the
    stream depends only on (seed, replicate index) and never on scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def allocate_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Split ``total`` into integer counts proportional to ``weights``.

    Largest-remainder rounding with ties broken by index, so the result is a
    deterministic function of the inputs and always sums to ``total``.
    """
    weights = np.asarray(weights, dtype=float)
    if total < 0 or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("need total >= 0 and nonnegative weights with positive sum")
    quota = total * weights / weights.sum()
    counts = np.floor(quota).astype(int)
    short = total - counts.sum()
    if short > 0:
        order = np.lexsort((np.arange(len(weights)), -(quota - counts)))
        counts[order[:short]] += 1
    return counts


def fmt(x) -> str:
    """Deterministic scalar formatting for CSV output."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)
