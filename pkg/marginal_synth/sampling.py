"""Seeding and integer-quota helpers shared by every stage."""
import hashlib
from typing import Sequence

import numpy as np

_SEED_MASK = (1 << 63) - 1


def derive_seed(seed: int, *parts) -> int:
    """
    Derive a stable sub-seed from a root seed and a sequence of labels.

    The labels are hashed with blake2b so the result does not depend on
    Python's per-process hash randomization or on the platform.

    Args:
        seed: Root seed of the run
        parts: Stage name, schema names, or any other printable labels

    Returns:
        Non-negative 63-bit integer usable as a numpy seed
    """
    text = "|".join(str(part) for part in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(digest, "big")) & _SEED_MASK


def make_rng(seed: int, *parts) -> np.random.Generator:
    if parts:
        seed = derive_seed(seed, *parts)
    return np.random.default_rng(seed)


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """
    Split an integer total across cells proportionally to weights.

    Each cell gets the floor of its quota; the leftover units go to the
    cells with the largest fractional parts (ties by lower index).
    Negative weights count as zero; all-zero weights give a uniform split.

    Args:
        weights: Non-normalized cell weights
        total: Non-negative integer to distribute

    Returns:
        Integer array with the same length as weights, summing to total
    """
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
    if total < 0:
        raise ValueError(f"total must be non-negative, got {total}")
    if w.size == 0:
        if total:
            raise ValueError("cannot distribute a positive total over zero cells")
        return np.zeros(0, dtype=np.int64)

    mass = w.sum()
    if mass <= 0:
        w = np.ones_like(w)
        mass = float(w.size)

    quotas = w / mass * total
    counts = np.floor(quotas).astype(np.int64)
    leftover = int(total - counts.sum())
    if leftover > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts
