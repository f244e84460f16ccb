"""
Mutual consistency and non-negativity for a set of noisy marginals.

Tables are reconciled on every attribute set they share, smaller sets
first, so consistency reached on a set is never undone by a later one.
"""
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Sequence, Tuple

import numpy as np

from marginal_synth.config import settings
from marginal_synth.exceptions import ConsistencyError
from marginal_synth.marginal import MarginalSchema, MarginalTable, project_counts

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SharedSet:
    attrs: MarginalSchema
    members: Tuple[int, ...]


def shared_sets(schemas: Sequence[MarginalSchema]) -> List[SharedSet]:
    """
    Attribute sets shared by two or more schemas, subsets before supersets.

    The family is every pairwise intersection (the empty set included),
    closed under further intersection; ties in size are broken by the
    lexicographic order of the attribute indices.
    """
    if len(schemas) < 2:
        return []

    found: Dict[Tuple[int, ...], MarginalSchema] = {(): MarginalSchema((), ())}
    for a, b in combinations(schemas, 2):
        common = a.intersection(b)
        found.setdefault(common.attrs, common)

    grown = True
    while grown:
        grown = False
        for a, b in combinations(list(found.values()), 2):
            common = a.intersection(b)
            if common.attrs not in found:
                found[common.attrs] = common
                grown = True

    ordered = sorted(found.values(), key=lambda s: (s.width, s.attrs))
    return [
        SharedSet(attrs=s, members=tuple(i for i, schema in enumerate(schemas) if s.issubset(schema)))
        for s in ordered
    ]


def _shift(counts: np.ndarray, schema: MarginalSchema, sub: MarginalSchema, per_cell: np.ndarray) -> np.ndarray:
    """Add per_cell[s] to every cell of counts whose projection onto sub is s."""
    shape = tuple(size if attr in sub.attrs else 1 for attr, size in zip(schema.attrs, schema.sizes))
    tensor = counts.reshape(schema.sizes) + per_cell.reshape(shape)
    return tensor.reshape(-1)


def _weights(variances: np.ndarray) -> np.ndarray:
    if np.any(variances == 0):
        return (variances == 0).astype(np.float64)
    return 1.0 / variances


def enforce_consistency(tables: Sequence[MarginalTable]) -> List[MarginalTable]:
    """
    Make tables agree on every shared attribute set.

    For each shared set the members' projections are averaged with weights
    proportional to 1 / (c * sigma^2), c being how many cells of a member
    collapse into one cell of the set; each member is then shifted
    uniformly inside every group so its projection equals the average.

    Args:
        tables: Noisy marginals carrying noise_std

    Returns:
        New tables in the same order
    """
    tables = list(tables)
    if len(tables) < 2:
        return tables

    schemas = [t.schema for t in tables]
    counts = [np.array(t.counts, dtype=np.float64) for t in tables]
    stds = [t.noise_std for t in tables]
    equal_weights = any(s is None for s in stds)
    if equal_weights:
        logger.warning("noise_std missing on at least one marginal; averaging with equal weights")

    for shared in shared_sets(schemas):
        sub = shared.attrs
        members = shared.members
        projections = np.stack([project_counts(counts[i], schemas[i], sub) for i in members])
        collapse = np.array([schemas[i].cells // sub.cells for i in members], dtype=np.float64)

        if equal_weights:
            weights = np.ones(len(members))
        else:
            weights = _weights(collapse * np.array([stds[i] for i in members], dtype=np.float64) ** 2)
        average = weights @ projections / weights.sum()

        for row, i in enumerate(members):
            diff = average - projections[row]
            counts[i] = _shift(counts[i], schemas[i], sub, diff / collapse[row])

    return [t.with_counts(c) for t, c in zip(tables, counts)]


def _clip_redistribute(table: MarginalTable) -> MarginalTable:
    """Zero the negative cells and take their mass from positive cells proportionally."""
    counts = np.array(table.counts, dtype=np.float64)
    negative = counts < 0
    deficit = -counts[negative].sum()
    if deficit == 0:
        return table

    positive = counts > 0
    mass = counts[positive].sum()
    if mass < deficit:
        raise ConsistencyError(
            f"marginal {table.schema.attrs} has negative total {table.total:.3f}; noise too large to salvage"
        )
    counts[negative] = 0.0
    counts[positive] -= deficit * counts[positive] / mass
    return table.with_counts(counts)


def _blend_uniform(tables: List[MarginalTable]) -> List[MarginalTable]:
    """
    Mix consistent tables with the uniform tables of their totals just enough
    to lift every cell to zero. Uniform tables with a common total agree on
    every projection, so the mix stays consistent.
    """
    lam = 0.0
    uniforms = []
    for table in tables:
        if table.total <= 0:
            raise ConsistencyError(f"marginal {table.schema.attrs} has non-positive total {table.total:.3f}")
        uniform = table.total / table.schema.cells
        uniforms.append(uniform)
        negative = table.counts[table.counts < 0]
        if negative.size:
            lam = max(lam, float(np.max(-negative / (uniform - negative))))

    logger.warning(f"blending marginals toward uniform with weight {lam:.3e} to remove residual negatives")
    return [
        t.with_counts(np.maximum((1.0 - lam) * t.counts + lam * u, 0.0))
        for t, u in zip(tables, uniforms)
    ]


def nonneg_consistent(
    tables: Sequence[MarginalTable],
    max_rounds: int = settings.nonneg_max_rounds,
    tol: float = settings.nonneg_tolerance,
) -> List[MarginalTable]:
    """
    Make consistent tables non-negative while keeping them consistent.

    Each round clips every table (negative mass taken proportionally from
    its positive cells, total preserved) and re-runs enforce_consistency.
    Rounds stop when no negatives remain, the largest change falls under
    tol, or max_rounds is reached; leftover negatives are then removed by
    a small blend toward uniform tables.
    """
    current = list(tables)
    for table in current:
        if table.total < 0:
            raise ConsistencyError(
                f"marginal {table.schema.attrs} has negative total {table.total:.3f}; noise too large to salvage"
            )

    for round_number in range(1, max_rounds + 1):
        if all(t.counts.min() >= 0 for t in current):
            break
        updated = enforce_consistency([_clip_redistribute(t) for t in current])
        change = max(float(np.max(np.abs(new.counts - old.counts))) for new, old in zip(updated, current))
        current = updated
        logger.info(f"nonneg round={round_number} max_change={change:.3e}")
        if change < tol:
            break

    if any(t.counts.min() < 0 for t in current):
        current = _blend_uniform(current)
    return current
