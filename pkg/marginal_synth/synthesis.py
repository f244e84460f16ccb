"""
Dataset synthesis from consistent, non-negative noisy marginals.

The engine starts from records that follow the 1-way marginals and nudges
them toward every target marginal in turn. Two update rules are offered:
the min-cost-flow baseline (match each target exactly) and the gradual
update, which moves at most alpha times a cell's current count per step.
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from marginal_synth.domain import Dataset, Domain, random_dataset
from marginal_synth.engineering import RecodeMap, expand_compressed
from marginal_synth.exceptions import MarginalError, SynthesisError
from marginal_synth.marginal import (
    MarginalSchema,
    MarginalTable,
    cell_indices,
    project_counts,
)
from marginal_synth.models import DecaySchedule, SynthesisConfig
from marginal_synth.sampling import derive_seed, largest_remainder, make_rng

logger = logging.getLogger(__name__)

CONSISTENCY_TOLERANCE = 1e-6


def decay(alpha0: float, t: int, schedule: DecaySchedule) -> float:
    """Update rate at sweep t under the given schedule."""
    if t < 0:
        raise SynthesisError(f"sweep index must be non-negative, got {t}")
    k = schedule.rate
    if schedule.kind == "step":
        return alpha0 * k ** (t // schedule.step)
    if schedule.kind == "exponential":
        return alpha0 * math.exp(-k * t)
    if schedule.kind == "linear":
        return alpha0 / (1.0 + k * t)
    if schedule.kind == "sqrt":
        return alpha0 / math.sqrt(1.0 + k * t)
    raise SynthesisError(f"unknown decay schedule '{schedule.kind}'")


def duplicate_probability(config: SynthesisConfig, t: int) -> float:
    if config.record_update == "replace":
        return 0.0
    if config.record_update == "duplicate":
        return 1.0
    return min(0.9, 0.5 + config.dup_ramp * t)


@dataclass
class UpdateStats:
    increased: int = 0
    decreased: int = 0
    duplicated: int = 0
    replaced: int = 0


class _CellIndex:
    """Rows grouped by the cell they fall in for one schema."""

    def __init__(self, records: np.ndarray, schema: MarginalSchema):
        self.flat = cell_indices(records, schema)
        self.order = np.argsort(self.flat, kind="stable")
        self.starts = np.searchsorted(self.flat[self.order], np.arange(schema.cells + 1))

    def counts(self) -> np.ndarray:
        return np.diff(self.starts)

    def rows(self, cell: int) -> np.ndarray:
        return self.order[self.starts[cell]:self.starts[cell + 1]]

    def pick_donors(self, removals: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        chosen = [
            rng.choice(self.rows(cell), size=int(k), replace=False)
            for cell, k in enumerate(removals)
            if k > 0
        ]
        donors = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
        rng.shuffle(donors)
        return donors


def _scaled_target(target: MarginalTable, n: int) -> np.ndarray:
    counts = np.clip(target.counts, 0.0, None)
    mass = counts.sum()
    if n == 0:
        return np.zeros_like(counts)
    if mass <= 0:
        raise SynthesisError(f"target marginal {target.schema.attrs} has no positive mass")
    return counts * (n / mass)


def _write_cells(records: np.ndarray, rows: np.ndarray, schema: MarginalSchema, cells: np.ndarray) -> None:
    values = np.stack(np.unravel_index(cells, schema.sizes), axis=1)
    records[np.ix_(rows, list(schema.attrs))] = values


def _mcf_step(records: np.ndarray, schema: MarginalSchema, target: np.ndarray, rng: np.random.Generator) -> int:
    index = _CellIndex(records, schema)
    goal = largest_remainder(target, records.shape[0])
    current = index.counts()
    surplus = np.clip(current - goal, 0, None)
    deficit = np.clip(goal - current, 0, None)
    moves = int(surplus.sum())
    if moves == 0:
        return 0
    donors = index.pick_donors(surplus, rng)
    receivers = np.repeat(np.arange(schema.cells), deficit)
    _write_cells(records, donors, schema, receivers)
    return moves


def _gum_step(
    records: np.ndarray,
    schema: MarginalSchema,
    target: np.ndarray,
    alpha: float,
    dup_prob: float,
    rng: np.random.Generator,
) -> UpdateStats:
    n = records.shape[0]
    index = _CellIndex(records, schema)
    current = index.counts().astype(np.float64)

    gap = target - current
    # An empty cell has a multiplicative cap of 0; give it a floor so it can grow.
    floor = max(1.0, math.ceil(alpha * n / schema.cells))
    cap = np.where(current > 0, alpha * current, floor)
    increase = np.where(gap > 0, np.minimum(gap, cap), 0.0)
    surplus = np.where(gap < 0, -gap, 0.0)

    moves = int(math.floor(min(increase.sum(), surplus.sum()) + 1e-9))
    if moves == 0:
        return UpdateStats()

    additions = largest_remainder(increase, moves)
    removals = largest_remainder(surplus, moves)
    donors = index.pick_donors(removals, rng)
    receivers = np.repeat(np.arange(schema.cells), additions)

    available = index.starts[receivers + 1] - index.starts[receivers]
    duplicate = (rng.random(moves) < dup_prob) & (available > 0)

    _write_cells(records, donors[~duplicate], schema, receivers[~duplicate])
    if duplicate.any():
        cells = receivers[duplicate]
        offsets = rng.integers(0, available[duplicate])
        sources = index.order[index.starts[cells] + offsets]
        # Sources sit in under-counted cells, so none of them is a donor.
        records[donors[duplicate]] = records[sources]

    duplicated = int(duplicate.sum())
    return UpdateStats(increased=moves, decreased=moves, duplicated=duplicated, replaced=moves - duplicated)


def mcf_update(dataset: Dataset, target: MarginalTable, rng: Optional[np.random.Generator] = None) -> Dataset:
    """
    Force the dataset's marginal on target.schema to the rounded target.

    Records leave over-counted cells and enter under-counted ones with
    only the schema attributes overwritten. The target is rescaled to the
    record count and rounded by largest remainder.
    """
    target.schema.validate_for(dataset.domain)
    rng = rng if rng is not None else make_rng(0)
    records = np.array(dataset.records)
    moved = _mcf_step(records, target.schema, _scaled_target(target, dataset.n), rng)
    logger.debug(f"mcf_update schema={target.schema.attrs} moved={moved}")
    return Dataset(dataset.domain, records)


def gum_update(
    dataset: Dataset,
    target: MarginalTable,
    alpha: float,
    dup_prob: float,
    rng: np.random.Generator,
) -> Tuple[Dataset, UpdateStats]:
    """
    One gradual update of the dataset toward a target marginal.

    Under-counted cells grow by min(target - current, alpha * current)
    (empty cells by at most max(1, ceil(alpha * n / cells))); over-counted
    cells shrink in proportion to their surplus by the same total, so the
    record count never changes. Each added unit clones a whole record of
    the receiving cell with probability dup_prob, otherwise it overwrites
    the schema attributes of a record taken from an over-counted cell.

    Args:
        dataset: Current synthetic dataset
        target: Target marginal; rescaled to the dataset's record count
        alpha: Update rate, > 0
        dup_prob: Probability of Duplicate over Replace
        rng: Generator for record selection

    Returns:
        (updated dataset, UpdateStats)
    """
    if alpha <= 0:
        raise SynthesisError(f"alpha must be positive, got {alpha}")
    if not 0 <= dup_prob <= 1:
        raise SynthesisError(f"dup_prob must lie in [0, 1], got {dup_prob}")
    target.schema.validate_for(dataset.domain)
    records = np.array(dataset.records)
    stats = _gum_step(records, target.schema, _scaled_target(target, dataset.n), alpha, dup_prob, rng)
    return Dataset(dataset.domain, records), stats


def mean_l1_error(records: np.ndarray, targets: Sequence[MarginalTable]) -> float:
    """Mean L1 distance between normalized current and target marginals."""
    if not targets:
        return 0.0
    n = records.shape[0]
    errors = []
    for target in targets:
        current = np.bincount(cell_indices(records, target.schema), minlength=target.schema.cells)
        wanted = np.clip(target.counts, 0.0, None)
        wanted = wanted / wanted.sum() if wanted.sum() > 0 else wanted
        errors.append(float(np.abs(current / max(n, 1) - wanted).sum()))
    return float(np.mean(errors))


class MarginalGraph:
    """Attributes as nodes, one hyperedge per marginal schema."""

    def __init__(self, d: int, schemas: Sequence[MarginalSchema]):
        self.d = d
        self.schemas = list(schemas)
        self.degrees: Dict[int, int] = {attr: 0 for attr in range(d)}
        for schema in self.schemas:
            for attr in schema.attrs:
                self.degrees[attr] += 1

    def degree(self, attr: int) -> int:
        return self.degrees[attr]

    def peelable(self) -> Dict[int, int]:
        """
        Degree-1 attributes that can be filled after the main synthesis,
        mapped to the index of their sole marginal.

        Qualifies: a 1-way marginal, or a 2-way marginal whose other
        attribute has degree at least 2.
        """
        peeled = {}
        for position, schema in enumerate(self.schemas):
            for attr in schema.attrs:
                if self.degrees[attr] != 1:
                    continue
                if schema.width == 1:
                    peeled[attr] = position
                elif schema.width == 2:
                    other = schema.attrs[1] if schema.attrs[0] == attr else schema.attrs[0]
                    if self.degrees[other] >= 2:
                        peeled[attr] = position
        return peeled

    def components(self, positions: Sequence[int]) -> List[Tuple[Tuple[int, ...], List[int]]]:
        """Connected components of the given marginals as (attributes, marginal positions)."""
        graph = nx.Graph()
        for position in positions:
            attrs = self.schemas[position].attrs
            graph.add_nodes_from(attrs)
            graph.add_edges_from(combinations(attrs, 2))

        result = []
        for nodes in sorted(nx.connected_components(graph), key=min):
            attrs = tuple(sorted(nodes))
            members = [p for p in positions if set(self.schemas[p].attrs) <= nodes]
            result.append((attrs, members))
        return result


@dataclass
class SynthesisResult:
    dataset: Dataset
    history: Dict[str, List[float]] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    components: List[List[str]] = field(default_factory=list)
    peeled: List[str] = field(default_factory=list)


def _check_inputs(marginals: Sequence[MarginalTable], domain: Domain) -> None:
    for table in marginals:
        try:
            table.schema.validate_for(domain)
        except MarginalError as e:
            raise SynthesisError(str(e)) from e
        if table.counts.min() < 0:
            raise SynthesisError(f"marginal {table.schema.attrs} has negative counts; run nonneg_consistent first")
        if table.total <= 0:
            raise SynthesisError(f"marginal {table.schema.attrs} has no positive mass")

    for a, b in combinations(marginals, 2):
        common = a.schema.intersection(b.schema)
        if not common.attrs:
            continue
        pa = project_counts(a.counts, a.schema, common) / a.total
        pb = project_counts(b.counts, b.schema, common) / b.total
        if np.max(np.abs(pa - pb)) > CONSISTENCY_TOLERANCE:
            raise SynthesisError(
                f"marginals {a.schema.attrs} and {b.schema.attrs} disagree on attributes {common.attrs}"
            )


def _localize(table: MarginalTable, attrs: Tuple[int, ...]) -> MarginalTable:
    local = MarginalSchema(tuple(attrs.index(a) for a in table.schema.attrs), table.schema.sizes)
    return MarginalTable(local, table.counts, table.noise_std)


def _one_way_from(tables: Sequence[MarginalTable], attr: int) -> np.ndarray:
    for table in tables:
        if attr in table.schema.attrs:
            sub = MarginalSchema((attr,), (table.schema.size_of(attr),))
            return project_counts(table.counts, table.schema, sub)
    raise SynthesisError(f"no marginal covers attribute {attr}")


def _synthesize_component(
    domain: Domain,
    attrs: Tuple[int, ...],
    tables: List[MarginalTable],
    n: int,
    config: SynthesisConfig,
) -> Tuple[np.ndarray, List[float]]:
    names = [domain.attrs[a].name for a in attrs]
    label = "+".join(names)
    sub_domain = domain.project(attrs)
    targets = [_localize(t, attrs) for t in tables]
    scaled = [_scaled_target(t, n) for t in targets]

    one_way = [_one_way_from(targets, j) for j in range(len(attrs))]
    start = random_dataset(sub_domain, n, one_way, seed=derive_seed(config.seed, "init", *names))
    records = np.array(start.records)
    rng = make_rng(config.seed, "component", *names)

    error = mean_l1_error(records, targets)
    history = [error]
    best_error, best_records, stalled = error, records.copy(), 0

    for t in range(1, config.iterations + 1):
        alpha = decay(config.alpha0, t, config.decay)
        dup_prob = duplicate_probability(config, t)
        for target, wanted in zip(targets, scaled):
            if config.update_method == "mcf":
                _mcf_step(records, target.schema, wanted, rng)
            else:
                _gum_step(records, target.schema, wanted, alpha, dup_prob, rng)
        records = records[rng.permutation(n)]

        error = mean_l1_error(records, targets)
        history.append(error)
        logger.info(f"iteration={t} alpha={alpha:.6g} error={error:.6g} component={label}")

        if error < best_error - config.convergence_tol:
            best_error, best_records, stalled = error, records.copy(), 0
        else:
            stalled += 1
            if error < best_error:
                best_error, best_records = error, records.copy()
            if stalled >= config.patience:
                logger.info(f"Stopping component {label} after {t} sweeps; best error {best_error:.6g}")
                break

    return best_records, history


def _append_conditional(
    column: np.ndarray, table: MarginalTable, attr: int, given: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Fill attr row by row from the table's conditional distribution given the other attribute."""
    tensor = np.clip(table.tensor(), 0.0, None)
    if table.schema.attrs[0] != attr:
        tensor = tensor.T
    fallback = tensor.sum(axis=1)
    for value in np.unique(given):
        rows = np.flatnonzero(given == value)
        weights = tensor[:, value]
        if weights.sum() <= 0:
            weights = fallback
        filled = np.repeat(np.arange(weights.size), largest_remainder(weights, rows.size))
        rng.shuffle(filled)
        column[rows] = filled
    return column


def _fill_quota(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    column = np.repeat(np.arange(weights.size), largest_remainder(weights, n))
    rng.shuffle(column)
    return column


def synthesize(
    marginals: Sequence[MarginalTable],
    domain: Domain,
    n: int,
    config: SynthesisConfig,
    recode_maps: Sequence[RecodeMap] = (),
) -> SynthesisResult:
    """
    Build an n-record dataset that matches the given marginals.

    Degree-1 attributes are peeled off and appended at the end from their
    sole marginal. The remaining marginals are split into connected
    components of the marginal graph; each component is initialized from
    its 1-way marginals and swept with the configured update rule, and the
    components are joined column-wise after an independent row shuffle.
    Attributes no marginal covers are filled uniformly and flagged.
    Compressed attributes listed in recode_maps are expanded last.

    Args:
        marginals: Consistent, non-negative marginals over domain
        domain: Domain of the synthetic records
        n: Number of records to produce
        config: Rates, schedule, iteration budget, update policy and seed
        recode_maps: Compression maps to undo after synthesis

    Returns:
        SynthesisResult with the dataset, per-component error history and flags

    Raises:
        SynthesisError: If a marginal is invalid, negative or inconsistent
    """
    if n < 0:
        raise SynthesisError(f"record count must be non-negative, got {n}")
    _check_inputs(marginals, domain)

    tables = list(marginals)
    history: Dict[str, List[float]] = {}
    flags: List[str] = []
    components: List[List[str]] = []
    appended: List[str] = []
    graph = MarginalGraph(domain.d, [t.schema for t in tables])
    peeled = graph.peelable()
    main_positions = [p for p in range(len(tables)) if p not in peeled.values()]

    records = np.zeros((n, domain.d), dtype=np.int64)
    filled = set()
    for attrs, members in graph.components(main_positions):
        names = [domain.attrs[a].name for a in attrs]
        logger.info(f"Synthesizing component {names} with {len(members)} marginals")
        block, trace = _synthesize_component(domain, attrs, [tables[p] for p in members], n, config)
        rng = make_rng(config.seed, "join", *names)
        records[:, list(attrs)] = block[rng.permutation(n)]
        history["+".join(names)] = trace
        components.append(names)
        filled.update(attrs)

    # Attributes left out of every component: hubs whose marginals were all peeled, or uncovered ones.
    for attr in range(domain.d):
        if attr in filled or attr in peeled:
            continue
        name = domain.attrs[attr].name
        rng = make_rng(config.seed, "fill", name)
        if graph.degree(attr) == 0:
            flag = f"attribute '{name}' is covered by no marginal; filled uniformly"
            logger.warning(flag)
            flags.append(flag)
            records[:, attr] = rng.integers(0, domain.attrs[attr].domain_size, size=n)
        else:
            records[:, attr] = _fill_quota(_one_way_from(tables, attr), n, rng)
        filled.add(attr)

    for attr, position in sorted(peeled.items()):
        table = tables[position]
        name = domain.attrs[attr].name
        rng = make_rng(config.seed, "append", name)
        if table.schema.width == 1:
            records[:, attr] = _fill_quota(table.counts, n, rng)
        else:
            other = [a for a in table.schema.attrs if a != attr][0]
            records[:, attr] = _append_conditional(records[:, attr], table, attr, records[:, other], rng)
        appended.append(name)
        logger.info(f"Appended attribute '{name}' from marginal {table.schema.names(domain)}")

    dataset = Dataset(domain, records)
    for recode in recode_maps:
        dataset = expand_compressed(dataset, recode, derive_seed(config.seed, "expand", recode.original.name))
    return SynthesisResult(dataset, history, flags, components, appended)


def synthesize_dataset(
    marginals: Sequence[MarginalTable],
    domain: Domain,
    n: int,
    config: SynthesisConfig,
    recode_maps: Sequence[RecodeMap] = (),
) -> Dataset:
    return synthesize(marginals, domain, n, config, recode_maps).dataset
