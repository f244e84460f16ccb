"""
Marginal engineering: correlation ranking, value compression, group
recoding and bucketization, plus the post-synthesis inverses.
"""
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from marginal_synth.domain import AttributeSpec, Dataset, Domain
from marginal_synth.exceptions import EngineeringError
from marginal_synth.marginal import (
    MarginalSchema,
    MarginalTable,
    compute_marginal,
    independent_product,
    l1_distance,
)
from marginal_synth.sampling import largest_remainder, make_rng

logger = logging.getLogger(__name__)

DUMMY_LABEL = "<other>"


@dataclass(frozen=True)
class InDifScore:
    a: int
    b: int
    value: float

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.a, self.b)


def indif(dataset: Dataset, a: int, b: int) -> float:
    """L1 distance between the 2-way marginal on (a, b) and the product of its 1-way marginals."""
    if a == b:
        raise EngineeringError("indif needs two distinct attributes")
    if dataset.n == 0:
        return 0.0
    domain = dataset.domain
    joint = compute_marginal(dataset, MarginalSchema.from_domain(domain, [a, b]))
    ma = compute_marginal(dataset, MarginalSchema.from_domain(domain, [a]))
    mb = compute_marginal(dataset, MarginalSchema.from_domain(domain, [b]))
    return l1_distance(joint, independent_product(ma, mb, dataset.n))


def indif_matrix(dataset: Dataset) -> List[InDifScore]:
    """Every attribute pair scored by indif, largest first, ties by (a, b)."""
    scores = [
        InDifScore(a, b, indif(dataset, a, b))
        for a, b in combinations(range(dataset.domain.d), 2)
    ]
    return sorted(scores, key=lambda s: (-s.value, s.a, s.b))


ThresholdRule = Literal["fire", "filter_combine"]


def threshold(rule: ThresholdRule, sigma: float) -> float:
    """Low-count cutoff: max(4.5 sigma, 800) for "fire", 3 sigma for "filter_combine"."""
    if sigma < 0:
        raise EngineeringError(f"sigma must be non-negative, got {sigma}")
    if rule == "fire":
        return max(4.5 * sigma, 800.0)
    if rule == "filter_combine":
        return 3.0 * sigma
    raise EngineeringError(f"unknown threshold rule '{rule}'")


@dataclass(frozen=True)
class RecodeMap:
    attr: int
    original: AttributeSpec
    kept: Tuple[int, ...]
    grouped: Tuple[int, ...]
    dummy_index: Optional[int]
    one_way: Tuple[float, ...]

    @property
    def compressed_size(self) -> int:
        return len(self.kept) + (1 if self.dummy_index is not None else 0)

    def compressed_spec(self) -> AttributeSpec:
        labels = self.original.labels
        values = [labels[v] for v in self.kept]
        if self.dummy_index is not None:
            values.append(DUMMY_LABEL)
        return AttributeSpec(name=self.original.name, kind="categorical", values=values)

    def lookup(self) -> np.ndarray:
        """Original value index -> compressed value index."""
        table = np.empty(self.original.domain_size, dtype=np.int64)
        for position, value in enumerate(self.kept):
            table[value] = position
        if self.dummy_index is not None:
            table[list(self.grouped)] = self.dummy_index
        else:
            # Dropped values carry no mass in the noisy marginal; fold them into
            # the kept value with the largest noisy count.
            heaviest = max(range(len(self.kept)), key=lambda p: (self.one_way[self.kept[p]], -p))
            table[list(self.grouped)] = heaviest
        return table


def compress_attribute(noisy_one_way: MarginalTable, theta: float, attr: Optional[int] = None,
                       original: Optional[AttributeSpec] = None) -> RecodeMap:
    """
    Keep values whose noisy count exceeds theta and group the rest.

    The grouped values become one dummy value when their summed count is
    above theta; otherwise they are dropped (count 0, no dummy).
    theta == 0 leaves the attribute untouched.

    Args:
        noisy_one_way: Noisy 1-way marginal of the attribute
        theta: Cutoff (see threshold())
        attr: Attribute index; defaults to the marginal's attribute
        original: Attribute spec; defaults to a categorical spec named by index

    Returns:
        RecodeMap for the attribute
    """
    if theta < 0:
        raise EngineeringError(f"theta must be non-negative, got {theta}")
    if noisy_one_way.schema.width != 1:
        raise EngineeringError(f"compression needs a 1-way marginal, got schema {noisy_one_way.schema.attrs}")

    counts = noisy_one_way.counts
    attr = noisy_one_way.schema.attrs[0] if attr is None else attr
    if original is None:
        original = AttributeSpec(name=str(attr), kind="categorical", values=[str(v) for v in range(counts.size)])
    one_way = tuple(float(c) for c in counts)

    if theta == 0:
        return RecodeMap(attr, original, tuple(range(counts.size)), (), None, one_way)

    kept = tuple(int(v) for v in np.flatnonzero(counts > theta))
    grouped = tuple(int(v) for v in np.flatnonzero(counts <= theta))
    dummy_index = None
    if grouped and counts[list(grouped)].sum() > theta:
        dummy_index = len(kept)
    if not kept and dummy_index is None:
        raise EngineeringError(f"attribute '{original.name}' has no value above threshold {theta:.1f}")

    logger.info(
        f"Compressed '{original.name}': kept={len(kept)} grouped={len(grouped)} "
        f"dummy={'yes' if dummy_index is not None else 'no'} theta={theta:.1f}"
    )
    return RecodeMap(attr, original, kept, grouped, dummy_index, one_way)


def _with_column(dataset: Dataset, attr: int, spec: AttributeSpec, column: np.ndarray) -> Dataset:
    records = np.array(dataset.records)
    records[:, attr] = column
    return Dataset(dataset.domain.replace(attr, spec), records)


def compress_dataset(dataset: Dataset, maps: Sequence[RecodeMap]) -> Dataset:
    """Re-encode the mapped attributes into their compressed domains."""
    for recode in maps:
        column = recode.lookup()[dataset.column(recode.attr)]
        dataset = _with_column(dataset, recode.attr, recode.compressed_spec(), column)
    return dataset


def expand_compressed(synth: Dataset, recode: RecodeMap, seed: int) -> Dataset:
    """
    Map a compressed attribute back to its original domain.

    Kept values map back one-to-one; each dummy occurrence is replaced by a
    grouped value drawn uniformly.
    """
    column = synth.column(recode.attr)
    kept = np.asarray(recode.kept, dtype=np.int64)
    expanded = np.empty(column.size, dtype=np.int64)

    is_dummy = column >= len(kept)
    if is_dummy.any():
        if recode.dummy_index is None or not recode.grouped:
            raise EngineeringError(
                f"attribute '{recode.original.name}' holds a dummy value but the map has no grouped values"
            )
        rng = make_rng(seed)
        expanded[is_dummy] = rng.choice(np.asarray(recode.grouped, dtype=np.int64), size=int(is_dummy.sum()))
    expanded[~is_dummy] = kept[column[~is_dummy]]
    return _with_column(synth, recode.attr, recode.original, expanded)


@dataclass(frozen=True)
class GroupRecodeMap:
    """Decode information for attributes recoded into one combined attribute."""

    original_domain: Domain
    attrs: Tuple[int, ...]
    combos: np.ndarray

    @property
    def position(self) -> int:
        return self.attrs[0]

    def decode(self, dataset: Dataset) -> Dataset:
        """Restore the original attributes from the combined column."""
        combined = dataset.column(self.position)
        others = [j for j in range(dataset.domain.d) if j != self.position]
        rest = iter(others)

        records = np.empty((dataset.n, self.original_domain.d), dtype=np.int64)
        restored = self.combos[combined] if dataset.n else np.empty((0, len(self.attrs)), dtype=np.int64)
        for j in range(self.original_domain.d):
            if j in self.attrs:
                records[:, j] = restored[:, self.attrs.index(j)]
            else:
                records[:, j] = dataset.column(next(rest))
        return Dataset(self.original_domain, records)


def _combo_label(parts: Sequence[str]) -> str:
    """Join labels with "|", escaping "\\" and "|" so distinct combinations never share a label."""
    return "|".join(part.replace("\\", "\\\\").replace("|", "\\|") for part in parts)


def group_recode(dataset: Dataset, attrs: Sequence[int]) -> Tuple[Dataset, AttributeSpec, GroupRecodeMap]:
    """
    Replace several attributes by one whose values are their observed combinations.

    The combined attribute takes the position of the first grouped
    attribute; the others are removed.

    Returns:
        (recoded dataset, combined AttributeSpec, decode map)
    """
    attrs = tuple(sorted(int(a) for a in attrs))
    if len(attrs) < 2:
        raise EngineeringError("group_recode needs at least 2 attributes")
    if len(set(attrs)) != len(attrs):
        raise EngineeringError(f"repeated attribute in group {attrs}")
    if dataset.n == 0:
        raise EngineeringError("group_recode needs at least one record to observe combinations")

    domain = dataset.domain
    combos, combined = np.unique(dataset.records[:, list(attrs)], axis=0, return_inverse=True)
    combined = np.asarray(combined).reshape(-1)

    specs = [domain.attrs[a] for a in attrs]
    labels = [_combo_label([spec.labels[v] for spec, v in zip(specs, combo)]) for combo in combos]
    spec = AttributeSpec(name="+".join(s.name for s in specs), kind="categorical", values=labels)

    kept_positions = [j for j in range(domain.d) if j not in attrs[1:]]
    new_attrs = [spec if j == attrs[0] else domain.attrs[j] for j in kept_positions]
    records = np.array(dataset.records[:, kept_positions])
    records[:, kept_positions.index(attrs[0])] = combined

    logger.info(f"Group-recoded {[s.name for s in specs]} into '{spec.name}' with {len(labels)} values")
    recode = GroupRecodeMap(original_domain=domain, attrs=attrs, combos=combos.astype(np.int64))
    return Dataset(Domain(attrs=new_attrs), records), spec, recode


@dataclass(frozen=True)
class BucketMap:
    attr: int
    original: AttributeSpec
    width: int

    @property
    def bucket_count(self) -> int:
        return -(-self.original.domain_size // self.width)

    def bucket_spec(self) -> AttributeSpec:
        labels = self.original.labels
        values = []
        for b in range(self.bucket_count):
            lo, hi = b * self.width, min((b + 1) * self.width, self.original.domain_size) - 1
            values.append(labels[lo] if lo == hi else f"{labels[lo]}..{labels[hi]}")
        return AttributeSpec(name=self.original.name, kind="categorical", values=values)


def bucketize_attribute(dataset: Dataset, attr: int, width: int) -> Tuple[Dataset, BucketMap]:
    """Coarsen an attribute into buckets of `width` consecutive values."""
    if width < 2:
        raise EngineeringError(f"bucket width must be at least 2, got {width}")
    bucket = BucketMap(attr=attr, original=dataset.domain.attrs[attr], width=width)
    coarse = dataset.column(attr) // width
    return _with_column(dataset, attr, bucket.bucket_spec(), coarse), bucket


def refill_bucketized(synth: Dataset, bucket: BucketMap, fine_one_way: Sequence[float], seed: int) -> Dataset:
    """
    Replace each bucket value by a fine value drawn from the fine 1-way marginal.

    Inside a bucket the fine values are assigned by largest-remainder quota
    of the (non-negative part of the) fine marginal restricted to that
    bucket, then shuffled; a bucket with no positive mass is filled uniformly.
    """
    fine = np.clip(np.asarray(fine_one_way, dtype=np.float64), 0.0, None)
    if fine.size != bucket.original.domain_size:
        raise EngineeringError(
            f"fine marginal has {fine.size} cells, attribute '{bucket.original.name}' has {bucket.original.domain_size}"
        )

    rng = make_rng(seed)
    coarse = synth.column(bucket.attr)
    column = np.empty(coarse.size, dtype=np.int64)
    for b in range(bucket.bucket_count):
        rows = np.flatnonzero(coarse == b)
        if rows.size == 0:
            continue
        values = np.arange(b * bucket.width, min((b + 1) * bucket.width, fine.size))
        counts = largest_remainder(fine[values], rows.size)
        filled = np.repeat(values, counts)
        rng.shuffle(filled)
        column[rows] = filled
    return _with_column(synth, bucket.attr, bucket.original, column)
