"""
Marginal tables over attribute subsets.

Layout contract: counts are stored row-major with the first schema attribute
as the slowest-varying index. Every serialized table states it.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from marginal_synth.domain import Dataset, Domain
from marginal_synth.exceptions import MarginalError
from marginal_synth.models import MarginalArchive, NoisyMarginalRecord

logger = logging.getLogger(__name__)

LAYOUT = "row-major, first attribute slowest"


@dataclass(frozen=True)
class MarginalSchema:
    """A strictly increasing attribute subset with the domain sizes of its members."""

    attrs: Tuple[int, ...]
    sizes: Tuple[int, ...]

    def __post_init__(self):
        attrs = tuple(int(a) for a in self.attrs)
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "sizes", sizes)
        if len(attrs) != len(sizes):
            raise MarginalError(f"schema has {len(attrs)} attributes but {len(sizes)} sizes")
        if any(b <= a for a, b in zip(attrs, attrs[1:])):
            raise MarginalError(f"schema attributes must be strictly increasing, got {attrs}")
        if any(s <= 0 for s in sizes):
            raise MarginalError(f"schema sizes must be positive, got {sizes}")

    @classmethod
    def from_domain(cls, domain: Domain, attrs: Sequence[int]) -> "MarginalSchema":
        attrs = tuple(sorted(int(a) for a in attrs))
        if not attrs:
            raise MarginalError("a marginal schema needs at least one attribute")
        if len(set(attrs)) != len(attrs):
            raise MarginalError(f"repeated attribute in schema {attrs}")
        if attrs[0] < 0 or attrs[-1] >= domain.d:
            raise MarginalError(f"schema {attrs} out of range for a domain with d={domain.d}")
        return cls(attrs, tuple(domain.sizes[a] for a in attrs))

    @classmethod
    def from_names(cls, domain: Domain, names: Sequence[str]) -> "MarginalSchema":
        return cls.from_domain(domain, [domain.index_of(name) for name in names])

    @property
    def width(self) -> int:
        return len(self.attrs)

    @property
    def cells(self) -> int:
        return int(np.prod(self.sizes, dtype=np.int64))

    def size_of(self, attr: int) -> int:
        return self.sizes[self.attrs.index(attr)]

    def issubset(self, other: "MarginalSchema") -> bool:
        return set(self.attrs) <= set(other.attrs)

    def intersection(self, other: "MarginalSchema") -> "MarginalSchema":
        common = tuple(a for a in self.attrs if a in other.attrs)
        return MarginalSchema(common, tuple(self.size_of(a) for a in common))

    def union(self, other: "MarginalSchema") -> "MarginalSchema":
        sizes = dict(zip(self.attrs, self.sizes))
        sizes.update(zip(other.attrs, other.sizes))
        attrs = tuple(sorted(sizes))
        return MarginalSchema(attrs, tuple(sizes[a] for a in attrs))

    def validate_for(self, domain: Domain) -> None:
        if not self.attrs:
            raise MarginalError("a marginal schema needs at least one attribute")
        if self.attrs[-1] >= domain.d:
            raise MarginalError(f"schema {self.attrs} out of range for a domain with d={domain.d}")
        expected = tuple(domain.sizes[a] for a in self.attrs)
        if expected != self.sizes:
            raise MarginalError(f"schema sizes {self.sizes} do not match domain sizes {expected}")

    def names(self, domain: Domain) -> List[str]:
        return [domain.attrs[a].name for a in self.attrs]


@dataclass(frozen=True, eq=False)
class MarginalTable:
    schema: MarginalSchema
    counts: np.ndarray = field(repr=False)
    noise_std: Optional[float] = None

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.float64).reshape(-1)
        if counts.size != self.schema.cells:
            raise MarginalError(
                f"counts have {counts.size} cells, schema lattice has {self.schema.cells}"
            )
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def tensor(self) -> np.ndarray:
        return self.counts.reshape(self.schema.sizes)

    def with_counts(self, counts) -> "MarginalTable":
        return replace(self, counts=counts)


def cell_decode(sizes: Sequence[int], flat_index: int) -> Tuple[int, ...]:
    """Flat row-major index to per-attribute value indices."""
    cells = int(np.prod(sizes, dtype=np.int64))
    if not 0 <= flat_index < cells:
        raise MarginalError(f"cell index {flat_index} outside lattice of {cells} cells")
    return tuple(int(v) for v in np.unravel_index(flat_index, tuple(sizes)))


def cell_encode(sizes: Sequence[int], values: Sequence[int]) -> int:
    if len(values) != len(sizes):
        raise MarginalError(f"expected {len(sizes)} values, got {len(values)}")
    for value, size in zip(values, sizes):
        if not 0 <= value < size:
            raise MarginalError(f"value {value} outside [0, {size})")
    return int(np.ravel_multi_index(tuple(values), tuple(sizes)))


def cell_indices(records: np.ndarray, schema: MarginalSchema) -> np.ndarray:
    """Flat cell index of every record projected onto the schema."""
    if not schema.attrs:
        return np.zeros(records.shape[0], dtype=np.int64)
    columns = tuple(records[:, a] for a in schema.attrs)
    return np.ravel_multi_index(columns, schema.sizes).astype(np.int64)


def compute_marginal(dataset: Dataset, schema: MarginalSchema) -> MarginalTable:
    schema.validate_for(dataset.domain)
    flat = cell_indices(dataset.records, schema)
    counts = np.bincount(flat, minlength=schema.cells).astype(np.float64)
    return MarginalTable(schema, counts)


def project_counts(counts: np.ndarray, schema: MarginalSchema, sub: MarginalSchema) -> np.ndarray:
    if not sub.issubset(schema):
        raise MarginalError(f"{sub.attrs} is not a subset of {schema.attrs}")
    tensor = np.asarray(counts, dtype=np.float64).reshape(schema.sizes)
    dropped = tuple(i for i, a in enumerate(schema.attrs) if a not in sub.attrs)
    return tensor.sum(axis=dropped).reshape(-1)


def project(table: MarginalTable, sub: MarginalSchema) -> MarginalTable:
    """Sum a table over the attributes missing from sub."""
    if sub == table.schema:
        return table
    return MarginalTable(sub, project_counts(table.counts, table.schema, sub), table.noise_std)


def independent_product(ma: MarginalTable, mb: MarginalTable, n: float) -> MarginalTable:
    """
    Joint table on the union schema assuming the two marginals are independent.

    Cell (i, j) gets n * (ma[i] / ma.total) * (mb[j] / mb.total).
    """
    if set(ma.schema.attrs) & set(mb.schema.attrs):
        raise MarginalError(f"schemas {ma.schema.attrs} and {mb.schema.attrs} overlap")
    if ma.total <= 0 or mb.total <= 0:
        raise MarginalError("independent product needs positive totals")

    pa = ma.tensor() / ma.total
    pb = mb.tensor() / mb.total
    wa, wb = ma.schema.width, mb.schema.width
    joint = n * pa.reshape(pa.shape + (1,) * wb) * pb.reshape((1,) * wa + pb.shape)

    union = ma.schema.union(mb.schema)
    order = np.argsort(ma.schema.attrs + mb.schema.attrs)
    return MarginalTable(union, joint.transpose(order).reshape(-1))


def l1_distance(a: MarginalTable, b: MarginalTable) -> float:
    if a.schema != b.schema:
        raise MarginalError(f"schema mismatch: {a.schema.attrs} vs {b.schema.attrs}")
    return float(np.abs(a.counts - b.counts).sum())


def normalize(table: MarginalTable) -> MarginalTable:
    total = table.total
    if total == 0:
        raise MarginalError(f"cannot normalize marginal {table.schema.attrs} with zero total")
    return table.with_counts(table.counts / total)


def scale_to(table: MarginalTable, n: float) -> MarginalTable:
    total = table.total
    if total <= 0:
        raise MarginalError(f"cannot scale marginal {table.schema.attrs} with total {total}")
    return table.with_counts(table.counts * (n / total))


def table_to_record(table: MarginalTable, domain: Domain) -> NoisyMarginalRecord:
    return NoisyMarginalRecord(
        schema=table.schema.names(domain),
        sizes=list(table.schema.sizes),
        counts=table.counts.tolist(),
        noise_std=table.noise_std,
    )


def table_from_record(record: NoisyMarginalRecord, domain: Domain) -> MarginalTable:
    schema = MarginalSchema.from_names(domain, record.schema_)
    if list(schema.sizes) != list(record.sizes):
        raise MarginalError(f"archived sizes {record.sizes} do not match domain sizes {schema.sizes}")
    if [domain.attrs[a].name for a in schema.attrs] != list(record.schema_):
        raise MarginalError(f"archived schema {record.schema_} is not in domain order")
    return MarginalTable(schema, record.counts, record.noise_std)


def dump_archive(tables: Sequence[MarginalTable], domain: Domain) -> str:
    archive = MarginalArchive(layout=LAYOUT, marginals=[table_to_record(t, domain) for t in tables])
    return json.dumps(archive.model_dump(by_alias=True), indent=2, sort_keys=True) + "\n"


def parse_archive(text: str, domain: Domain) -> List[MarginalTable]:
    try:
        archive = MarginalArchive.model_validate_json(text)
    except ValueError as e:
        raise MarginalError(f"malformed marginal archive: {e}") from e
    if archive.layout != LAYOUT:
        raise MarginalError(f"unsupported archive layout '{archive.layout}'")
    return [table_from_record(record, domain) for record in archive.marginals]
