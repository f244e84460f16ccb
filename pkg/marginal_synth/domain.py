"""Domain specification, dataset encoding and random initialization."""
import io
import json
import logging
from typing import List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from marginal_synth.exceptions import DomainError
from marginal_synth.sampling import largest_remainder, make_rng

logger = logging.getLogger(__name__)


class AttributeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: Literal["categorical", "numeric"]
    values: Optional[List[str]] = None
    bin_edges: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "AttributeSpec":
        if self.kind == "categorical":
            if not self.values:
                raise ValueError(f"attribute '{self.name}': categorical attribute needs values")
            if len(set(self.values)) != len(self.values):
                raise ValueError(f"attribute '{self.name}': duplicate category labels")
            if self.bin_edges is not None:
                raise ValueError(f"attribute '{self.name}': categorical attribute cannot have bin_edges")
        else:
            if not self.bin_edges or len(self.bin_edges) < 2:
                raise ValueError(f"attribute '{self.name}': numeric attribute needs at least 2 bin_edges")
            if any(b <= a for a, b in zip(self.bin_edges, self.bin_edges[1:])):
                raise ValueError(f"attribute '{self.name}': non-increasing edges")
            if self.values is not None:
                raise ValueError(f"attribute '{self.name}': numeric attribute cannot have values")
        return self

    @property
    def domain_size(self) -> int:
        if self.kind == "categorical":
            return len(self.values)
        return len(self.bin_edges) - 1

    @property
    def labels(self) -> List[str]:
        """Printable label per value index; numeric bins read as [lo,hi)."""
        if self.kind == "categorical":
            return list(self.values)
        edges = self.bin_edges
        labels = [f"[{lo:g},{hi:g})" for lo, hi in zip(edges, edges[1:])]
        labels[-1] = labels[-1][:-1] + "]"
        return labels

    def midpoints(self) -> np.ndarray:
        if self.kind != "numeric":
            raise DomainError(f"attribute '{self.name}' is not numeric")
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        return (edges[:-1] + edges[1:]) / 2.0

    def encode_column(self, cells: pd.Series) -> np.ndarray:
        """Map raw CSV cells of this attribute to value indices."""
        if self.kind == "categorical":
            codes = pd.Categorical(cells, categories=self.values).codes.astype(np.int64)
            unknown = np.flatnonzero(codes < 0)
            if unknown.size:
                raise DomainError(
                    f"unknown label '{cells.iloc[unknown[0]]}' for attribute '{self.name}'"
                )
            return codes

        numbers = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(np.isnan(numbers))
        if bad.size:
            raise DomainError(f"non-numeric value '{cells.iloc[bad[0]]}' for attribute '{self.name}'")
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        outside = np.flatnonzero((numbers < edges[0]) | (numbers > edges[-1]))
        if outside.size:
            raise DomainError(f"out-of-range numeric {numbers[outside[0]]} for attribute '{self.name}'")
        # Half-open bins, last bin closed on the right.
        index = np.searchsorted(edges, numbers, side="right") - 1
        index[numbers == edges[-1]] = self.domain_size - 1
        return index.astype(np.int64)

    def decode_column(self, column: np.ndarray) -> list:
        if self.kind == "categorical":
            return [self.values[i] for i in column]
        return self.midpoints()[column].tolist()


class Domain(BaseModel):
    model_config = ConfigDict(frozen=True)

    attrs: List[AttributeSpec]

    @model_validator(mode="after")
    def _check_names(self) -> "Domain":
        if not self.attrs:
            raise ValueError("domain needs at least one attribute")
        seen = set()
        for spec in self.attrs:
            if spec.name in seen:
                raise ValueError(f"duplicate attribute name '{spec.name}'")
            seen.add(spec.name)
        return self

    @property
    def d(self) -> int:
        return len(self.attrs)

    @property
    def names(self) -> List[str]:
        return [spec.name for spec in self.attrs]

    @property
    def sizes(self) -> tuple:
        return tuple(spec.domain_size for spec in self.attrs)

    def index_of(self, name: str) -> int:
        for i, spec in enumerate(self.attrs):
            if spec.name == name:
                return i
        raise DomainError(f"unknown attribute '{name}'")

    def project(self, indices: Sequence[int]) -> "Domain":
        return Domain(attrs=[self.attrs[i] for i in indices])

    def replace(self, index: int, spec: AttributeSpec) -> "Domain":
        attrs = list(self.attrs)
        attrs[index] = spec
        return Domain(attrs=attrs)


class Dataset:
    """An N x d matrix of value indices over a Domain. Read-only once built."""

    def __init__(self, domain: Domain, records):
        array = np.array(records, dtype=np.int64)
        if array.size == 0:
            array = array.reshape(0, domain.d)
        if array.ndim != 2 or array.shape[1] != domain.d:
            raise DomainError(f"records must have shape (n, {domain.d}), got {array.shape}")
        for j, size in enumerate(domain.sizes):
            column = array[:, j]
            if column.size and (column.min() < 0 or column.max() >= size):
                raise DomainError(f"column '{domain.attrs[j].name}' has indices outside [0, {size})")
        array.setflags(write=False)
        self._domain = domain
        self._records = array

    @property
    def domain(self) -> Domain:
        return self._domain

    @property
    def records(self) -> np.ndarray:
        return self._records

    @property
    def n(self) -> int:
        return self._records.shape[0]

    def column(self, j: int) -> np.ndarray:
        return self._records[:, j]

    def select(self, indices: Sequence[int]) -> "Dataset":
        indices = list(indices)
        return Dataset(self._domain.project(indices), self._records[:, indices])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._domain == other._domain and np.array_equal(self._records, other._records)

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self._domain.d})"


def load_domain(spec_text: str) -> Domain:
    """
    Parse a domain-spec JSON document.

    Args:
        spec_text: {"attrs": [{"name", "kind", "values" | "bin_edges"}, ...]}

    Returns:
        Domain with attributes in document order

    Raises:
        DomainError: If the document is malformed or violates an invariant
    """
    try:
        document = json.loads(spec_text)
    except json.JSONDecodeError as e:
        raise DomainError(f"malformed domain document: {e}") from e
    if not isinstance(document, dict) or "attrs" not in document:
        raise DomainError("malformed domain document: missing 'attrs'")
    try:
        return Domain.model_validate(document)
    except ValidationError as e:
        messages = "; ".join(err["msg"] for err in e.errors())
        raise DomainError(f"invalid domain document: {messages}") from e


def load_csv(text: str, domain: Domain) -> Dataset:
    """
    Encode a CSV document (header row, UTF-8) against a Domain.

    Label matching is exact; numeric cells land in half-open bins with the
    last bin closed on the right.
    """
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DomainError(f"malformed CSV: {e}") from e

    columns = list(frame.columns)
    for name in domain.names:
        if name not in columns:
            raise DomainError(f"missing column '{name}'")
    extra = [c for c in columns if c not in domain.names]
    if extra:
        raise DomainError(f"unexpected column '{extra[0]}'")

    encoded = np.empty((len(frame), domain.d), dtype=np.int64)
    for j, spec in enumerate(domain.attrs):
        encoded[:, j] = spec.encode_column(frame[spec.name])
    logger.info(f"Loaded {len(frame)} records over {domain.d} attributes")
    return Dataset(domain, encoded)


def dataset_to_frame(dataset: Dataset) -> pd.DataFrame:
    """Decode value indices back to labels (numeric bins as midpoints)."""
    data = {
        spec.name: spec.decode_column(dataset.column(j))
        for j, spec in enumerate(dataset.domain.attrs)
    }
    return pd.DataFrame(data, columns=dataset.domain.names)


def dataset_to_csv(dataset: Dataset) -> str:
    return dataset_to_frame(dataset).to_csv(index=False, lineterminator="\n")


def random_dataset(
    domain: Domain,
    n: int,
    one_way: Optional[Sequence[Sequence[float]]] = None,
    seed: int = 0,
) -> Dataset:
    """
    Build an n-record dataset with independently drawn columns.

    Without one_way every column is uniform over its domain. With one_way,
    each column holds exactly the largest-remainder quota of its 1-way
    distribution, shuffled.

    Args:
        domain: Target domain
        n: Record count
        one_way: Optional normalized 1-way marginal per attribute
        seed: Seed for the generator

    Returns:
        Dataset with n records
    """
    if n < 0:
        raise DomainError(f"record count must be non-negative, got {n}")
    if one_way is not None and len(one_way) != domain.d:
        raise DomainError(f"expected {domain.d} one-way marginals, got {len(one_way)}")

    rng = make_rng(seed)
    records = np.empty((n, domain.d), dtype=np.int64)
    for j, size in enumerate(domain.sizes):
        if one_way is None:
            records[:, j] = rng.integers(0, size, size=n)
            continue
        distribution = np.asarray(one_way[j], dtype=np.float64)
        if distribution.shape != (size,):
            raise DomainError(
                f"one-way marginal for '{domain.attrs[j].name}' has {distribution.size} cells, expected {size}"
            )
        counts = largest_remainder(distribution, n)
        column = np.repeat(np.arange(size, dtype=np.int64), counts)
        rng.shuffle(column)
        records[:, j] = column
    return Dataset(domain, records)
