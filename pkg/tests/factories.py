"""Small datasets and domains shared by the test modules."""
import json

import numpy as np

from marginal_synth.domain import AttributeSpec, Dataset, Domain, load_csv, load_domain

# Gender x Age cells of the 100-record reference table, male rows first.
REFERENCE_CELLS = [
    ("male", "teen", 20),
    ("male", "adult", 15),
    ("male", "elderly", 20),
    ("female", "teen", 15),
    ("female", "adult", 20),
    ("female", "elderly", 10),
]

REFERENCE_DOMAIN_JSON = json.dumps({
    "attrs": [
        {"name": "Gender", "kind": "categorical", "values": ["male", "female"]},
        {"name": "Age", "kind": "categorical", "values": ["teen", "adult", "elderly"]},
    ]
})


def reference_csv() -> str:
    lines = ["Gender,Age"]
    for gender, age, count in REFERENCE_CELLS:
        lines.extend([f"{gender},{age}"] * count)
    return "\n".join(lines) + "\n"


def reference_dataset() -> Dataset:
    return load_csv(reference_csv(), load_domain(REFERENCE_DOMAIN_JSON))


def categorical_domain(sizes) -> Domain:
    return Domain(attrs=[
        AttributeSpec(name=f"a{j}", kind="categorical", values=[f"v{v}" for v in range(size)])
        for j, size in enumerate(sizes)
    ])


def random_records(sizes, n: int, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    domain = categorical_domain(sizes)
    records = np.column_stack([rng.integers(0, size, size=n) for size in sizes])
    return Dataset(domain, records)


def chain_dataset(sizes, n: int, seed: int = 0) -> Dataset:
    """Each attribute copies the previous one with probability 0.7, else draws uniformly."""
    rng = np.random.default_rng(seed)
    domain = categorical_domain(sizes)
    records = np.empty((n, len(sizes)), dtype=np.int64)
    records[:, 0] = rng.integers(0, sizes[0], size=n)
    for j in range(1, len(sizes)):
        copied = np.minimum(records[:, j - 1], sizes[j] - 1)
        fresh = rng.integers(0, sizes[j], size=n)
        records[:, j] = np.where(rng.random(n) < 0.7, copied, fresh)
    return Dataset(domain, records)
