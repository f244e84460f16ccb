import json

import numpy as np
import pytest

from marginal_synth.domain import (
    AttributeSpec,
    Dataset,
    Domain,
    dataset_to_csv,
    load_csv,
    load_domain,
    random_dataset,
)
from marginal_synth.exceptions import DomainError
from marginal_synth.marginal import MarginalSchema, compute_marginal
from tests.factories import REFERENCE_DOMAIN_JSON, categorical_domain, reference_csv, reference_dataset

AGE_DOMAIN = json.dumps({
    "attrs": [
        {"name": "Gender", "kind": "categorical", "values": ["male", "female"]},
        {"name": "Age", "kind": "numeric", "bin_edges": [0, 18, 65, 120]},
    ]
})


class TestLoadDomain:
    def test_single_categorical_attribute(self):
        """Test a one-attribute domain document."""
        domain = load_domain('{"attrs":[{"name":"Gender","kind":"categorical","values":["male","female"]}]}')
        assert domain.d == 1
        assert domain.sizes == (2,)

    def test_numeric_attribute_bins(self):
        """Test that four edges give three bins."""
        domain = load_domain(AGE_DOMAIN)
        assert domain.attrs[1].domain_size == 3
        assert domain.attrs[1].labels == ["[0,18)", "[18,65)", "[65,120]"]

    def test_non_increasing_edges(self):
        """Test rejection of repeated bin edges with the attribute name."""
        text = '{"attrs":[{"name":"Age","kind":"numeric","bin_edges":[0,18,18]}]}'
        with pytest.raises(DomainError) as exc_info:
            load_domain(text)
        assert "non-increasing edges" in str(exc_info.value)
        assert "Age" in str(exc_info.value)

    def test_duplicate_attribute_names(self):
        """Test rejection of duplicate attribute names."""
        text = json.dumps({"attrs": [
            {"name": "A", "kind": "categorical", "values": ["x"]},
            {"name": "A", "kind": "categorical", "values": ["y"]},
        ]})
        with pytest.raises(DomainError) as exc_info:
            load_domain(text)
        assert "duplicate attribute name" in str(exc_info.value)

    def test_malformed_document(self):
        """Test rejection of broken JSON and missing attrs."""
        with pytest.raises(DomainError):
            load_domain("{not json")
        with pytest.raises(DomainError):
            load_domain('{"fields": []}')

    def test_empty_domain(self):
        """Test rejection of a domain without attributes."""
        with pytest.raises(DomainError):
            load_domain('{"attrs": []}')

    def test_project_and_replace(self):
        """Test sub-domain helpers."""
        domain = categorical_domain([2, 3, 4])
        assert domain.project([2, 0]).names == ["a2", "a0"]
        spec = AttributeSpec(name="b", kind="categorical", values=["x"])
        assert domain.replace(1, spec).names == ["a0", "b", "a2"]
        with pytest.raises(DomainError):
            domain.index_of("missing")


class TestLoadCsv:
    def test_reference_dataset(self):
        """Test encoding the 100-record reference table."""
        dataset = reference_dataset()
        assert dataset.n == 100
        assert dataset.domain.names == ["Gender", "Age"]

    def test_empty_body(self):
        """Test a header-only CSV."""
        dataset = load_csv("Gender,Age\n", load_domain(REFERENCE_DOMAIN_JSON))
        assert dataset.n == 0
        assert dataset.records.shape == (0, 2)

    def test_case_exact_labels(self):
        """Test that label matching is case-sensitive."""
        with pytest.raises(DomainError) as exc_info:
            load_csv("Gender,Age\nMale,teen\n", load_domain(REFERENCE_DOMAIN_JSON))
        assert "unknown label" in str(exc_info.value)

    def test_missing_column(self):
        """Test rejection of a CSV lacking a domain attribute."""
        with pytest.raises(DomainError) as exc_info:
            load_csv("Gender\nmale\n", load_domain(REFERENCE_DOMAIN_JSON))
        assert "missing column" in str(exc_info.value)

    def test_column_order_is_free(self):
        """Test that header order does not matter."""
        dataset = load_csv("Age,Gender\nadult,female\n", load_domain(REFERENCE_DOMAIN_JSON))
        assert dataset.records.tolist() == [[1, 1]]

    def test_numeric_binning(self):
        """Test half-open bins with the last bin closed."""
        text = "Gender,Age\nmale,0\nmale,17.9\nfemale,18\nfemale,65\nmale,120\n"
        dataset = load_csv(text, load_domain(AGE_DOMAIN))
        assert dataset.column(1).tolist() == [0, 0, 1, 2, 2]

    def test_out_of_range_numeric(self):
        """Test rejection of values outside the bin edges."""
        with pytest.raises(DomainError) as exc_info:
            load_csv("Gender,Age\nmale,121\n", load_domain(AGE_DOMAIN))
        assert "out-of-range numeric" in str(exc_info.value)

    def test_round_trip(self):
        """Test that decoding then re-encoding gives the same dataset."""
        dataset = reference_dataset()
        again = load_csv(dataset_to_csv(dataset), dataset.domain)
        assert again == dataset

    def test_numeric_round_trip(self):
        """Test that bin midpoints re-encode into their own bin."""
        dataset = load_csv("Gender,Age\nmale,3\nfemale,70\n", load_domain(AGE_DOMAIN))
        assert load_csv(dataset_to_csv(dataset), dataset.domain) == dataset

    def test_records_are_read_only(self):
        """Test that a Dataset cannot be mutated in place."""
        dataset = reference_dataset()
        with pytest.raises(ValueError):
            dataset.records[0, 0] = 1

    def test_out_of_domain_indices(self):
        """Test Dataset validation of value indices."""
        with pytest.raises(DomainError):
            Dataset(categorical_domain([2]), [[2]])


class TestRandomDataset:
    def setup_method(self):
        """Set up a binary domain."""
        self.domain = categorical_domain([2])

    def test_quota_split(self):
        """Test that an even 1-way marginal gives an exact split."""
        dataset = random_dataset(self.domain, 4, one_way=[[0.5, 0.5]], seed=3)
        assert np.bincount(dataset.column(0), minlength=2).tolist() == [2, 2]

    def test_degenerate_distribution(self):
        """Test that a point mass gives a constant column."""
        dataset = random_dataset(self.domain, 10, one_way=[[1.0, 0.0]])
        assert dataset.column(0).tolist() == [0] * 10

    def test_uniform_concentration(self):
        """Test that uniform draws stay within three standard deviations."""
        dataset = random_dataset(self.domain, 10_000, seed=11)
        zeros = int((dataset.column(0) == 0).sum())
        assert abs(zeros - 5000) <= 3 * np.sqrt(10_000 * 0.25)

    def test_negative_count(self):
        """Test rejection of a negative record count."""
        with pytest.raises(DomainError):
            random_dataset(self.domain, -1)

    def test_deterministic(self):
        """Test that one seed gives one dataset."""
        domain = categorical_domain([3, 4])
        assert random_dataset(domain, 50, seed=5) == random_dataset(domain, 50, seed=5)

    def test_largest_remainder_bound(self):
        """Test the L1 gap between the requested and realized 1-way marginals."""
        domain = categorical_domain([5])
        wanted = np.array([0.13, 0.27, 0.05, 0.4, 0.15])
        n = 37
        dataset = random_dataset(domain, n, one_way=[wanted], seed=2)
        realized = compute_marginal(dataset, MarginalSchema.from_domain(domain, [0])).counts / n
        assert np.abs(realized - wanted).sum() <= 5 / n

    def test_reference_csv_shape(self):
        """Test the reference CSV helper line count."""
        assert len(reference_csv().strip().split("\n")) == 101
