import json

import pytest

from marginal_synth.domain import load_csv, load_domain
from marginal_synth.exceptions import MarginalSynthError, PipelineError
from marginal_synth.models import RunConfig, SynthesisConfig
from marginal_synth.pipeline import SynthesisPipeline, load_marginal_config, run_synthesis, stage
from tests.factories import REFERENCE_DOMAIN_JSON, reference_csv

ALL_MARGINALS = {"marginals": [["Gender"], ["Age"], ["Gender", "Age"]]}


def write_inputs(tmp_path, document):
    (tmp_path / "data.csv").write_text(reference_csv(), encoding="utf-8")
    (tmp_path / "domain.json").write_text(REFERENCE_DOMAIN_JSON, encoding="utf-8")
    (tmp_path / "config.json").write_text(json.dumps(document), encoding="utf-8")


def run_config(tmp_path, out="synth.csv", **overrides) -> RunConfig:
    values = {
        "data": str(tmp_path / "data.csv"),
        "domain": str(tmp_path / "domain.json"),
        "config": str(tmp_path / "config.json"),
        "out": str(tmp_path / out),
        "epsilon": 10.0,
        "seed": 1,
        "synthesis": SynthesisConfig(iterations=10),
    }
    values.update(overrides)
    return RunConfig(**values)


class TestStage:
    def test_wraps_toolkit_errors(self):
        """Test that a toolkit error leaves the stage as PipelineError."""
        with pytest.raises(PipelineError) as exc_info:
            with stage("noise"):
                raise MarginalSynthError("boom")
        assert exc_info.value.stage == "noise"
        assert "boom" in str(exc_info.value)

    def test_passes_other_errors(self):
        """Test that I/O errors are not wrapped."""
        with pytest.raises(OSError):
            with stage("load"):
                raise OSError("disk")

    def test_marginal_config_validation(self):
        """Test rejection of an empty marginal list."""
        with pytest.raises(MarginalSynthError):
            load_marginal_config('{"marginals": []}')


class TestSynthesisPipeline:
    def test_end_to_end(self, tmp_path):
        """Test a full run with three marginals and a generous budget."""
        write_inputs(tmp_path, ALL_MARGINALS)
        config = run_config(tmp_path)
        outputs = run_synthesis(config)

        manifest = outputs.manifest
        assert manifest.plan.strategy == "lap_basic"
        assert manifest.plan.k == 3
        assert manifest.n_input == manifest.n_output == 100
        assert [entry.schema_ for entry in manifest.marginals] == [["Gender"], ["Age"], ["Gender", "Age"]]

        domain = load_domain(REFERENCE_DOMAIN_JSON)
        synthetic = load_csv((tmp_path / "synth.csv").read_text(encoding="utf-8"), domain)
        assert synthetic.n == 100
        archive = json.loads((tmp_path / "synth.csv.marginals.json").read_text(encoding="utf-8"))
        assert len(archive["marginals"]) == 3
        written = json.loads((tmp_path / "synth.csv.manifest.json").read_text(encoding="utf-8"))
        assert written["plan"]["strategy"] == "lap_basic"
        assert written["marginals"][2]["schema"] == ["Gender", "Age"]

    def test_byte_identical_reruns(self, tmp_path):
        """Test that one seed reproduces the synthetic CSV, the archive and the manifest."""
        write_inputs(tmp_path, ALL_MARGINALS)
        names = ["synth.csv", "synth.csv.marginals.json", "synth.csv.manifest.json"]
        run_synthesis(run_config(tmp_path))
        first = [(tmp_path / name).read_bytes() for name in names]
        run_synthesis(run_config(tmp_path))
        second = [(tmp_path / name).read_bytes() for name in names]
        assert first == second

    def test_output_size_override(self, tmp_path):
        """Test a synthetic record count different from the input."""
        write_inputs(tmp_path, ALL_MARGINALS)
        outputs = SynthesisPipeline(run_config(tmp_path, synthetic_records=40)).run()
        assert outputs.dataset.n == 40

    def test_compression_stage(self, tmp_path):
        """Test that the 1-way stage records its threshold and sizes."""
        write_inputs(tmp_path, {**ALL_MARGINALS, "compress": {"Age": {"rule": "filter_combine"}}})
        outputs = SynthesisPipeline(run_config(tmp_path)).run()
        one_way = outputs.manifest.one_way
        assert one_way.attributes == ["Age"]
        assert one_way.thresholds["Age"] > 0
        assert one_way.compressed_sizes["Age"] == 3
        assert outputs.dataset.domain.names == ["Gender", "Age"]

    def test_group_recode_round_trip(self, tmp_path):
        """Test that grouped attributes come back in the original domain."""
        write_inputs(tmp_path, {"marginals": [["Gender", "Age"]], "group_recode": [["Gender", "Age"]]})
        outputs = SynthesisPipeline(run_config(tmp_path)).run()
        assert outputs.dataset.domain == load_domain(REFERENCE_DOMAIN_JSON)
        assert outputs.table_domain.names == ["Gender+Age"]
        assert outputs.dataset.n == 100

    def test_bucketize_round_trip(self, tmp_path):
        """Test that a bucketized attribute is refilled into its fine values."""
        write_inputs(tmp_path, {**ALL_MARGINALS, "bucketize": {"Age": {"width": 2}}})
        outputs = SynthesisPipeline(run_config(tmp_path)).run()
        assert outputs.dataset.domain.attrs[1].domain_size == 3
        assert outputs.table_domain.attrs[1].domain_size == 2
        assert outputs.manifest.one_way.compressed_sizes["Age"] == 2

    def test_compress_and_bucketize_conflict(self, tmp_path):
        """Test rejection of one attribute under both rules."""
        document = {
            **ALL_MARGINALS,
            "compress": {"Age": {"rule": "fire"}},
            "bucketize": {"Age": {"width": 2}},
        }
        write_inputs(tmp_path, document)
        with pytest.raises(PipelineError):
            SynthesisPipeline(run_config(tmp_path)).run()

    def test_unknown_attribute(self, tmp_path):
        """Test that a marginal naming a missing attribute fails its stage."""
        write_inputs(tmp_path, {"marginals": [["Height"]]})
        with pytest.raises(PipelineError) as exc_info:
            SynthesisPipeline(run_config(tmp_path)).run()
        assert exc_info.value.stage == "marginals"

    def test_missing_input_flag(self, tmp_path):
        """Test that a run without data fails at load."""
        write_inputs(tmp_path, ALL_MARGINALS)
        with pytest.raises(PipelineError) as exc_info:
            SynthesisPipeline(run_config(tmp_path, data=None)).run()
        assert "--data" in str(exc_info.value)

    def test_missing_file(self, tmp_path):
        """Test that an absent input file raises an I/O error."""
        write_inputs(tmp_path, ALL_MARGINALS)
        with pytest.raises(OSError):
            SynthesisPipeline(run_config(tmp_path, data=str(tmp_path / "absent.csv"))).run()
