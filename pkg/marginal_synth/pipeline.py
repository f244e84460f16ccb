"""
End-to-end synthesis run: load, engineer, measure, noise, reconcile,
synthesize, restore and write.
"""
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from marginal_synth.consistency import enforce_consistency, nonneg_consistent
from marginal_synth.domain import Dataset, Domain, dataset_to_csv, load_csv, load_domain
from marginal_synth.engineering import (
    BucketMap,
    GroupRecodeMap,
    RecodeMap,
    bucketize_attribute,
    compress_attribute,
    compress_dataset,
    group_recode,
    refill_bucketized,
    threshold,
)
from marginal_synth.exceptions import MarginalSynthError, PipelineError
from marginal_synth.marginal import MarginalSchema, MarginalTable, compute_marginal, dump_archive
from marginal_synth.models import (
    MarginalConfigDocument,
    MarginalManifestEntry,
    NoisePlan,
    OneWayStage,
    PrivacyParams,
    RunConfig,
    RunManifest,
)
from marginal_synth.privacy import add_noise, plan_noise
from marginal_synth.sampling import derive_seed
from marginal_synth.synthesis import synthesize

logger = logging.getLogger(__name__)


def read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()


def write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)


def load_marginal_config(text: str) -> MarginalConfigDocument:
    try:
        return MarginalConfigDocument.model_validate_json(text)
    except ValueError as e:
        raise MarginalSynthError(f"invalid marginal config: {e}") from e


@contextmanager
def stage(name: str):
    """Run a block as a named pipeline stage; toolkit errors leave as PipelineError."""
    logger.info(f"Stage '{name}' started")
    try:
        yield
    except PipelineError:
        raise
    except (MarginalSynthError, ValueError) as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise PipelineError(name, e) from e


@dataclass
class SynthesisOutputs:
    dataset: Dataset
    tables: List[MarginalTable]
    table_domain: Domain
    manifest: RunManifest


@dataclass
class _Engineered:
    dataset: Dataset
    groups: List[GroupRecodeMap] = field(default_factory=list)
    recodes: List[RecodeMap] = field(default_factory=list)
    buckets: List[Tuple[BucketMap, np.ndarray]] = field(default_factory=list)
    one_way: Optional[OneWayStage] = None


class SynthesisPipeline:
    def __init__(self, config: RunConfig):
        self.config = config

    def load(self) -> Tuple[Dataset, MarginalConfigDocument]:
        config = self.config
        for flag, path in (("--data", config.data), ("--domain", config.domain), ("--config", config.config)):
            if not path:
                raise PipelineError("load", MarginalSynthError(f"{flag} is required"))
        domain_text = read_text(config.domain)
        data_text = read_text(config.data)
        document_text = read_text(config.config)
        with stage("load"):
            domain = load_domain(domain_text)
            dataset = load_csv(data_text, domain)
            document = load_marginal_config(document_text)
        return dataset, document

    def engineer(self, dataset: Dataset, document: MarginalConfigDocument) -> Tuple[_Engineered, List[List[str]]]:
        """Group-recode, then spend the 1-way budget on compression and bucketization."""
        config = self.config
        state = _Engineered(dataset=dataset)
        marginals = [list(names) for names in document.marginals]

        with stage("group_recode"):
            for names in document.group_recode:
                attrs = [state.dataset.domain.index_of(name) for name in names]
                state.dataset, spec, recode = group_recode(state.dataset, attrs)
                state.groups.append(recode)
                marginals = [_rename(schema, names, spec.name) for schema in marginals]

        overlap = set(document.compress) & set(document.bucketize)
        if overlap:
            raise PipelineError("compress", MarginalSynthError(f"attributes both compressed and bucketized: {sorted(overlap)}"))
        one_way_names = sorted(set(document.compress) | set(document.bucketize))
        if not one_way_names:
            return state, marginals

        with stage("compress"):
            domain = state.dataset.domain
            fraction = config.one_way_budget_fraction
            params = PrivacyParams(
                epsilon=config.epsilon * fraction,
                delta=config.delta * fraction,
                neighboring=config.neighboring,
            )
            plan = plan_noise(params, len(one_way_names))
            stage_record = OneWayStage(attributes=one_way_names, plan=plan)

            for name in one_way_names:
                attr = domain.index_of(name)
                exact = compute_marginal(state.dataset, MarginalSchema.from_domain(domain, [attr]))
                noisy = add_noise(exact, plan.per_marginal_std, plan.distribution, derive_seed(config.seed, "one_way", name))
                if name in document.compress:
                    theta = threshold(document.compress[name].rule, plan.per_marginal_std)
                    recode = compress_attribute(noisy, theta, attr, domain.attrs[attr])
                    state.recodes.append(recode)
                    stage_record.thresholds[name] = theta
                    stage_record.compressed_sizes[name] = recode.compressed_size
                else:
                    state.dataset, bucket = bucketize_attribute(state.dataset, attr, document.bucketize[name].width)
                    state.buckets.append((bucket, np.clip(noisy.counts, 0.0, None)))
                    stage_record.compressed_sizes[name] = bucket.bucket_count

            state.dataset = compress_dataset(state.dataset, state.recodes)
            state.one_way = stage_record
        return state, marginals

    def measure(
        self, dataset: Dataset, marginals: List[List[str]], spent: float = 0.0
    ) -> Tuple[List[MarginalTable], NoisePlan]:
        """Noisy, consistent, non-negative marginals from the budget left after the 1-way stage."""
        config = self.config
        with stage("marginals"):
            schemas: List[MarginalSchema] = []
            for names in marginals:
                schema = MarginalSchema.from_names(dataset.domain, names)
                if schema not in schemas:
                    schemas.append(schema)
            exact = [compute_marginal(dataset, schema) for schema in schemas]

        with stage("plan"):
            params = PrivacyParams(
                epsilon=config.epsilon * (1.0 - spent),
                delta=config.delta * (1.0 - spent),
                neighboring=config.neighboring,
            )
            plan = plan_noise(params, len(exact))
            logger.info(f"Noise plan strategy={plan.strategy} std={plan.per_marginal_std:.4f} k={plan.k}")

        with stage("noise"):
            noisy = [
                add_noise(table, plan.per_marginal_std, plan.distribution, self._noise_seed(table, dataset.domain))
                for table in exact
            ]

        with stage("consistency"):
            consistent = enforce_consistency(noisy)
            consistent = nonneg_consistent(consistent, max_rounds=config.nonneg_max_rounds)
        return consistent, plan

    def run(self) -> SynthesisOutputs:
        config = self.config
        dataset, document = self.load()
        state, marginals = self.engineer(dataset, document)
        spent = config.one_way_budget_fraction if state.one_way is not None else 0.0
        tables, plan = self.measure(state.dataset, marginals, spent)

        n_output = dataset.n if config.synthetic_records is None else config.synthetic_records
        with stage("synthesize"):
            result = synthesize(tables, state.dataset.domain, n_output, config.synthesis, state.recodes)

        with stage("restore"):
            synthetic = result.dataset
            for bucket, fine in state.buckets:
                synthetic = refill_bucketized(
                    synthetic, bucket, fine, derive_seed(config.seed, "refill", bucket.original.name)
                )
            for recode in reversed(state.groups):
                synthetic = recode.decode(synthetic)

        manifest = RunManifest(
            config=config,
            n_input=dataset.n,
            n_output=synthetic.n,
            one_way=state.one_way,
            plan=plan,
            marginals=[
                MarginalManifestEntry(
                    schema=table.schema.names(state.dataset.domain),
                    cells=table.schema.cells,
                    noise_std=plan.per_marginal_std,
                    seed=self._noise_seed(table, state.dataset.domain),
                )
                for table in tables
            ],
            flags=list(plan.notes) + list(result.flags),
        )
        return SynthesisOutputs(synthetic, tables, state.dataset.domain, manifest)

    def _noise_seed(self, table: MarginalTable, domain: Domain) -> int:
        return derive_seed(self.config.seed, "noise", *table.schema.names(domain))


def _rename(schema: List[str], grouped: List[str], combined: str) -> List[str]:
    renamed = []
    for name in schema:
        name = combined if name in grouped else name
        if name not in renamed:
            renamed.append(name)
    return renamed


def write_outputs(config: RunConfig, outputs: SynthesisOutputs) -> Dict[str, str]:
    """Write the synthetic CSV, the noisy-marginal archive and the run manifest."""
    paths = {
        "data": config.out,
        "archive": config.archive_path(),
        "manifest": config.manifest_path(),
    }
    write_text(paths["data"], dataset_to_csv(outputs.dataset))
    write_text(paths["archive"], dump_archive(outputs.tables, outputs.table_domain))
    manifest = outputs.manifest.model_dump(mode="json", by_alias=True)
    write_text(paths["manifest"], json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info(f"Wrote {outputs.dataset.n} synthetic records to {paths['data']}")
    return paths


def run_synthesis(config: RunConfig) -> SynthesisOutputs:
    """Run the whole pipeline for one RunConfig and write its three outputs."""
    outputs = SynthesisPipeline(config).run()
    write_outputs(config, outputs)
    return outputs
