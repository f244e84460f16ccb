from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional

from marginal_synth.config import settings


Strategy = Literal["lap_basic", "lap_adv", "lap_zcdp", "gauss_adv", "gauss_zcdp"]
STRATEGIES: List[str] = ["lap_basic", "lap_adv", "lap_zcdp", "gauss_adv", "gauss_zcdp"]


class PrivacyParams(BaseModel):
    epsilon: float = Field(gt=0)
    delta: float = Field(ge=0, lt=1)
    neighboring: Literal["unbounded", "bounded"] = "unbounded"


class NoisePlan(BaseModel):
    strategy: Strategy
    distribution: Literal["laplace", "gaussian"]
    per_marginal_std: float = Field(gt=0)
    k: int = Field(ge=1)
    stds: Dict[str, Optional[float]]
    per_marginal_epsilon: Optional[float] = None
    per_marginal_delta: Optional[float] = None
    per_marginal_rho: Optional[float] = None
    notes: List[str] = []


class DecaySchedule(BaseModel):
    kind: Literal["step", "exponential", "linear", "sqrt"] = "step"
    rate: float = Field(default=0.5, ge=0)
    step: int = Field(default=20, ge=1)


class SynthesisConfig(BaseModel):
    alpha0: float = Field(default=settings.alpha0, gt=0)
    decay: DecaySchedule = DecaySchedule(
        kind=settings.decay_kind, rate=settings.decay_rate, step=settings.decay_step
    )
    iterations: int = Field(default=settings.iterations, ge=1)
    dup_ramp: float = Field(default=settings.dup_ramp, ge=0, le=1)
    seed: int = settings.seed
    convergence_tol: float = Field(default=settings.convergence_tol, ge=0)
    patience: int = Field(default=settings.patience, ge=1)
    update_method: Literal["gum", "mcf"] = "gum"
    record_update: Literal["mixed", "replace", "duplicate"] = "mixed"


class NoisyMarginalRecord(BaseModel):
    schema_: List[str] = Field(alias="schema")
    sizes: List[int]
    counts: List[float]
    noise_std: Optional[float] = None

    model_config = {"populate_by_name": True}


class MarginalArchive(BaseModel):
    layout: str
    marginals: List[NoisyMarginalRecord]


class CompressRule(BaseModel):
    rule: Literal["fire", "filter_combine"]


class BucketizeRule(BaseModel):
    width: int = Field(ge=2)


class MarginalConfigDocument(BaseModel):
    marginals: List[List[str]]
    compress: Dict[str, CompressRule] = {}
    group_recode: List[List[str]] = []
    bucketize: Dict[str, BucketizeRule] = {}

    @field_validator("marginals")
    @classmethod
    def _non_empty(cls, marginals):
        if not marginals:
            raise ValueError("at least one marginal is required")
        for names in marginals:
            if not names:
                raise ValueError("empty marginal schema")
            if len(set(names)) != len(names):
                raise ValueError(f"repeated attribute in marginal {names}")
        return marginals

    @field_validator("group_recode")
    @classmethod
    def _groups_have_two(cls, groups):
        for group in groups:
            if len(group) < 2:
                raise ValueError(f"group_recode needs at least 2 attributes, got {group}")
        return groups


class GiniOptions(BaseModel):
    city_attr: str
    sex_attr: str
    income_attr: str
    male_label: str = "male"
    female_label: str = "female"


class EvaluationOptions(BaseModel):
    trials: int = Field(default=settings.trials, ge=1)
    arity: int = Field(default=settings.density_arity, ge=1)
    seed: int = settings.seed
    gini: Optional[GiniOptions] = None


class ScoreReport(BaseModel):
    density: float = Field(ge=0, le=1e6)
    range: float = Field(ge=0, le=1e6)
    gini_gap: Optional[float] = Field(default=None, ge=0, le=1e6)
    trials: int
    seed: int
    skipped_cities: int = 0


class RunConfig(BaseModel):
    data: Optional[str] = None
    domain: Optional[str] = None
    config: Optional[str] = None
    out: str = "synthetic.csv"
    archive: Optional[str] = None
    manifest: Optional[str] = None

    epsilon: float = Field(default=settings.epsilon, gt=0)
    delta: float = Field(default=settings.delta, ge=0, lt=1)
    neighboring: Literal["unbounded", "bounded"] = settings.neighboring
    one_way_budget_fraction: float = Field(default=settings.one_way_budget_fraction, gt=0, lt=1)
    synthetic_records: Optional[int] = Field(default=None, ge=0)

    synthesis: SynthesisConfig = SynthesisConfig()
    evaluation: EvaluationOptions = EvaluationOptions()
    nonneg_max_rounds: int = Field(default=settings.nonneg_max_rounds, ge=1)
    seed: int = settings.seed

    @model_validator(mode="after")
    def _share_seed(self) -> "RunConfig":
        # One seed drives every stage.
        self.synthesis = self.synthesis.model_copy(update={"seed": self.seed})
        self.evaluation = self.evaluation.model_copy(update={"seed": self.seed})
        return self

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(epsilon=self.epsilon, delta=self.delta, neighboring=self.neighboring)

    def archive_path(self) -> str:
        return self.archive or f"{self.out}.marginals.json"

    def manifest_path(self) -> str:
        return self.manifest or f"{self.out}.manifest.json"


class MarginalManifestEntry(BaseModel):
    schema_: List[str] = Field(alias="schema")
    cells: int
    noise_std: float
    seed: int

    model_config = {"populate_by_name": True}


class OneWayStage(BaseModel):
    attributes: List[str]
    plan: NoisePlan
    thresholds: Dict[str, float] = {}
    compressed_sizes: Dict[str, int] = {}


class RunManifest(BaseModel):
    config: RunConfig
    n_input: int
    n_output: int
    one_way: Optional[OneWayStage] = None
    plan: NoisePlan
    marginals: List[MarginalManifestEntry]
    flags: List[str] = []
