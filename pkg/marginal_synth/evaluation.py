"""
Utility scores of a synthetic dataset against the original.

Three metrics, each on a [0, 1e6] scale: k-way marginal density, random
range queries, and a per-city Gini index / gender pay gap comparison.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from marginal_synth.domain import Dataset
from marginal_synth.exceptions import DomainError, EvaluationError
from marginal_synth.marginal import MarginalSchema, cell_indices
from marginal_synth.models import EvaluationOptions, GiniOptions, ScoreReport
from marginal_synth.sampling import make_rng

logger = logging.getLogger(__name__)

MAX_SCORE = 1e6
RANGE_FLOOR = 1e-6
RANGE_NORMALIZER = math.log(1e3)
MAX_QUERY_RESAMPLES = 100_000
GINI_MSD_SCALE = 0.25


def _check_pair(orig: Dataset, synth: Dataset) -> None:
    if orig.domain != synth.domain:
        raise EvaluationError("original and synthetic datasets must share one domain")


def _normalized_marginal(dataset: Dataset, schema: MarginalSchema) -> np.ndarray:
    counts = np.bincount(cell_indices(dataset.records, schema), minlength=schema.cells)
    return counts / dataset.n


def density_score(orig: Dataset, synth: Dataset, trials: int = 300, arity: int = 3, seed: int = 0) -> float:
    """
    Mean L1 distance over random normalized `arity`-way marginals, scaled to [0, 1e6].

    Score = 1e6 * (1 - s / 2) where s is the mean penalty. Schemas are drawn
    from the domain only, so one seed yields the same schemas for any data.
    """
    _check_pair(orig, synth)
    if orig.n == 0 or synth.n == 0:
        raise EvaluationError("density score needs non-empty datasets")
    domain = orig.domain
    if domain.d < arity:
        raise EvaluationError(f"domain has {domain.d} attributes, fewer than arity {arity}")
    if trials < 1:
        raise EvaluationError(f"trials must be at least 1, got {trials}")

    rng = make_rng(seed, "density")
    penalties = []
    for _ in range(trials):
        attrs = rng.choice(domain.d, size=arity, replace=False)
        schema = MarginalSchema.from_domain(domain, attrs)
        penalty = np.abs(_normalized_marginal(orig, schema) - _normalized_marginal(synth, schema)).sum()
        penalties.append(float(penalty))

    s = float(np.mean(penalties))
    return float(min(MAX_SCORE, max(0.0, MAX_SCORE * (1.0 - s / 2.0))))


@dataclass(frozen=True)
class RangeQuery:
    """Per selected attribute, the allowed value indices (a subset or a contiguous bin range)."""

    conditions: Tuple[Tuple[int, Tuple[int, ...]], ...]

    def __post_init__(self):
        if not self.conditions:
            raise EvaluationError("a range query needs at least one attribute")
        for attr, allowed in self.conditions:
            if not allowed:
                raise EvaluationError(f"empty condition on attribute {attr}")

    def mask(self, dataset: Dataset) -> np.ndarray:
        keep = np.ones(dataset.n, dtype=bool)
        for attr, allowed in self.conditions:
            keep &= np.isin(dataset.column(attr), allowed)
        return keep

    def frequency(self, dataset: Dataset) -> float:
        if dataset.n == 0:
            return 0.0
        return float(self.mask(dataset).sum()) / dataset.n


def _uniform_interval(size: int, rng: np.random.Generator) -> Tuple[int, ...]:
    pick = int(rng.integers(size * (size + 1) // 2))
    for lo in range(size):
        span = size - lo
        if pick < span:
            return tuple(range(lo, lo + pick + 1))
        pick -= span
    raise AssertionError("interval index out of range")


def _uniform_subset(size: int, rng: np.random.Generator) -> Tuple[int, ...]:
    while True:
        chosen = np.flatnonzero(rng.random(size) < 0.5)
        if chosen.size:
            return tuple(int(v) for v in chosen)


def sample_range_query(dataset: Dataset, rng: np.random.Generator) -> RangeQuery:
    """Draw a query from the domain; each attribute is selected with probability 1/3."""
    domain = dataset.domain
    while True:
        selected = np.flatnonzero(rng.random(domain.d) < 1.0 / 3.0)
        if selected.size:
            break

    conditions = []
    for attr in selected:
        spec = domain.attrs[attr]
        if spec.kind == "numeric":
            allowed = _uniform_interval(spec.domain_size, rng)
        else:
            allowed = _uniform_subset(spec.domain_size, rng)
        conditions.append((int(attr), allowed))
    return RangeQuery(tuple(conditions))


def query_log_ratio(f_orig: float, f_synth: float) -> float:
    """ln(max(f_synth, 1e-6) / f_orig); f_orig must be positive."""
    if f_orig <= 0:
        raise EvaluationError(f"original frequency must be positive, got {f_orig}")
    return math.log(max(f_synth, RANGE_FLOOR) / f_orig)


def range_score_from_log_ratios(ratios: Sequence[float]) -> float:
    if len(ratios) == 0:
        raise EvaluationError("no range queries to score")
    rms = math.sqrt(float(np.mean(np.square(ratios))))
    return MAX_SCORE * max(0.0, 1.0 - rms / RANGE_NORMALIZER)


def range_query_score(orig: Dataset, synth: Dataset, trials: int = 300, seed: int = 0) -> float:
    """
    Log-ratio accuracy of random range queries, scaled to [0, 1e6].

    Every query is redrawn until at least one original record matches it.

    Raises:
        EvaluationError: If orig is empty or a query cannot be supported
    """
    _check_pair(orig, synth)
    if orig.n == 0:
        raise EvaluationError("range query score needs a non-empty original dataset")
    if trials < 1:
        raise EvaluationError(f"trials must be at least 1, got {trials}")

    rng = make_rng(seed, "range")
    ratios = []
    for _ in range(trials):
        for _attempt in range(MAX_QUERY_RESAMPLES):
            query = sample_range_query(orig, rng)
            f_orig = query.frequency(orig)
            if f_orig > 0:
                break
        else:
            raise EvaluationError(f"no supported range query after {MAX_QUERY_RESAMPLES} draws")
        ratios.append(query_log_ratio(f_orig, query.frequency(synth)))
    return range_score_from_log_ratios(ratios)


def gini_index(incomes: np.ndarray) -> float:
    """Sum of |x_i - x_j| over all pairs divided by 2 m^2 mean(x)."""
    x = np.sort(np.asarray(incomes, dtype=np.float64))
    m = x.size
    total = x.sum()
    if m == 0 or total == 0:
        return 0.0
    ranks = np.arange(1, m + 1)
    return float(2.0 * np.dot(ranks, x) / (m * total) - (m + 1.0) / m)


@dataclass
class GiniGapResult:
    score: float
    gini_error: Optional[float]
    rank_error: Optional[float]
    skipped_cities: int
    gini: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    pay_gap: Dict[str, Tuple[float, float]] = field(default_factory=dict)


def _resolve(dataset: Dataset, options: GiniOptions) -> Tuple[int, int, int, np.ndarray, int, int]:
    domain = dataset.domain
    try:
        city = domain.index_of(options.city_attr)
        sex = domain.index_of(options.sex_attr)
        income = domain.index_of(options.income_attr)
    except DomainError as e:
        raise EvaluationError(str(e)) from e
    income_spec = domain.attrs[income]
    if income_spec.kind != "numeric":
        raise EvaluationError(f"income attribute '{income_spec.name}' must be numeric")
    sex_labels = domain.attrs[sex].labels
    for label in (options.male_label, options.female_label):
        if label not in sex_labels:
            raise EvaluationError(f"sex attribute '{options.sex_attr}' has no label '{label}'")
    return (
        city,
        sex,
        income,
        income_spec.midpoints(),
        sex_labels.index(options.male_label),
        sex_labels.index(options.female_label),
    )


def gini_gender_score(orig: Dataset, synth: Dataset, options: GiniOptions) -> GiniGapResult:
    """
    Compare per-city income Gini indices and gender pay-gap rankings.

    Cities are the city values present in the original data. Component 1
    is the mean-square deviation of per-city Gini over 0.25; component 2
    is the mean-square deviation of pay-gap ranks over (C - 1)^2. Both are
    clamped to [0, 1] and the score is 1e6 * (1 - their mean). A city with
    fewer than 2 records in either dataset leaves component 1; a city
    missing either sex in either dataset leaves component 2.
    """
    _check_pair(orig, synth)
    city, sex, income, midpoints, male, female = _resolve(orig, options)
    labels = orig.domain.attrs[city].labels

    gini: Dict[str, Tuple[float, float]] = {}
    gaps: Dict[str, Tuple[float, float]] = {}
    skipped = set()
    for value in np.unique(orig.column(city)):
        name = labels[value]
        per_dataset = []
        for dataset in (orig, synth):
            rows = dataset.column(city) == value
            per_dataset.append((midpoints[dataset.column(income)[rows]], dataset.column(sex)[rows]))

        if all(x.size >= 2 for x, _ in per_dataset):
            gini[name] = tuple(gini_index(x) for x, _ in per_dataset)
        else:
            skipped.add(name)

        if all((s == male).any() and (s == female).any() for _, s in per_dataset):
            gaps[name] = tuple(float(x[s == male].mean() - x[s == female].mean()) for x, s in per_dataset)
        else:
            skipped.add(name)

    if skipped:
        logger.warning(f"Skipped {len(skipped)} cities with too few records or a missing sex: {sorted(skipped)}")

    errors = []
    gini_error = rank_error = None
    if gini:
        pairs = np.array(list(gini.values()))
        gini_error = min(1.0, float(np.mean((pairs[:, 0] - pairs[:, 1]) ** 2)) / GINI_MSD_SCALE)
        errors.append(gini_error)
    if gaps:
        pairs = np.array(list(gaps.values()))
        cities = pairs.shape[0]
        if cities >= 2:
            ranks_orig = rankdata(pairs[:, 0], method="average")
            ranks_synth = rankdata(pairs[:, 1], method="average")
            rank_error = min(1.0, float(np.mean((ranks_orig - ranks_synth) ** 2)) / (cities - 1) ** 2)
        else:
            rank_error = 0.0
        errors.append(rank_error)
    if not errors:
        raise EvaluationError("no city has enough records for the Gini or pay-gap comparison")

    score = MAX_SCORE * max(0.0, 1.0 - float(np.mean(errors)))
    return GiniGapResult(score, gini_error, rank_error, len(skipped), gini, gaps)


def evaluate(orig: Dataset, synth: Dataset, options: EvaluationOptions) -> ScoreReport:
    """Run every configured metric and collect them in a ScoreReport."""
    density = density_score(orig, synth, options.trials, options.arity, options.seed)
    ranged = range_query_score(orig, synth, options.trials, options.seed)
    gini_gap = None
    skipped = 0
    if options.gini is not None:
        result = gini_gender_score(orig, synth, options.gini)
        gini_gap, skipped = result.score, result.skipped_cities
    logger.info(f"Scores density={density:.1f} range={ranged:.1f} gini_gap={gini_gap}")
    return ScoreReport(
        density=density,
        range=ranged,
        gini_gap=gini_gap,
        trials=options.trials,
        seed=options.seed,
        skipped_cities=skipped,
    )
