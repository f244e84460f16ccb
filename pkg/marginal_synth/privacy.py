"""
Noise mechanisms, sensitivities, composition and the noise planner.

The planner evaluates five routes for releasing k marginals under one
(epsilon, delta) budget and keeps the one with the smallest per-cell noise:

    lap_basic   Laplace, budget split evenly (basic composition)
    lap_adv     Laplace, advanced composition
    lap_zcdp    Laplace, zCDP composition
    gauss_adv   Gaussian, advanced composition
    gauss_zcdp  Gaussian, zCDP composition
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

from scipy.optimize import brentq

from marginal_synth.exceptions import PrivacyError
from marginal_synth.marginal import MarginalTable
from marginal_synth.models import STRATEGIES, NoisePlan, PrivacyParams
from marginal_synth.sampling import make_rng

logger = logging.getLogger(__name__)

ROOT_RTOL = 1e-12
MAX_ROOT_STEPS = 8


@dataclass(frozen=True)
class Sensitivity:
    l1: float
    l2: float


def sensitivity(neighboring: str) -> Sensitivity:
    """Sensitivity of one marginal: (1, 1) unbounded, (2, sqrt 2) bounded."""
    if neighboring == "unbounded":
        return Sensitivity(l1=1.0, l2=1.0)
    if neighboring == "bounded":
        return Sensitivity(l1=2.0, l2=math.sqrt(2.0))
    raise PrivacyError(f"unknown neighboring mode '{neighboring}'")


@dataclass(frozen=True)
class ZcdpBudget:
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise PrivacyError(f"rho must be positive, got {self.rho}")

    def compose(self, other: "ZcdpBudget") -> "ZcdpBudget":
        return ZcdpBudget(self.rho + other.rho)

    __add__ = compose

    def to_dp(self, delta: float) -> float:
        """Epsilon of the (epsilon, delta)-DP guarantee implied by rho-zCDP."""
        _check_delta(delta)
        return self.rho + 2.0 * math.sqrt(self.rho * math.log(1.0 / delta))


def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise PrivacyError(f"delta must lie in (0, 1), got {delta}")


def laplace_std(eps_per: float, gs: float) -> float:
    """Standard deviation of Laplace noise with scale gs / eps_per."""
    if eps_per <= 0 or gs <= 0:
        raise PrivacyError(f"laplace_std needs positive inputs, got eps={eps_per}, gs={gs}")
    return math.sqrt(2.0) * gs / eps_per


def gaussian_sigma(eps: float, delta: float, l2: float) -> float:
    """Classic Gaussian mechanism: sigma = l2 * sqrt(2 ln(1.25 / delta)) / eps."""
    _check_delta(delta)
    if eps <= 0 or l2 <= 0:
        raise PrivacyError(f"gaussian_sigma needs positive eps and l2, got eps={eps}, l2={l2}")
    return l2 * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


def zcdp_from_dp(eps: float, delta: float) -> ZcdpBudget:
    """The rho with rho + 2 sqrt(rho ln(1/delta)) == eps."""
    if eps <= 0:
        raise PrivacyError(f"epsilon must be positive, got {eps}")
    _check_delta(delta)
    log_term = math.log(1.0 / delta)
    return ZcdpBudget((math.sqrt(log_term + eps) - math.sqrt(log_term)) ** 2)


def advanced_composition_eps(eps0: float, delta_prime: float, k: int) -> float:
    """Total epsilon of k eps0-DP mechanisms under advanced composition."""
    return eps0 * math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) + k * eps0 * math.expm1(eps0)


def advanced_eps_per(eps: float, delta_prime: float, k: int) -> float:
    """
    Largest per-mechanism epsilon whose k-fold advanced composition fits in eps.

    Args:
        eps: Total epsilon budget
        delta_prime: Slack delta of the composition theorem
        k: Number of composed mechanisms

    Returns:
        eps0 > 0, found by Brent's method to 1e-12 relative tolerance
    """
    if eps <= 0:
        raise PrivacyError(f"epsilon must be positive, got {eps}")
    _check_delta(delta_prime)
    if k < 1:
        raise PrivacyError(f"k must be at least 1, got {k}")

    def excess(eps0: float) -> float:
        return advanced_composition_eps(eps0, delta_prime, k) - eps

    upper = eps
    while excess(upper) < 0:
        upper *= 2.0
    root = brentq(excess, 0.0, upper, xtol=1e-300, rtol=ROOT_RTOL)
    # The root estimate may sit a tolerance above the true root; step below it so the composed budget fits.
    step = 2.0 * ROOT_RTOL * root
    for _ in range(MAX_ROOT_STEPS):
        if excess(root) <= 0:
            return root
        root -= step
    raise PrivacyError(f"could not fit {k} mechanisms into epsilon {eps}")


def _strategy_std(strategy: str, params: PrivacyParams, k: int) -> Optional[Dict[str, float]]:
    """Per-marginal std and budget for one strategy, or None when it needs delta > 0."""
    sens = sensitivity(params.neighboring)
    eps, delta = params.epsilon, params.delta

    if strategy == "lap_basic":
        eps0 = eps / k
        return {"std": laplace_std(eps0, sens.l1), "epsilon": eps0, "delta": 0.0}
    if delta <= 0:
        return None

    if strategy == "lap_adv":
        # Pure mechanisms contribute no k * delta0 term, so all of delta is slack.
        eps0 = advanced_eps_per(eps, delta, k)
        return {"std": laplace_std(eps0, sens.l1), "epsilon": eps0, "delta": 0.0}
    if strategy == "gauss_adv":
        delta0 = delta / (2.0 * k)
        eps0 = advanced_eps_per(eps, delta / 2.0, k)
        return {"std": gaussian_sigma(eps0, delta0, sens.l2), "epsilon": eps0, "delta": delta0}

    rho_i = zcdp_from_dp(eps, delta).rho / k
    if strategy == "lap_zcdp":
        # Laplace with scale gs * x is 1 / (2 x^2)-zCDP.
        scale = sens.l1 * math.sqrt(1.0 / (2.0 * rho_i))
        return {"std": math.sqrt(2.0) * scale, "rho": rho_i}
    if strategy == "gauss_zcdp":
        return {"std": sens.l2 * math.sqrt(1.0 / (2.0 * rho_i)), "rho": rho_i}
    raise PrivacyError(f"unknown strategy '{strategy}'")


def strategy_budgets(params: PrivacyParams, k: int) -> Dict[str, Optional[Dict[str, float]]]:
    """Per-marginal std and budget of every strategy; None marks a disabled one."""
    if k < 1:
        raise PrivacyError(f"k must be at least 1, got {k}")
    return {strategy: _strategy_std(strategy, params, k) for strategy in STRATEGIES}


def all_strategy_stds(params: PrivacyParams, k: int) -> Dict[str, Optional[float]]:
    """Per-marginal std of every strategy; None marks a disabled one."""
    budgets = strategy_budgets(params, k)
    return {s: None if b is None else b["std"] for s, b in budgets.items()}


def plan_noise(
    params: PrivacyParams, k: int, budgets: Optional[Dict[str, Optional[Dict[str, float]]]] = None
) -> NoisePlan:
    """
    Choose the composition route with the smallest per-marginal noise.

    Args:
        params: Total (epsilon, delta) budget and neighboring mode
        k: Number of marginals to release
        budgets: Output of strategy_budgets(params, k), when already computed

    Returns:
        NoisePlan for the minimum-std strategy, with all five stds attached
    """
    if budgets is None:
        budgets = strategy_budgets(params, k)
    stds = {s: None if b is None else b["std"] for s, b in budgets.items()}
    enabled = {s: v for s, v in stds.items() if v is not None}
    if not enabled:
        raise PrivacyError("no noise strategy is available for these parameters")

    # Ties resolve to the earlier strategy in STRATEGIES order.
    strategy = min(enabled, key=lambda s: (enabled[s], STRATEGIES.index(s)))
    budget = budgets[strategy]

    notes = []
    if params.delta <= 0:
        notes.append("delta is 0: only lap_basic is available")
    if strategy == "gauss_adv" and budget["epsilon"] >= 1:
        notes.append(
            f"gauss_adv per-marginal epsilon {budget['epsilon']:.4f} >= 1 lies outside the Gaussian guarantee"
        )
    for note in notes:
        logger.warning(note)

    return NoisePlan(
        strategy=strategy,
        distribution="gaussian" if strategy.startswith("gauss") else "laplace",
        per_marginal_std=budget["std"],
        k=k,
        stds=stds,
        per_marginal_epsilon=budget.get("epsilon"),
        per_marginal_delta=budget.get("delta"),
        per_marginal_rho=budget.get("rho"),
        notes=notes,
    )


def crossover_k(params: PrivacyParams, k_max: int = 100) -> Optional[int]:
    """Smallest k where gauss_zcdp std drops below lap_basic std."""
    for k in range(1, k_max + 1):
        gauss = _strategy_std("gauss_zcdp", params, k)
        if gauss is not None and gauss["std"] < _strategy_std("lap_basic", params, k)["std"]:
            return k
    return None


def add_noise(table: MarginalTable, std: float, distribution: str, seed: int) -> MarginalTable:
    """
    Add i.i.d. noise with the given standard deviation to every cell.

    Laplace draws use scale std / sqrt(2); Gaussian draws use sigma = std.
    The returned table records std as its noise_std.
    """
    if std < 0:
        raise PrivacyError(f"noise std must be non-negative, got {std}")
    if std == 0:
        return MarginalTable(table.schema, table.counts, 0.0)

    rng = make_rng(seed)
    size = table.counts.size
    if distribution == "laplace":
        noise = rng.laplace(0.0, std / math.sqrt(2.0), size=size)
    elif distribution == "gaussian":
        noise = rng.normal(0.0, std, size=size)
    else:
        raise PrivacyError(f"unknown noise distribution '{distribution}'")
    return MarginalTable(table.schema, table.counts + noise, float(std))
