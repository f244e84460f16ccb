from typing import Literal
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Privacy defaults
    epsilon: float = 1.0
    delta: float = 1e-8
    neighboring: Literal["unbounded", "bounded"] = "unbounded"
    one_way_budget_fraction: float = 0.1

    # Synthesis defaults
    alpha0: float = 0.2
    decay_kind: Literal["step", "exponential", "linear", "sqrt"] = "step"
    decay_rate: float = 0.5
    decay_step: int = 20
    iterations: int = 100
    convergence_tol: float = 1e-4
    patience: int = 5
    dup_ramp: float = 0.01

    # Consistency
    nonneg_max_rounds: int = 10
    nonneg_tolerance: float = 1e-6

    # Evaluation defaults
    trials: int = 300
    density_arity: int = 3

    # Run settings
    seed: int = 0
    log_level: str = "INFO"

    model_config = {
        "env_prefix": "MARGINAL_SYNTH_",
        "env_file": ".env",
        "env_file_encoding": "utf-8"
    }


settings = Settings()
