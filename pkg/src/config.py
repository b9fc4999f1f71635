"""
Run configuration shared by every CLI command.
Values come from an optional JSON file, then command-line flags override them.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.errors import ConfigError
from src.interfaces import INoisePredictor
from src.predictors import GaussianPredictor, GmmPredictor, ZeroPredictor
from src.schedule import (DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, NoiseSchedule,
                          make_linear_schedule)

logger = logging.getLogger(__name__)

PREDICTOR_KINDS = ("gmm", "gaussian", "zero")
PREDICTOR_KEYS = {"kind", "components", "mean_norm", "variance", "seed"}


def default_predictor() -> dict:
    """Three-component mixture in d dimensions with seeded means of norm 3."""
    return {"kind": "gmm", "components": 3, "mean_norm": 3.0, "variance": 0.5, "seed": 0}


@dataclass(frozen=True)
class RunConfig:  # pylint: disable=too-many-instance-attributes
    """Effective configuration of one CLI invocation."""
    T: int = DEFAULT_T  # pylint: disable=invalid-name
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    eta: float = 0.0
    d: int = 16  # pylint: disable=invalid-name
    K: int = 32  # pylint: disable=invalid-name
    base_seed: int = 0
    predictor: dict = field(default_factory=default_predictor)
    n: int = 5
    mode: str = "optimized"
    epsilon: float = 1e-4
    eval_seeds: List[int] = field(default_factory=lambda: list(range(10_000, 10_032)))
    compare_steps: List[int] = field(default_factory=lambda: [5, 10])
    sweep_steps: List[int] = field(default_factory=lambda: [2, 5, 10, 20, 50])
    sweep_repeats: int = 1
    heatmap_stride: int = 25
    threads: int = 1
    out: str = "runs"

    def __post_init__(self):
        checks = [
            (self.T >= 1, f"T must be >= 1, got {self.T}"),
            (0.0 < self.beta_start <= self.beta_end < 1.0,
             f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}"),
            (0.0 <= self.eta <= 1.0, f"eta must lie in [0, 1], got {self.eta}"),
            (self.d >= 1, f"d must be >= 1, got {self.d}"),
            (self.K >= 1, f"K must be >= 1, got {self.K}"),
            (1 <= self.n <= self.T, f"need 1 <= n <= T, got n={self.n}"),
            (self.mode in ("uniform", "optimized"), f"unknown mode {self.mode!r}"),
            (self.epsilon > 0.0, f"epsilon must be positive, got {self.epsilon}"),
            (len(self.eval_seeds) >= 1, "eval_seeds must not be empty"),
            (all(1 <= n <= self.T for n in self.compare_steps),
             f"compare_steps must lie in [1, T={self.T}], got {self.compare_steps}"),
            (all(1 <= n <= self.T for n in self.sweep_steps),
             f"sweep_steps must lie in [1, T={self.T}], got {self.sweep_steps}"),
            (self.sweep_repeats >= 1, f"sweep_repeats must be >= 1, got {self.sweep_repeats}"),
            (self.heatmap_stride >= 1, f"heatmap_stride must be >= 1, got {self.heatmap_stride}"),
            (self.threads >= 1, f"threads must be >= 1, got {self.threads}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        _check_predictor_block(self.predictor)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with every non-None override applied."""
        values = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(values) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **values)

    def to_dict(self) -> dict:
        """JSON-ready copy."""
        return asdict(self)

    def schedule(self) -> NoiseSchedule:
        """Noise schedule described by this config."""
        return make_linear_schedule(self.T, self.beta_start, self.beta_end, self.eta)


def _check_predictor_block(block: dict) -> None:
    if not isinstance(block, dict):
        raise ConfigError("predictor must be a JSON object")
    unknown = set(block) - PREDICTOR_KEYS
    if unknown:
        raise ConfigError(f"unknown predictor keys: {sorted(unknown)}")
    if block.get("kind") not in PREDICTOR_KINDS:
        raise ConfigError(f"predictor kind must be one of {PREDICTOR_KINDS}, got {block.get('kind')!r}")
    if int(block.get("components", 1)) < 1:
        raise ConfigError("predictor components must be >= 1")
    if float(block.get("variance", 1.0)) <= 0.0:
        raise ConfigError("predictor variance must be positive")


def load_config(path: Optional[str]) -> RunConfig:
    """
    Read a UTF-8 JSON config; a missing path gives the defaults.
    Args: path - config file or None
    Returns: RunConfig
    """
    if path is None:
        return RunConfig()
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise ConfigError(f"{path} is not valid JSON: {error}") from error
    except OSError as error:
        raise ConfigError(f"cannot read config {path}: {error}") from error
    if not isinstance(document, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(document) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if "predictor" in document and isinstance(document["predictor"], dict):
        document["predictor"] = {**default_predictor(), **document["predictor"]}
    try:
        return RunConfig(**document)
    except TypeError as error:
        raise ConfigError(str(error)) from error


def build_predictor(config: RunConfig, schedule: NoiseSchedule) -> INoisePredictor:
    """
    Turn the predictor block into a predictor with explicit parameters.
    Means are seeded standard normal draws rescaled to mean_norm; covariances are variance * I.
    """
    block = {**default_predictor(), **config.predictor}
    kind, d = block["kind"], config.d
    if kind == "zero":
        return ZeroPredictor(schedule, d)
    rng = np.random.default_rng(int(block["seed"]))
    components = 1 if kind == "gaussian" else int(block["components"])
    means = rng.standard_normal((components, d))
    means *= float(block["mean_norm"]) / np.linalg.norm(means, axis=1, keepdims=True)
    covariance = float(block["variance"]) * np.eye(d)
    if kind == "gaussian":
        return GaussianPredictor(means[0], covariance, schedule)
    return GmmPredictor(np.full(components, 1.0 / components), list(means),
                        [covariance] * components, schedule)
