"""
Discrete-time forward-process parameters.
alpha_bar[t] is the cumulative product of (1 - beta_s); alpha_bar[0] = 1 closes the process at t = 0.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    Forward-process schedule indexed t = 0..T.
    sigma[0] is unused and kept at 0 so that sigma[t] indexes directly.
    """
    alpha_bar: np.ndarray
    sigma: np.ndarray
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    eta: float = 0.0
    kind: str = field(default="linear")

    def __post_init__(self):
        alpha_bar = np.array(self.alpha_bar, dtype=np.float64)
        sigma = np.array(self.sigma, dtype=np.float64)
        if alpha_bar.ndim != 1 or alpha_bar.shape[0] < 2:
            raise ConfigError("alpha_bar needs entries for t = 0..T with T >= 1")
        if sigma.shape != alpha_bar.shape:
            raise ConfigError("sigma must be indexed like alpha_bar")
        if alpha_bar[0] != 1.0:
            raise ConfigError("alpha_bar[0] must equal 1")
        if not np.all(np.diff(alpha_bar) < 0) or not np.all(alpha_bar > 0):
            raise ConfigError("alpha_bar must be strictly decreasing and positive")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ConfigError("sigma must be finite and nonnegative")
        alpha_bar.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "sigma", sigma)

    @property
    def T(self) -> int:  # pylint: disable=invalid-name
        """Total number of steps."""
        return self.alpha_bar.shape[0] - 1

    @property
    def is_deterministic(self) -> bool:
        """True when every sigma[t] is zero."""
        return not np.any(self.sigma)

    def descriptor(self) -> dict:
        """
        JSON-ready description of the schedule.
        Returns: dict - {kind, T, beta_start, beta_end, eta}
        """
        return {"kind": self.kind, "T": self.T, "beta_start": self.beta_start,
                "beta_end": self.beta_end, "eta": self.eta}


def make_linear_schedule(T: int = DEFAULT_T,  # pylint: disable=invalid-name
                         beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END,
                         eta: float = 0.0) -> NoiseSchedule:
    """
    Build a schedule with beta linearly interpolated from beta_start (t=1) to beta_end (t=T).
    Args: T - step count; beta_start, beta_end - endpoints in (0, 1); eta - stochasticity in [0, 1]
    Returns: NoiseSchedule - sigma is all zero unless eta > 0
    """
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {eta}")

    betas = np.linspace(beta_start, beta_end, int(T)) if T > 1 else np.array([beta_start])
    alpha_bar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))

    sigma = np.zeros_like(alpha_bar)
    if eta > 0.0:
        prev, cur = alpha_bar[:-1], alpha_bar[1:]
        sigma[1:] = eta * np.sqrt((1.0 - prev) / (1.0 - cur)) * np.sqrt(1.0 - cur / prev)
        logger.info("Stochastic schedule with eta=%g; trajectories are not usable for OLSS training",
                    eta)
    return NoiseSchedule(alpha_bar=alpha_bar, sigma=sigma, beta_start=float(beta_start),
                         beta_end=float(beta_end), eta=float(eta))


def schedule_from_descriptor(descriptor: dict) -> NoiseSchedule:
    """
    Rebuild a schedule from its descriptor.
    Args: descriptor - dict produced by NoiseSchedule.descriptor
    Returns: NoiseSchedule
    """
    if descriptor.get("kind") != "linear":
        raise ConfigError(f"unknown schedule kind {descriptor.get('kind')!r}")
    try:
        return make_linear_schedule(int(descriptor["T"]), float(descriptor["beta_start"]),
                                    float(descriptor["beta_end"]), float(descriptor.get("eta", 0.0)))
    except KeyError as error:
        raise ConfigError(f"schedule descriptor is missing {error.args[0]!r}") from error
