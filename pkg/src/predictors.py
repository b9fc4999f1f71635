"""
Analytic noise predictors with closed-form optimal output.
For data x_0 ~ N(mu, Sigma) and x_t = sqrt(a) x_0 + sqrt(1 - a) eps, joint Gaussianity gives
E[eps | x_t] = sqrt(1 - a) C^-1 (x_t - sqrt(a) mu) with C = a Sigma + (1 - a) I.
Mixtures weight each component's expectation by its posterior responsibility.
"""

import logging
from typing import List, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.special import logsumexp

from src.errors import (ConfigError, DimensionMismatchError, InvalidDistributionError,
                        NotPositiveDefiniteError)
from src.interfaces import INoisePredictor
from src.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class _GaussianComponent:
    """
    One Gaussian data component, diagonalised once as Sigma = U diag(lam) U^T.
    C_t is then U diag(a lam + 1 - a) U^T for every step.
    """

    def __init__(self, mean, covariance):
        mean = np.asarray(mean, dtype=np.float64)
        covariance = np.asarray(covariance, dtype=np.float64)
        if mean.ndim != 1 or covariance.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatchError(
                f"mean of shape {mean.shape} does not match covariance of shape {covariance.shape}")
        if not np.all(np.isfinite(covariance)) or not np.allclose(covariance, covariance.T,
                                                                  rtol=0.0, atol=1e-12):
            raise NotPositiveDefiniteError("covariance must be finite and symmetric")
        eigenvalues, eigenvectors = sla.eigh(covariance)
        if eigenvalues[0] <= 0.0:
            raise NotPositiveDefiniteError(
                f"covariance is not positive definite (smallest eigenvalue {eigenvalues[0]:.3g})")
        self.mean = mean
        self.covariance = covariance
        self._eigenvalues = eigenvalues
        self._eigenvectors = eigenvectors

    def _rotated(self, x: np.ndarray, alpha_bar: float):
        """Coordinates of x - sqrt(a) mu in the eigenbasis, plus the eigenvalues of C_t."""
        z = (x - np.sqrt(alpha_bar) * self.mean) @ self._eigenvectors
        scale = alpha_bar * self._eigenvalues + (1.0 - alpha_bar)
        return z, scale

    def noise(self, x: np.ndarray, alpha_bar: float) -> np.ndarray:
        """Conditional expectation of the forward noise given x."""
        z, scale = self._rotated(x, alpha_bar)
        return np.sqrt(1.0 - alpha_bar) * ((z / scale) @ self._eigenvectors.T)

    def noise_and_log_density(self, x: np.ndarray, alpha_bar: float):
        """Noise expectation and log marginal density of x at this step."""
        z, scale = self._rotated(x, alpha_bar)
        noise = np.sqrt(1.0 - alpha_bar) * ((z / scale) @ self._eigenvectors.T)
        quadratic = np.sum(z * z / scale, axis=-1)
        log_density = -0.5 * (quadratic + np.sum(np.log(scale)) + scale.shape[0] * LOG_2PI)
        return noise, log_density


class _AnalyticPredictor(INoisePredictor):
    """Shared step validation for predictors bound to a schedule."""

    def __init__(self, schedule: NoiseSchedule, dimension: int):
        self._schedule = schedule
        self._dimension = dimension

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def schedule(self) -> NoiseSchedule:
        """Schedule the predictor was built for."""
        return self._schedule

    def _check(self, x, t: int):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self._dimension:
            raise DimensionMismatchError(
                f"latent has dimension {x.shape[-1]}, predictor expects {self._dimension}")
        if not 0 <= t <= self._schedule.T:
            raise ConfigError(f"step {t} outside 0..{self._schedule.T}")
        return x, float(self._schedule.alpha_bar[t])


class ZeroPredictor(_AnalyticPredictor):
    """
    Degenerate predictor that always returns zero noise.
    Under it every step of the generation process is a pure rescaling of x_T.
    """

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        x, _ = self._check(x, t)
        return np.zeros_like(x)

    def descriptor(self) -> dict:
        return {"kind": "zero", "parameters": {"dimension": self._dimension}}


class GaussianPredictor(_AnalyticPredictor):
    """
    Exact noise predictor for Gaussian data N(mu, Sigma).
    """

    def __init__(self, mean, covariance, schedule: NoiseSchedule):
        component = _GaussianComponent(mean, covariance)
        super().__init__(schedule, component.mean.shape[0])
        self._component = component

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        x, alpha_bar = self._check(x, t)
        return self._component.noise(x, alpha_bar)

    def descriptor(self) -> dict:
        return {"kind": "gaussian",
                "parameters": {"mean": self._component.mean.tolist(),
                               "covariance": self._component.covariance.tolist()}}


class GmmPredictor(_AnalyticPredictor):
    """
    Exact noise predictor for a Gaussian mixture.
    Responsibilities use the step-t marginal of each component and log-sum-exp normalisation.
    """

    def __init__(self, weights: Sequence[float], means: Sequence, covariances: Sequence,
                 schedule: NoiseSchedule):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0 or np.any(weights <= 0.0) \
                or abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidDistributionError("mixture weights must be positive and sum to 1")
        if len(means) != weights.size or len(covariances) != weights.size:
            raise DimensionMismatchError(
                f"{weights.size} weights but {len(means)} means and {len(covariances)} covariances")
        components = [_GaussianComponent(m, c) for m, c in zip(means, covariances)]
        dimensions = {c.mean.shape[0] for c in components}
        if len(dimensions) != 1:
            raise DimensionMismatchError(f"components disagree on dimension: {sorted(dimensions)}")
        super().__init__(schedule, dimensions.pop())
        self._weights = weights
        self._log_weights = np.log(weights)
        self._components: List[_GaussianComponent] = components

    def responsibilities(self, x: np.ndarray, t: int) -> np.ndarray:
        """
        Posterior probability of each component given x at step t.
        Args: x - latent vector(s); t - step
        Returns: np.ndarray - shape (..., components), rows sum to 1
        """
        x, alpha_bar = self._check(x, t)
        log_density = np.stack([c.noise_and_log_density(x, alpha_bar)[1]
                                for c in self._components], axis=-1)
        weighted = log_density + self._log_weights
        return np.exp(weighted - logsumexp(weighted, axis=-1, keepdims=True))

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        x, alpha_bar = self._check(x, t)
        noises, log_densities = zip(*(c.noise_and_log_density(x, alpha_bar)
                                      for c in self._components))
        weighted = np.stack(log_densities, axis=-1) + self._log_weights
        gamma = np.exp(weighted - logsumexp(weighted, axis=-1, keepdims=True))
        return np.einsum("...k,k...d->...d", gamma, np.stack(noises))

    def descriptor(self) -> dict:
        return {"kind": "gmm",
                "parameters": {"weights": self._weights.tolist(),
                               "means": [c.mean.tolist() for c in self._components],
                               "covariances": [c.covariance.tolist() for c in self._components]}}


def gaussian_predictor(mu, sigma, schedule: NoiseSchedule) -> GaussianPredictor:
    """Construct the exact predictor for N(mu, Sigma) data."""
    return GaussianPredictor(mu, sigma, schedule)


def gmm_predictor(weights, mus, sigmas, schedule: NoiseSchedule) -> GmmPredictor:
    """Construct the exact predictor for Gaussian-mixture data."""
    return GmmPredictor(weights, mus, sigmas, schedule)


def predictor_from_descriptor(descriptor: dict, schedule: NoiseSchedule) -> INoisePredictor:
    """
    Rebuild a predictor from its serialized descriptor.
    Args: descriptor - {"kind", "parameters"}; schedule - schedule to bind
    Returns: INoisePredictor
    """
    kind = descriptor.get("kind")
    params = descriptor.get("parameters", {})
    try:
        if kind == "zero":
            return ZeroPredictor(schedule, int(params["dimension"]))
        if kind == "gaussian":
            return GaussianPredictor(params["mean"], params["covariance"], schedule)
        if kind == "gmm":
            return GmmPredictor(params["weights"], params["means"], params["covariances"], schedule)
    except KeyError as error:
        raise ConfigError(f"predictor descriptor is missing {error.args[0]!r}") from error
    raise ConfigError(f"unknown predictor kind {kind!r}")
