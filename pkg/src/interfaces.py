"""
This module defines the core interfaces for the scheduler system.
Each interface establishes a contract that implementing classes must fulfil.
"""

from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np


class INoisePredictor(ABC):
    """
    Interface for noise predictors (the role a trained diffusion model plays).
    Implementations must be deterministic and safe to call from several threads.
    """

    @property
    @abstractmethod
    def dimension(self) -> int:
        """
        Latent dimension the predictor accepts.
        Returns: int - d
        """

    @abstractmethod
    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        """
        Evaluate the noise prediction e_t for a latent state.
        Args: x - latent vector(s), last axis of length d; t - diffusion step
        Returns: np.ndarray - predicted noise, same shape as x
        """

    @abstractmethod
    def descriptor(self) -> dict:
        """
        Describe the predictor for serialization.
        Returns: dict - {"kind": ..., "parameters": {...}}
        """

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.predict(x, t)


class IResidualFunction(ABC):
    """
    Interface for the path-search error measure d(t(1), ..., t(i+1)).
    """

    @property
    @abstractmethod
    def total_steps(self) -> int:
        """
        Number of steps T of the underlying process.
        Returns: int - T
        """

    @abstractmethod
    def residual(self, prefix: Sequence[int], target: int) -> float:
        """
        Error of predicting the state at target from the basis built on prefix.
        Args: prefix - selected steps t(1) > ... > t(i); target - candidate t(i+1)
        Returns: float - nonnegative, finite residual
        """

    def __call__(self, prefix: Sequence[int], target: int) -> float:
        return self.residual(prefix, target)
