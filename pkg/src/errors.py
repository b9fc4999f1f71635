"""
Exception hierarchy for the scheduler synthesis package.
Every error derives from OlssError and from the closest builtin family.
"""

from typing import Optional

import numpy as np


class OlssError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(OlssError, ValueError):
    """Invalid or unknown configuration values."""


class DimensionMismatchError(OlssError, ValueError):
    """Vector or matrix dimensions do not agree."""


class NonFiniteError(OlssError, ArithmeticError):
    """
    A NaN or Inf entered a computation.
    Args: message - description; step - diffusion step where it appeared, if known
    """

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class RankDeficientError(OlssError, ArithmeticError):
    """
    QR found a negligible diagonal entry in R.
    Carries the factors so the caller can decide the fallback.
    """

    def __init__(self, column: int, q: np.ndarray, r: np.ndarray):
        super().__init__(f"matrix is rank deficient at column {column}")
        self.column = column
        self.q = q
        self.r = r


class ZeroVarianceError(OlssError, ValueError):
    """A vector handed to the correlation routine is constant."""

    def __init__(self, index: int):
        super().__init__(f"vector {index} has zero variance")
        self.index = index


class DegenerateCovarianceError(OlssError, ValueError):
    """Point cloud has no spread (all points identical)."""


class NotPositiveDefiniteError(OlssError, ValueError):
    """Covariance matrix is not symmetric positive definite."""


class InvalidDistributionError(OlssError, ValueError):
    """Mixture weights are not a probability distribution."""


class InvalidPathError(OlssError, ValueError):
    """Step path violates ordering or range rules."""


class UnderdeterminedSystemError(OlssError, ValueError):
    """Stacked least-squares system has fewer rows than unknowns."""


class StochasticTrajectoryError(OlssError, ValueError):
    """Trajectories from a schedule with sigma > 0 were fed to OLSS training."""


class SeedMismatchError(OlssError, ValueError):
    """A sampler run and a teacher trajectory do not share their initial noise."""


class ContainerError(OlssError):
    """Base class for trajectory container failures."""


class ManifestError(ContainerError, ValueError):
    """manifest.json is missing fields or malformed."""


class BlobSizeError(ContainerError, ValueError):
    """A blob file is truncated or otherwise has an impossible size."""

    def __init__(self, path: str, expected: int, actual: int):
        super().__init__(f"{path}: expected {expected} bytes, found {actual}")
        self.path = path


class BlobDimensionError(ContainerError, ValueError):
    """A blob file holds vectors of a different dimension than the manifest."""

    def __init__(self, path: str, manifest_d: int, blob_d: int):
        super().__init__(f"{path}: manifest says d={manifest_d} but blob holds d={blob_d}")
        self.path = path


class ContainerReadError(ContainerError, OSError):
    """A container file could not be read."""


class SchedulerFileError(OlssError, ValueError):
    """Scheduler JSON is malformed; names the offending field."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"scheduler file field '{field}': {reason}")
        self.field = field
