"""
The full T-step generation process and the on-disk trajectory container.
States are stored in descending-t order: row r of a state array is x_{T-r}, row r of an
output array is e_{T-r}.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.errors import (BlobDimensionError, BlobSizeError, ContainerReadError,
                        DimensionMismatchError, ManifestError, NonFiniteError)
from src.interfaces import INoisePredictor
from src.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
MANIFEST_FIELDS = ("format_version", "T", "d", "K", "base_seed", "schedule", "predictor")


@dataclass(frozen=True, eq=False)
class LatentState:
    """Latent vector x_t at step t."""
    t: int
    x: np.ndarray


@dataclass(frozen=True, eq=False)
class ModelOutput:
    """Model output e_t = eps(x_t, t) at step t."""
    t: int
    e: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    One recorded teacher run.
    states has T+1 rows (x_T..x_0), outputs has T rows (e_T..e_1).
    """
    states: np.ndarray
    outputs: np.ndarray
    seed: Optional[int] = None

    @property
    def T(self) -> int:  # pylint: disable=invalid-name
        """Number of steps."""
        return self.outputs.shape[0]

    @property
    def d(self) -> int:  # pylint: disable=invalid-name
        """Latent dimension."""
        return self.states.shape[1]

    def state(self, t: int) -> np.ndarray:
        """x_t for 0 <= t <= T."""
        return self.states[self.T - t]

    def output(self, t: int) -> np.ndarray:
        """e_t for 1 <= t <= T."""
        return self.outputs[self.T - t]

    def latent_states(self) -> List[LatentState]:
        """States as LatentState records, x_T first."""
        return [LatentState(self.T - r, row) for r, row in enumerate(self.states)]


class TrajectorySet:
    """
    K trajectories recorded with one schedule and predictor.
    Arrays are stacked: states (K, T+1, d), outputs (K, T, d).
    """

    def __init__(self, states: np.ndarray, outputs: np.ndarray, base_seed: int,
                 schedule: dict, predictor: dict):
        states = np.asarray(states, dtype=np.float64)
        outputs = np.asarray(outputs, dtype=np.float64)
        if states.ndim != 3 or outputs.ndim != 3 or states.shape[0] != outputs.shape[0] \
                or states.shape[1] != outputs.shape[1] + 1 or states.shape[2] != outputs.shape[2]:
            raise DimensionMismatchError(
                f"inconsistent trajectory arrays {states.shape} and {outputs.shape}")
        self.states = states
        self.outputs = outputs
        self.base_seed = int(base_seed)
        self.schedule = dict(schedule)
        self.predictor = dict(predictor)

    @property
    def K(self) -> int:  # pylint: disable=invalid-name
        """Number of trajectories."""
        return self.states.shape[0]

    @property
    def T(self) -> int:  # pylint: disable=invalid-name
        """Number of steps."""
        return self.outputs.shape[1]

    @property
    def d(self) -> int:  # pylint: disable=invalid-name
        """Latent dimension."""
        return self.states.shape[2]

    @property
    def is_deterministic(self) -> bool:
        """True when the recording schedule had sigma = 0 everywhere."""
        return float(self.schedule.get("eta", 0.0)) == 0.0

    @property
    def trajectories(self) -> List[Trajectory]:
        """Per-trajectory views."""
        return [self[k] for k in range(self.K)]

    def __len__(self) -> int:
        return self.K

    def __getitem__(self, k: int) -> Trajectory:
        return Trajectory(self.states[k], self.outputs[k], self.base_seed + k)

    def states_at(self, t: int) -> np.ndarray:
        """x_t of every trajectory, shape (K, d)."""
        return self.states[:, self.T - t, :]

    def outputs_at(self, t: int) -> np.ndarray:
        """e_t of every trajectory, shape (K, d)."""
        return self.outputs[:, self.T - t, :]

    def identical_to(self, other: "TrajectorySet") -> bool:
        """Bit-for-bit equality of data and provenance."""
        return (self.base_seed == other.base_seed and self.schedule == other.schedule
                and self.predictor == other.predictor
                and self.states.shape == other.states.shape
                and self.states.tobytes() == other.states.tobytes()
                and self.outputs.tobytes() == other.outputs.tobytes())


def denoise_step(x: np.ndarray, e: np.ndarray, alpha_cur: float, alpha_next: float,
                 sigma: float = 0.0, noise: Optional[np.ndarray] = None) -> np.ndarray:
    """
    One update of the generation process from step t to an earlier step.
    Args: x - state at t; e - model output at t; alpha_cur, alpha_next - alpha_bar at both steps;
          sigma - random-noise scale; noise - standard normal draw, used only when sigma > 0
    Returns: np.ndarray - state at the earlier step
    """
    predicted_x0 = (x - np.sqrt(1.0 - alpha_cur) * e) / np.sqrt(alpha_cur)
    direction = np.sqrt(max(1.0 - alpha_next - sigma * sigma, 0.0)) * e
    result = np.sqrt(alpha_next) * predicted_x0 + direction
    if sigma > 0.0:
        result = result + sigma * noise
    return result


def draw_initial_noise(seed: int, d: int) -> np.ndarray:
    """Standard Gaussian x_T for a seed."""
    return np.random.default_rng(seed).standard_normal(d)


def full_generate(schedule: NoiseSchedule, predictor: INoisePredictor, x_T: np.ndarray,  # pylint: disable=invalid-name
                  noise_source: Optional[np.random.Generator] = None,
                  seed: Optional[int] = None) -> Trajectory:
    """
    Run the complete T-step process from x_T, recording every state and model output.
    Args: schedule - noise schedule; predictor - noise model; x_T - initial noise;
          noise_source - generator for the random term (needed only when sigma > 0);
          seed - provenance recorded on the trajectory
    Returns: Trajectory
    """
    x = np.asarray(x_T, dtype=np.float64)
    if x.shape != (predictor.dimension,):
        raise DimensionMismatchError(
            f"x_T has shape {x.shape}, predictor expects ({predictor.dimension},)")
    steps = schedule.T
    alpha_bar, sigma = schedule.alpha_bar, schedule.sigma
    if not schedule.is_deterministic and noise_source is None:
        noise_source = np.random.default_rng(seed)

    states = np.empty((steps + 1, x.shape[0]))
    outputs = np.empty((steps, x.shape[0]))
    states[0] = x
    for t in range(steps, 0, -1):
        e = predictor.predict(x, t)
        noise = noise_source.standard_normal(x.shape[0]) if sigma[t] > 0.0 else None
        x = denoise_step(x, e, alpha_bar[t], alpha_bar[t - 1], sigma[t], noise)
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(x))):
            raise NonFiniteError("generation produced a non-finite value", step=t)
        outputs[steps - t] = e
        states[steps - t + 1] = x
    return Trajectory(states, outputs, seed)


def _record_one(schedule: NoiseSchedule, predictor: INoisePredictor, seed: int) -> Trajectory:
    rng = np.random.default_rng(seed)
    x_T = rng.standard_normal(predictor.dimension)  # pylint: disable=invalid-name
    return full_generate(schedule, predictor, x_T, noise_source=rng, seed=seed)


def record_trajectory_set(schedule: NoiseSchedule, predictor: INoisePredictor, K: int,  # pylint: disable=invalid-name
                          base_seed: int = 0, threads: int = 1) -> TrajectorySet:
    """
    Record K teacher trajectories; trajectory k draws x_T from seed base_seed + k.
    Args: schedule, predictor - the teacher; K - count; base_seed - first seed;
          threads - worker threads (results never depend on it)
    Returns: TrajectorySet
    """
    if K < 1:
        raise DimensionMismatchError(f"K must be >= 1, got {K}")
    seeds = [base_seed + k for k in range(K)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda s: _record_one(schedule, predictor, s), seeds))
    else:
        runs = [_record_one(schedule, predictor, s) for s in seeds]
    logger.info("Recorded %d trajectories (T=%d, d=%d)", K, schedule.T, predictor.dimension)
    return TrajectorySet(np.stack([r.states for r in runs]), np.stack([r.outputs for r in runs]),
                         base_seed, schedule.descriptor(), predictor.descriptor())


def _blob_names(k: int):
    return f"traj_{k}_states.f64", f"traj_{k}_outputs.f64"


def save_trajectory_set(trajectory_set: TrajectorySet, directory) -> Path:
    """
    Write the container: manifest.json plus little-endian float64 blobs per trajectory.
    Args: trajectory_set - data to write; directory - target directory (created if needed)
    Returns: Path - the directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, "T": trajectory_set.T, "d": trajectory_set.d,
                "K": trajectory_set.K, "base_seed": trajectory_set.base_seed,
                "schedule": trajectory_set.schedule, "predictor": trajectory_set.predictor}
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    for k in range(trajectory_set.K):
        states_name, outputs_name = _blob_names(k)
        (directory / states_name).write_bytes(trajectory_set.states[k].astype("<f8").tobytes())
        (directory / outputs_name).write_bytes(trajectory_set.outputs[k].astype("<f8").tobytes())
    logger.debug("Saved %d trajectories to %s", trajectory_set.K, directory)
    return directory


def _read_manifest(directory: Path) -> dict:
    path = directory / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except OSError as error:
        raise ContainerReadError(f"cannot read {path}: {error}") from error
    except (json.JSONDecodeError, UnicodeDecodeError) as error:
        raise ManifestError(f"{path} is not valid JSON: {error}") from error
    if not isinstance(manifest, dict):
        raise ManifestError(f"{path} must hold a JSON object")
    missing = [name for name in MANIFEST_FIELDS if name not in manifest]
    if missing:
        raise ManifestError(f"{path} is missing fields {missing}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise ManifestError(f"{path}: unsupported format_version {manifest['format_version']}")
    for name in ("T", "d", "K"):
        if not isinstance(manifest[name], int) or manifest[name] < 1:
            raise ManifestError(f"{path}: {name} must be a positive integer")
    if not isinstance(manifest["base_seed"], int):
        raise ManifestError(f"{path}: base_seed must be an integer")
    if not isinstance(manifest["schedule"], dict) or not isinstance(manifest["predictor"], dict):
        raise ManifestError(f"{path}: schedule and predictor must be objects")
    return manifest


def _read_blob(path: Path, rows: int, d: int) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as error:
        raise ContainerReadError(f"cannot read {path}: {error}") from error
    expected = rows * d * 8
    if len(raw) != expected:
        row_bytes = rows * 8
        if len(raw) > 0 and len(raw) % row_bytes == 0:
            raise BlobDimensionError(str(path), d, len(raw) // row_bytes)
        raise BlobSizeError(str(path), expected, len(raw))
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, d)


def load_trajectory_set(directory) -> TrajectorySet:
    """
    Read a container written by save_trajectory_set.
    Args: directory - container directory
    Returns: TrajectorySet
    """
    directory = Path(directory)
    manifest = _read_manifest(directory)
    steps, d, count = manifest["T"], manifest["d"], manifest["K"]
    states = np.empty((count, steps + 1, d))
    outputs = np.empty((count, steps, d))
    for k in range(count):
        states_name, outputs_name = _blob_names(k)
        states[k] = _read_blob(directory / states_name, steps + 1, d)
        outputs[k] = _read_blob(directory / outputs_name, steps, d)
    return TrajectorySet(states, outputs, manifest["base_seed"], manifest["schedule"],
                         manifest["predictor"])
