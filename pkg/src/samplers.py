"""
Few-step samplers behind one contract.
AbstractSampler owns the sampling loop and model-call accounting; concrete samplers
only define how the next state is formed from the states and outputs seen so far.
"""

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.diffusion import LatentState, ModelOutput, denoise_step
from src.errors import DimensionMismatchError, InvalidPathError, NonFiniteError
from src.interfaces import INoisePredictor
from src.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

# Adams-Bashforth numerators (most recent output first) and common denominators
LMS_COEFFICIENTS = {
    1: ((1,), 1),
    2: ((3, -1), 2),
    3: ((23, -16, 5), 12),
    4: ((55, -59, 37, -9), 24),
}


@dataclass(frozen=True)
class StepPath:
    """
    Selected sampling steps t(1) > t(2) > ... > t(n); the terminal step 0 is implicit.
    """
    steps: Tuple[int, ...]

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if not steps:
            raise InvalidPathError("a path needs at least one step")
        if any(s < 1 for s in steps):
            raise InvalidPathError(f"steps must be >= 1, got {steps}")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise InvalidPathError(f"steps must be strictly decreasing, got {steps}")
        object.__setattr__(self, "steps", steps)

    @property
    def n(self) -> int:
        """Number of model calls along the path."""
        return len(self.steps)

    @property
    def T(self) -> int:  # pylint: disable=invalid-name
        """First step, which must equal the schedule's T."""
        return self.steps[0]

    @property
    def with_terminal(self) -> Tuple[int, ...]:
        """Steps followed by the terminal 0."""
        return self.steps + (0,)

    def check_schedule(self, schedule: NoiseSchedule) -> None:
        """Raise InvalidPathError unless the path starts at the schedule's T."""
        if self.T != schedule.T:
            raise InvalidPathError(f"path starts at {self.T} but the schedule has T={schedule.T}")


@dataclass(frozen=True, eq=False)
class SamplerRun:
    """
    Result of one sampler run.
    visited holds states at t(1)..t(n+1), outputs the model outputs at t(1)..t(n).
    """
    kind: str
    path: StepPath
    visited: np.ndarray
    outputs: np.ndarray
    model_calls: int
    seed: Optional[int] = None
    seconds: float = 0.0

    @property
    def final_state(self) -> np.ndarray:
        """The generated x_0."""
        return self.visited[-1]

    def latent_states(self) -> List[LatentState]:
        """Visited states tagged with their steps."""
        return [LatentState(t, x) for t, x in zip(self.path.with_terminal, self.visited)]

    def model_outputs(self) -> List[ModelOutput]:
        """Model outputs tagged with their steps."""
        return [ModelOutput(t, e) for t, e in zip(self.path.steps, self.outputs)]


def uniform_path(T: int, n: int) -> StepPath:  # pylint: disable=invalid-name
    """
    Equally spaced steps t(i) = round(T (n - i + 1) / n), rounding halves up.
    Args: T - total steps; n - number of steps, 1 <= n <= T
    Returns: StepPath
    """
    if not 1 <= n <= T:
        raise InvalidPathError(f"need 1 <= n <= T, got n={n}, T={T}")
    steps = [(2 * T * k + n) // (2 * n) for k in range(n, 0, -1)]
    for i in range(1, n):
        # guard for strict decrease
        steps[i] = min(steps[i], steps[i - 1] - 1)
    return StepPath(tuple(steps))


def ddim_update(x: np.ndarray, e: np.ndarray, alpha_cur: float, alpha_next: float) -> np.ndarray:
    """DDIM transfer between two alpha_bar levels."""
    return denoise_step(x, e, alpha_cur, alpha_next)


def ddim_step(schedule: NoiseSchedule, x: LatentState, e: ModelOutput, t_next: int) -> LatentState:
    """
    DDIM hop from t(i) to t_next.
    Args: schedule - noise schedule; x, e - state and output at t(i); t_next - target step < t(i)
    Returns: LatentState at t_next
    """
    if not 0 <= t_next < x.t or e.t != x.t:
        raise InvalidPathError(f"cannot hop from step {x.t} (output at {e.t}) to {t_next}")
    result = ddim_update(x.x, e.e, schedule.alpha_bar[x.t], schedule.alpha_bar[t_next])
    if not np.all(np.isfinite(result)):
        raise NonFiniteError("DDIM step produced a non-finite value", step=x.t)
    return LatentState(t_next, result)


def lms_combination(history: Sequence[np.ndarray]) -> np.ndarray:
    """
    Linear multi-step combination of past outputs, most recent first.
    Four or more entries use the fourth-order rule; fewer use lower-order Adams-Bashforth.
    """
    if len(history) == 0:
        raise InvalidPathError("PNDM needs at least one model output")
    order = min(len(history), 4)
    numerators, denominator = LMS_COEFFICIENTS[order]
    total = numerators[0] * np.asarray(history[0], dtype=np.float64)
    for coefficient, e in zip(numerators[1:], history[1:order]):
        total = total + coefficient * np.asarray(e, dtype=np.float64)
    return total / denominator


def pndm_alpha_prime(alpha_cur: float, alpha_next: float) -> float:
    """Transfer coefficient of the pseudo-numerical step."""
    return (alpha_next - alpha_cur) / (np.sqrt((1.0 - alpha_next) * alpha_cur)
                                       + np.sqrt((1.0 - alpha_cur) * alpha_next))


def pndm_update(x: np.ndarray, history: Sequence[np.ndarray], alpha_cur: float,
                alpha_next: float) -> np.ndarray:
    """PNDM transfer between two alpha_bar levels using the multi-step output."""
    e_prime = lms_combination(history)
    return (np.sqrt(alpha_next) / np.sqrt(alpha_cur) * x
            - pndm_alpha_prime(alpha_cur, alpha_next) / np.sqrt(alpha_cur) * e_prime)


def pndm_step(schedule: NoiseSchedule, x: LatentState, history: Sequence[ModelOutput],
              t_next: int) -> LatentState:
    """
    PNDM hop from t(i) to t_next.
    Args: schedule - noise schedule; x - state at t(i); history - up to four outputs,
          most recent (at t(i)) first; t_next - target step
    Returns: LatentState at t_next
    """
    if not history:
        raise InvalidPathError("PNDM needs at least one model output")
    if not 0 <= t_next < x.t:
        raise InvalidPathError(f"cannot hop from step {x.t} to {t_next}")
    result = pndm_update(x.x, [h.e for h in history[:4]], schedule.alpha_bar[x.t],
                         schedule.alpha_bar[t_next])
    if not np.all(np.isfinite(result)):
        raise NonFiniteError("PNDM step produced a non-finite value", step=x.t)
    return LatentState(t_next, result)


class AbstractSampler(ABC):
    """
    Abstract few-step sampler.
    run() calls the predictor exactly once per selected step and records every state.
    """

    kind = "abstract"

    def __init__(self, schedule: NoiseSchedule, path: StepPath):
        path.check_schedule(schedule)
        self._schedule = schedule
        self._path = path

    @property
    def path(self) -> StepPath:
        """Steps at which the model is called."""
        return self._path

    @property
    def schedule(self) -> NoiseSchedule:
        """Schedule the sampler was built for."""
        return self._schedule

    @abstractmethod
    def _advance(self, i: int, visited: List[np.ndarray], outputs: List[np.ndarray]) -> np.ndarray:
        """
        Form the state at t(i+2) (0-based i) from everything seen so far.
        Args: i - index of the current step; visited - states at t(1)..t(i+1);
              outputs - model outputs at t(1)..t(i+1)
        Returns: np.ndarray - next state
        """

    def run(self, predictor: INoisePredictor, x_T: np.ndarray,  # pylint: disable=invalid-name
            seed: Optional[int] = None) -> SamplerRun:
        """
        Sample along the path from x_T.
        Args: predictor - noise model; x_T - initial noise; seed - provenance of x_T
        Returns: SamplerRun
        """
        x = np.asarray(x_T, dtype=np.float64)
        if x.shape != (predictor.dimension,):
            raise DimensionMismatchError(
                f"x_T has shape {x.shape}, predictor expects ({predictor.dimension},)")
        visited = [x]
        outputs: List[np.ndarray] = []
        calls = 0
        started = time.perf_counter()
        for i, t in enumerate(self._path.steps):
            outputs.append(predictor.predict(visited[-1], t))
            calls += 1
            nxt = self._advance(i, visited, outputs)
            if not np.all(np.isfinite(nxt)):
                raise NonFiniteError(f"{self.kind} sampler produced a non-finite value", step=t)
            visited.append(nxt)
        seconds = time.perf_counter() - started
        return SamplerRun(kind=self.kind, path=self._path, visited=np.stack(visited),
                          outputs=np.stack(outputs), model_calls=calls, seed=seed, seconds=seconds)


class DdimSampler(AbstractSampler):
    """Deterministic DDIM along an arbitrary path."""

    kind = "ddim"

    def _advance(self, i, visited, outputs):
        steps = self._path.with_terminal
        alpha_bar = self._schedule.alpha_bar
        return ddim_update(visited[-1], outputs[-1], alpha_bar[steps[i]], alpha_bar[steps[i + 1]])


class PndmSampler(AbstractSampler):
    """Pseudo-numerical sampler with an Adams-Bashforth warmup."""

    kind = "pndm"

    def _advance(self, i, visited, outputs):
        steps = self._path.with_terminal
        alpha_bar = self._schedule.alpha_bar
        history = outputs[::-1][:4]
        return pndm_update(visited[-1], history, alpha_bar[steps[i]], alpha_bar[steps[i + 1]])


SAMPLERS = {"ddim": DdimSampler, "pndm": PndmSampler}


def run_sampler(kind: str, schedule: NoiseSchedule, predictor: INoisePredictor, path: StepPath,
                x_T: np.ndarray, seed: Optional[int] = None) -> SamplerRun:  # pylint: disable=invalid-name
    """
    Run a baseline sampler by name.
    Args: kind - "ddim" or "pndm"; schedule, predictor - the model; path - steps; x_T - noise
    Returns: SamplerRun
    """
    try:
        sampler_class = SAMPLERS[kind.lower()]
    except KeyError as error:
        raise InvalidPathError(f"unknown sampler kind {kind!r}") from error
    return sampler_class(schedule, path).run(predictor, x_T, seed=seed)
