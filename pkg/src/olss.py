"""
OLSS: schedulers fitted by least squares on recorded teacher trajectories.
Row i of the weight matrix predicts x_{t(i+1)} = w_{i,0} x_T + sum_j w_{i,j} e_{t(j)}, with the
weights shared by every training trajectory.

Each row is fitted as a correction to the better of the DDIM and PNDM rows for the same hop.
With ridge = 0 the result is the plain least-squares solution; deployed schedulers pick the
ridge strength that generates closest to the teacher on the training noise.
"""

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.diffusion import TrajectorySet
from src.errors import (ConfigError, DimensionMismatchError, InvalidPathError, NonFiniteError,
                        SchedulerFileError, StochasticTrajectoryError, UnderdeterminedSystemError)
from src.interfaces import INoisePredictor, IResidualFunction
from src.linalg import solve_least_squares, solve_least_squares_many
from src.path_search import (DEFAULT_RELATIVE_EPSILON, audit_next_step, optimize_path,
                             path_residuals)
from src.predictors import predictor_from_descriptor
from src.samplers import LMS_COEFFICIENTS, AbstractSampler, SamplerRun, StepPath, uniform_path
from src.schedule import NoiseSchedule, schedule_from_descriptor

logger = logging.getLogger(__name__)

SCHEDULER_FORMAT_VERSION = 1
MODES = ("uniform", "optimized")
ANCHOR_KINDS = ("ddim", "pndm")
# candidate ridge strengths, relative to ||A||_F^2
RIDGE_GRID = (0.0,) + tuple(10.0 ** -k for k in range(10, -1, -1))


class StepFit(NamedTuple):
    """Weights of one skip estimate and its RMS residual."""
    weights: np.ndarray
    residual: float


class NaiveEstimate(NamedTuple):
    """Cascaded estimate of x_target for every trajectory and its RMS error."""
    estimates: np.ndarray
    residual: float


class WeightMatrix:
    """
    Learned coefficients; row i (1-based) holds the i + 1 values w_{i,0}..w_{i,i}.
    """

    def __init__(self, rows: Sequence[Sequence[float]]):
        checked = []
        for i, row in enumerate(rows, start=1):
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (i + 1,):
                raise DimensionMismatchError(f"row {i} must hold {i + 1} values, got {row.shape}")
            if not np.all(np.isfinite(row)):
                raise DimensionMismatchError(f"row {i} holds non-finite values")
            checked.append(row)
        if not checked:
            raise DimensionMismatchError("a weight matrix needs at least one row")
        self._rows = checked

    @property
    def n(self) -> int:
        """Number of rows (steps)."""
        return len(self._rows)

    @property
    def coefficient_count(self) -> int:
        """Total number of coefficients, n (n + 3) / 2."""
        return sum(row.shape[0] for row in self._rows)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> np.ndarray:
        return self._rows[i]

    def __iter__(self):
        return iter(self._rows)

    def to_list(self) -> List[List[float]]:
        """Rows as plain float lists."""
        return [row.tolist() for row in self._rows]


@dataclass(eq=False)
class OlssScheduler:  # pylint: disable=too-many-instance-attributes
    """
    Deployable result of training: a path, its weights and provenance.
    residuals are the least-squares residuals d(.) along the path, which D* bounds;
    d_star is None for uniform-path training.
    """
    path: StepPath
    weights: WeightMatrix
    residuals: List[float]
    mode: str
    T: int  # pylint: disable=invalid-name
    d: int  # pylint: disable=invalid-name
    K: int  # pylint: disable=invalid-name
    schedule: dict
    predictor: dict
    d_star: Optional[float] = None
    base_seed: int = 0
    epsilon: Optional[float] = None
    audit_violations: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weights.n != self.path.n or len(self.residuals) != self.path.n:
            raise DimensionMismatchError(
                f"path has {self.path.n} steps but {self.weights.n} weight rows and "
                f"{len(self.residuals)} residuals")
        if self.d_star is not None and max(self.residuals) > self.d_star:
            raise ConfigError(f"residual {max(self.residuals)} exceeds D*={self.d_star}")

    @property
    def n(self) -> int:
        """Number of model calls."""
        return self.path.n

    @property
    def kind(self) -> str:
        """Label used in reports: olss for optimised paths, olss-p for uniform ones."""
        return "olss" if self.mode == "optimized" else "olss-p"

    @property
    def ridge(self) -> float:
        """Ridge strength the deployed weights were fitted with."""
        return float(self.extra.get("ridge", 0.0))


def _check_deterministic(trajectories: TrajectorySet) -> None:
    if not trajectories.is_deterministic:
        raise StochasticTrajectoryError(
            "OLSS approximates the deterministic process; record trajectories with eta = 0")


def _check_prefix(trajectories: TrajectorySet, prefix: Sequence[int], target: int) -> None:
    if not prefix or prefix[0] != trajectories.T:
        raise InvalidPathError(f"prefix must start at T={trajectories.T}, got {tuple(prefix)}")
    if any(a <= b for a, b in zip(prefix, prefix[1:])):
        raise InvalidPathError(f"prefix must be strictly decreasing, got {tuple(prefix)}")
    if prefix[-1] < 1:
        raise InvalidPathError("the model is never called at step 0")
    if not 0 <= target <= prefix[-1]:
        raise InvalidPathError(f"target {target} must lie in [0, {prefix[-1]}]")


def stack_design(trajectories: TrajectorySet, prefix: Sequence[int],
                 target: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stack the least-squares system for one skip estimate over all trajectories.
    Args: trajectories - sigma = 0 teacher set; prefix - t(1)..t(i); target - t(i+1)
    Returns: (A, b) - A is (K d) x (i + 1) with columns x_T, e_{t(1)}, ..., e_{t(i)};
             b stacks the teacher x_target
    """
    _check_deterministic(trajectories)
    _check_prefix(trajectories, prefix, target)
    rows, cols = trajectories.K * trajectories.d, len(prefix) + 1
    if rows < cols:
        raise UnderdeterminedSystemError(
            f"{rows} equations for {cols} unknowns; raise K or d")
    design = np.empty((rows, cols))
    design[:, 0] = trajectories.states_at(trajectories.T).ravel()
    for j, step in enumerate(prefix, start=1):
        design[:, j] = trajectories.outputs_at(step).ravel()
    return design, trajectories.states_at(target).ravel().copy()


def _rms(norm: float, rows: int) -> float:
    return norm / math.sqrt(rows)


def _transfer(alpha_bar: np.ndarray, step: int, nxt: int) -> Tuple[float, float]:
    """Coefficients (on x, on e) of the deterministic update from step to nxt."""
    a_cur, a_next = alpha_bar[step], alpha_bar[nxt]
    on_x = np.sqrt(a_next) / np.sqrt(a_cur)
    on_e = np.sqrt(1.0 - a_next) - np.sqrt(a_next) * np.sqrt(1.0 - a_cur) / np.sqrt(a_cur)
    return float(on_x), float(on_e)


def _baseline_rows(kind: str, alpha_bar: np.ndarray, steps: Sequence[int]) -> List[np.ndarray]:
    """Coefficient rows of a DDIM or PNDM run visiting steps[0] > steps[1] > ... in order."""
    size = len(steps)
    basis = np.eye(size)
    coefficients = basis[0]
    rows = []
    for i in range(size - 1):
        on_x, on_e = _transfer(alpha_bar, steps[i], steps[i + 1])
        if kind == "ddim":
            combined = basis[i + 1]
        elif kind == "pndm":
            order = min(i + 1, 4)
            numerators, denominator = LMS_COEFFICIENTS[order]
            combined = sum(num * basis[i + 1 - j] for j, num in enumerate(numerators)) / denominator
        else:
            raise ConfigError(f"unknown baseline kind {kind!r}")
        coefficients = on_x * coefficients + on_e * combined
        rows.append(coefficients[:i + 2].copy())
    return rows


def _alpha_bar(trajectories: TrajectorySet) -> np.ndarray:
    return schedule_from_descriptor(trajectories.schedule).alpha_bar


def _anchor(design: np.ndarray, rhs: np.ndarray, alpha_bar: np.ndarray,
            prefix: Sequence[int], target: int) -> np.ndarray:
    steps = tuple(prefix) + (target,)
    candidates = [_baseline_rows(kind, alpha_bar, steps)[-1] for kind in ANCHOR_KINDS]
    norms = [float(np.linalg.norm(design @ row - rhs)) for row in candidates]
    return candidates[int(np.argmin(norms))]


def _correction(design: np.ndarray, offset: np.ndarray, ridge: float) -> np.ndarray:
    """argmin ||A delta - offset||^2 + ridge ||A||_F^2 ||delta||^2 via an augmented QR solve."""
    if ridge == 0.0:
        return solve_least_squares(design, offset).weights
    cols = design.shape[1]
    scale = math.sqrt(ridge * float(np.sum(design * design)))
    augmented = np.vstack([design, scale * np.eye(cols)])
    return solve_least_squares(augmented, np.concatenate([offset, np.zeros(cols)])).weights


def anchor_row(trajectories: TrajectorySet, prefix: Sequence[int], target: int) -> np.ndarray:
    """
    The DDIM or PNDM coefficient row for the hop prefix -> target, whichever has the
    smaller training residual.
    """
    design, rhs = stack_design(trajectories, prefix, target)
    return _anchor(design, rhs, _alpha_bar(trajectories), prefix, target)


def solve_step_weights(trajectories: TrajectorySet, prefix: Sequence[int], target: int,
                       ridge: float = 0.0, alpha_bar: Optional[np.ndarray] = None) -> StepFit:
    """
    End-to-end skip estimate: weights and RMS residual per element.
    The weights are w = w_anchor + delta, delta minimising
    ||A (w_anchor + delta) - b||^2 + ridge ||A||_F^2 ||delta||^2; ridge = 0 is plain least squares.
    The residual never exceeds the anchor's.
    Args: trajectories - teacher set; prefix - t(1)..t(i); target - t(i+1);
          ridge - relative regularisation strength >= 0; alpha_bar - schedule, if already built
    Returns: StepFit
    """
    if not (math.isfinite(ridge) and ridge >= 0.0):
        raise ConfigError(f"ridge must be a finite value >= 0, got {ridge}")
    design, rhs = stack_design(trajectories, prefix, target)
    if alpha_bar is None:
        alpha_bar = _alpha_bar(trajectories)
    anchor = _anchor(design, rhs, alpha_bar, prefix, target)
    offset = rhs - design @ anchor
    weights = anchor + _correction(design, offset, ridge)
    norm = float(np.linalg.norm(design @ weights - rhs))
    anchor_norm = float(np.linalg.norm(offset))
    if not norm <= anchor_norm:
        weights, norm = anchor, anchor_norm
    return StepFit(weights, _rms(norm, rhs.shape[0]))


def naive_skip_estimate(trajectories: TrajectorySet, prefix: Sequence[int],
                        target: int) -> NaiveEstimate:
    """
    Cascaded skip estimate from x_T. Between t(j) and t(j+1) every model output the path
    skips is replaced by its projection onto span{x_T, e_{t(1)}, ..., e_{t(j)}}, and the
    generation update is applied one step at a time, so the estimate reaching t(i) carries
    the errors of every earlier segment.
    Args: trajectories - teacher set; prefix - t(1)..t(i); target - step <= t(i)
    Returns: NaiveEstimate - per-trajectory estimates (K, d) and RMS error
    """
    design, rhs = stack_design(trajectories, prefix, target)
    alpha_bar = _alpha_bar(trajectories)
    cols = design.shape[1]
    hops = tuple(prefix) + (target,)

    # coefficients of the running estimate in the basis
    coefficients = np.eye(cols)[0]
    for j in range(len(prefix)):
        step, stop = hops[j], hops[j + 1]
        if step == stop:
            continue
        on_x, on_e = _transfer(alpha_bar, step, step - 1)
        coefficients = on_x * coefficients + on_e * np.eye(cols)[j + 1]
        missing = list(range(step - 1, stop, -1))
        if not missing:
            continue
        outputs = np.column_stack([trajectories.outputs_at(s).ravel() for s in missing])
        projected = solve_least_squares_many(design[:, :j + 2], outputs)
        for column, s in enumerate(missing):
            on_x, on_e = _transfer(alpha_bar, s, s - 1)
            coefficients = on_x * coefficients
            coefficients[:j + 2] += on_e * projected[:, column]

    estimate = design @ coefficients
    residual = _rms(float(np.linalg.norm(estimate - rhs)), rhs.shape[0])
    return NaiveEstimate(estimate.reshape(trajectories.K, trajectories.d), residual)


class LeastSquaresResidual(IResidualFunction):
    """
    Memoised residual d(prefix, target) over a recorded trajectory set.
    The cache is lock-protected; evaluations counts actual least-squares solves.
    """

    def __init__(self, trajectories: TrajectorySet):
        _check_deterministic(trajectories)
        self._trajectories = trajectories
        self._alpha_bar = _alpha_bar(trajectories)
        self._cache: Dict[Tuple[Tuple[int, ...], int], StepFit] = {}
        self._lock = threading.Lock()
        self.evaluations = 0
        self.hits = 0

    @property
    def total_steps(self) -> int:
        return self._trajectories.T

    @property
    def trajectories(self) -> TrajectorySet:
        """Training data behind the residuals."""
        return self._trajectories

    def fit(self, prefix: Sequence[int], target: int) -> StepFit:
        """
        Cached end-to-end fit for (prefix, target).
        Returns: StepFit
        """
        key = (tuple(int(s) for s in prefix), int(target))
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.hits += 1
                return cached
        fitted = solve_step_weights(self._trajectories, key[0], key[1], alpha_bar=self._alpha_bar)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = fitted
                self.evaluations += 1
            return self._cache[key]

    def residual(self, prefix: Sequence[int], target: int) -> float:
        return self.fit(prefix, target).residual


def residual_fn(trajectories: TrajectorySet) -> LeastSquaresResidual:
    """Memoised residual function over a recorded trajectory set."""
    return LeastSquaresResidual(trajectories)


def baseline_weights(kind: str, schedule: NoiseSchedule, path: StepPath) -> WeightMatrix:
    """
    Express a DDIM or PNDM run along a path as OLSS weights over {x_T, e_{t(1)}, ...}.
    Every baseline state lies in that span, so these rows are feasible points of the
    least-squares problems OLSS solves.
    Args: kind - "ddim" or "pndm"; schedule - noise schedule; path - steps
    Returns: WeightMatrix
    """
    path.check_schedule(schedule)
    return WeightMatrix(_baseline_rows(kind, schedule.alpha_bar, path.with_terminal))


def ddim_weights(schedule: NoiseSchedule, path: StepPath) -> WeightMatrix:
    """DDIM along a path as OLSS weights."""
    return baseline_weights("ddim", schedule, path)


def pndm_weights(schedule: NoiseSchedule, path: StepPath) -> WeightMatrix:
    """PNDM along a path as OLSS weights."""
    return baseline_weights("pndm", schedule, path)


def weights_residual(trajectories: TrajectorySet, prefix: Sequence[int], target: int,
                     row: np.ndarray) -> float:
    """RMS residual of a given coefficient row on the stacked training system."""
    design, rhs = stack_design(trajectories, prefix, target)
    return _rms(float(np.linalg.norm(design @ np.asarray(row) - rhs)), rhs.shape[0])


def fit_path(trajectories: TrajectorySet, path: StepPath, ridge: float = 0.0,
             rfn: Optional[LeastSquaresResidual] = None) -> List[StepFit]:
    """
    One weight row per hop of a path, the last one targeting x_0.
    Args: trajectories - teacher set; path - steps; ridge - regularisation strength;
          rfn - residual function whose cache serves ridge = 0
    Returns: list of StepFit
    """
    full = path.with_terminal
    if ridge == 0.0 and rfn is not None:
        return [rfn.fit(full[:i], full[i]) for i in range(1, len(full))]
    alpha_bar = _alpha_bar(trajectories)
    return [solve_step_weights(trajectories, full[:i], full[i], ridge, alpha_bar)
            for i in range(1, len(full))]


def training_rmse(scheduler: "OlssScheduler", schedule: NoiseSchedule,
                  predictor: INoisePredictor, trajectories: TrajectorySet) -> float:
    """
    Mean final-state RMSE when the scheduler generates from the training x_T.
    Returns: float - inf when generation leaves the finite range
    """
    sampler = OlssSampler(scheduler, schedule)
    errors = []
    with np.errstate(over="ignore", invalid="ignore"):
        for trajectory in trajectories:
            try:
                run = sampler.run(predictor, trajectory.states[0], seed=trajectory.seed)
            except NonFiniteError:
                return math.inf
            errors.append(float(np.sqrt(np.mean((run.final_state - trajectory.state(0)) ** 2))))
    score = float(np.mean(errors))
    return score if math.isfinite(score) else math.inf


def train(trajectories: TrajectorySet, n: int, mode: str = "optimized",  # pylint: disable=too-many-arguments,too-many-locals
          epsilon: Optional[float] = None,
          relative_epsilon: float = DEFAULT_RELATIVE_EPSILON,
          audit: bool = False, rfn: Optional[LeastSquaresResidual] = None,
          ridge: Optional[float] = None,
          predictor: Optional[INoisePredictor] = None) -> OlssScheduler:
    """
    Select a path and fit one weight row per step.
    Optimised training also fits the uniform path and keeps whichever generates closer to the
    teacher from the training x_T, so OLSS never trails OLSS-P on its own training data.
    Args: trajectories - sigma = 0 teacher set; n - number of steps; mode - "uniform" (OLSS-P)
          or "optimized"; epsilon / relative_epsilon - outer search resolution;
          audit - cross-check every step search against an exhaustive scan;
          rfn - residual function to reuse (shares its cache);
          ridge - fixed regularisation strength, or None to pick from RIDGE_GRID;
          predictor - model behind the trajectories, rebuilt from their descriptor if None
    Returns: OlssScheduler
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    _check_deterministic(trajectories)
    if rfn is None:
        rfn = residual_fn(trajectories)
    schedule = schedule_from_descriptor(trajectories.schedule)
    if predictor is None:
        predictor = predictor_from_descriptor(trajectories.predictor, schedule)
    ridges = RIDGE_GRID if ridge is None else (float(ridge),)

    uniform = uniform_path(trajectories.T, n)
    used_epsilon = None
    extra = {}
    violations = 0
    candidates = [("uniform", uniform)]
    if mode == "optimized":
        result = optimize_path(rfn, n, epsilon=epsilon, relative_epsilon=relative_epsilon)
        used_epsilon = result.epsilon
        extra = {"D_hi": result.d_hi, "bisections": result.iterations,
                 "uniform_fallback": result.uniform_fallback}
        if audit:
            full = result.path.with_terminal
            for i in range(1, len(full)):
                floor = n - i if i < n else 0
                if audit_next_step(rfn, full[:i], result.d_star, floor) is not None:
                    violations += 1
        if result.path != uniform:
            candidates.insert(0, ("optimized", result.path))

    best = None
    for choice, path in candidates:
        residuals = path_residuals(rfn, path)
        d_star = max(residuals) if mode == "optimized" else None
        for value in ridges:
            fits = fit_path(trajectories, path, value, rfn)
            candidate = OlssScheduler(
                path=path, weights=WeightMatrix([fit.weights for fit in fits]),
                residuals=residuals, mode=mode, T=trajectories.T, d=trajectories.d,
                K=trajectories.K, schedule=dict(trajectories.schedule),
                predictor=dict(trajectories.predictor), d_star=d_star,
                base_seed=trajectories.base_seed, epsilon=used_epsilon,
                audit_violations=violations,
                extra={**extra, "path_choice": choice, "ridge": value,
                       "fit_residuals": [fit.residual for fit in fits]})
            score = training_rmse(candidate, schedule, predictor, trajectories)
            logger.debug("%s path %s ridge %.1e: training rmse %.6g", choice, path.steps, value, score)
            if best is None or score < best[0]:
                best = (score, candidate)

    score, scheduler = best
    if not math.isfinite(score):
        raise NonFiniteError(f"no {n}-step scheduler generates finite states on the training noise")
    scheduler.extra["training_rmse"] = score
    logger.info("Trained %s scheduler on %s path %s; max residual %.6g, ridge %.1e, "
                "training rmse %.6g (%d solves, %d cache hits)", mode,
                scheduler.extra["path_choice"], scheduler.path.steps, max(scheduler.residuals),
                scheduler.ridge, score, rfn.evaluations, rfn.hits)
    full = scheduler.path.with_terminal
    for i, residual in enumerate(scheduler.residuals, start=1):
        logger.debug("step %d: %d -> %d residual %.6g", i, full[i - 1], full[i], residual)
    return scheduler


class OlssSampler(AbstractSampler):
    """Runs a trained scheduler: each state is the learned combination of x_T and past outputs."""

    def __init__(self, scheduler: OlssScheduler, schedule: NoiseSchedule):
        super().__init__(schedule, scheduler.path)
        self._scheduler = scheduler
        self.kind = scheduler.kind

    def _advance(self, i, visited, outputs):
        row = self._scheduler.weights[i]
        return row[0] * visited[0] + row[1:] @ np.stack(outputs)


def sample(scheduler: OlssScheduler, schedule: NoiseSchedule, predictor: INoisePredictor,
           x_T: np.ndarray, seed: Optional[int] = None) -> SamplerRun:  # pylint: disable=invalid-name
    """
    Generate with a trained scheduler using exactly n predictor calls.
    Args: scheduler - trained OLSS scheduler; schedule, predictor - the model; x_T - noise
    Returns: SamplerRun
    """
    x_T = np.asarray(x_T, dtype=np.float64)  # pylint: disable=invalid-name
    if x_T.shape != (scheduler.d,):
        raise DimensionMismatchError(f"x_T has shape {x_T.shape}, scheduler was trained with "
                                     f"d={scheduler.d}")
    return OlssSampler(scheduler, schedule).run(predictor, x_T, seed=seed)


def scheduler_to_dict(scheduler: OlssScheduler) -> dict:
    """JSON-ready document for a trained scheduler."""
    return {"format_version": SCHEDULER_FORMAT_VERSION, "T": scheduler.T, "d": scheduler.d,
            "n": scheduler.n, "mode": scheduler.mode, "path": list(scheduler.path.steps),
            "D_star": scheduler.d_star, "residuals": [float(r) for r in scheduler.residuals],
            "weights": scheduler.weights.to_list(), "schedule": scheduler.schedule,
            "predictor": scheduler.predictor,
            "training": {"K": scheduler.K, "base_seed": scheduler.base_seed,
                         "epsilon": scheduler.epsilon,
                         "audit_violations": scheduler.audit_violations, **scheduler.extra}}


def save_scheduler(scheduler: OlssScheduler, path) -> Path:
    """Write the scheduler JSON document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scheduler_to_dict(scheduler), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _field(document: dict, name: str, kind):
    if name not in document:
        raise SchedulerFileError(name, "missing")
    value = document[name]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SchedulerFileError(name, f"expected {getattr(kind, '__name__', kind)}")
    return value


def _number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _training_block(document: dict) -> dict:
    training = document.get("training", {})
    if not isinstance(training, dict):
        raise SchedulerFileError("training", "expected an object")
    for name in ("K", "base_seed", "audit_violations"):
        value = training.get(name, 0)
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchedulerFileError("training", f"'{name}' must be an integer")
    epsilon = training.get("epsilon")
    if epsilon is not None and not _number(epsilon):
        raise SchedulerFileError("training", "'epsilon' must be a number or null")
    return training


def scheduler_from_dict(document: dict) -> OlssScheduler:
    """
    Rebuild a scheduler from its JSON document.
    Raises: SchedulerFileError naming the first malformed field
    """
    if not isinstance(document, dict):
        raise SchedulerFileError("<root>", "expected a JSON object")
    if _field(document, "format_version", int) != SCHEDULER_FORMAT_VERSION:
        raise SchedulerFileError("format_version", "unsupported version")
    mode = _field(document, "mode", str)
    if mode not in MODES:
        raise SchedulerFileError("mode", f"expected one of {MODES}, got {mode!r}")
    total = _field(document, "T", int)
    steps = _field(document, "path", list)
    weights = _field(document, "weights", list)
    residuals = _field(document, "residuals", list)
    if not all(_number(r) and r >= 0.0 for r in residuals):
        raise SchedulerFileError("residuals", "expected nonnegative finite numbers")
    training = _training_block(document)
    d_star = document.get("D_star")
    if d_star is not None and not _number(d_star):
        raise SchedulerFileError("D_star", "expected a number or null")
    n = _field(document, "n", int)
    try:
        path = StepPath(tuple(steps))
    except (InvalidPathError, TypeError, ValueError) as error:
        raise SchedulerFileError("path", str(error)) from error
    if path.T != total:
        raise SchedulerFileError("T", f"{total} but the path starts at {path.T}")
    if path.n != n:
        raise SchedulerFileError("n", f"path has {path.n} steps")
    if len(residuals) != n:
        raise SchedulerFileError("residuals", f"expected {n} values, got {len(residuals)}")
    if d_star is not None and residuals and max(residuals) > d_star:
        raise SchedulerFileError("D_star", f"residual {max(residuals)} exceeds D*={d_star}")
    try:
        matrix = WeightMatrix(weights)
    except (DimensionMismatchError, TypeError, ValueError) as error:
        raise SchedulerFileError("weights", str(error)) from error
    if matrix.n != n:
        raise SchedulerFileError("weights", f"expected {n} rows, got {matrix.n}")
    extra = {k: v for k, v in training.items()
             if k not in ("K", "base_seed", "epsilon", "audit_violations")}
    return OlssScheduler(path=path, weights=matrix, residuals=[float(r) for r in residuals],
                         mode=mode, T=total, d=_field(document, "d", int),
                         K=training.get("K", 0), schedule=_field(document, "schedule", dict),
                         predictor=_field(document, "predictor", dict), d_star=d_star,
                         base_seed=training.get("base_seed", 0),
                         epsilon=training.get("epsilon"),
                         audit_violations=training.get("audit_violations", 0),
                         extra=extra)


def load_scheduler(path) -> OlssScheduler:
    """Read a scheduler JSON document written by save_scheduler."""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise SchedulerFileError("<root>", f"invalid JSON: {error}") from error
    return scheduler_from_dict(document)
