"""
Metrics, scheduler comparisons and figure-data exports.
Every sampler is scored against the complete deterministic process started from the same x_T.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from src.diffusion import Trajectory, TrajectorySet, draw_initial_noise, full_generate
from src.errors import ConfigError, DimensionMismatchError, SeedMismatchError
from src.interfaces import INoisePredictor
from src.linalg import pca_fit, pca_project, pearson_correlation_matrix
from src.olss import OlssSampler, residual_fn, train
from src.samplers import AbstractSampler, DdimSampler, PndmSampler, SamplerRun, uniform_path
from src.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

DEFAULT_COMPARE_STEPS = (5, 10)
DEFAULT_HEATMAP_STRIDE = 25
REPORT_HEADER = ("kind", "n", "rmse", "seconds", "model_calls", "step_residuals")
PCA_HEADER = ("series", "step", "pc1", "pc2")
SWEEP_HEADER = ("n", "rmse", "seconds")


@dataclass
class ComparisonRow:
    """Aggregate over all evaluation seeds for one (kind, n)."""
    kind: str
    n: int
    rmse: float
    seconds: float
    model_calls: int
    step_residuals: List[float] = field(default_factory=list)


@dataclass
class ComparisonReport:
    """Rows in insertion order; n_values outer, scheduler kind inner."""
    rows: List[ComparisonRow] = field(default_factory=list)
    eval_seeds: Tuple[int, ...] = ()

    def row(self, kind: str, n: int) -> ComparisonRow:
        """Look up one row; raises KeyError when absent."""
        for row in self.rows:
            if row.kind == kind and row.n == n:
                return row
        raise KeyError((kind, n))

    def by_key(self) -> Dict[Tuple[str, int], ComparisonRow]:
        """Rows keyed by (kind, n)."""
        return {(row.kind, row.n): row for row in self.rows}


@dataclass
class SweepResult:
    """Per-n means of a steps-vs-error/runtime sweep and the runtime linearity of the fit."""
    rows: List[Tuple[int, float, float]]
    r_squared: Optional[float]


def _fmt(value: float) -> str:
    return repr(float(value))


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def _check_same_start(run: SamplerRun, teacher: Trajectory) -> None:
    if run.visited.shape[-1] != teacher.d:
        raise DimensionMismatchError(f"run has d={run.visited.shape[-1]}, teacher d={teacher.d}")
    if run.seed is not None and teacher.seed is not None and run.seed != teacher.seed:
        raise SeedMismatchError(f"run seed {run.seed} differs from teacher seed {teacher.seed}")
    if not np.array_equal(run.visited[0], teacher.states[0]):
        raise SeedMismatchError("run and teacher do not share x_T")


def final_state_rmse(run: SamplerRun, teacher: Trajectory) -> float:
    """
    Root mean square distance between the generated x_0 and the teacher's.
    Args: run - sampler run; teacher - complete process from the same x_T
    Returns: float
    """
    _check_same_start(run, teacher)
    return _rmse(run.final_state, teacher.state(0))


def step_rmse(run: SamplerRun, teacher: Trajectory) -> List[float]:
    """RMS distance to the teacher at every state the run visits after x_T."""
    _check_same_start(run, teacher)
    return [_rmse(state.x, teacher.state(state.t)) for state in run.latent_states()[1:]]


def teacher_runs(schedule: NoiseSchedule, predictor: INoisePredictor, seeds: Sequence[int],
                 threads: int = 1) -> List[Trajectory]:
    """Complete deterministic trajectories for the given seeds, in seed order."""
    if not schedule.is_deterministic:
        raise ConfigError("reference trajectories need a deterministic schedule (eta = 0)")

    def generate(seed):
        return full_generate(schedule, predictor, draw_initial_noise(seed, predictor.dimension),
                             seed=seed)

    return _map(generate, list(seeds), threads)


def _map(func: Callable, items: list, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _score(sampler: AbstractSampler, predictor: INoisePredictor, teachers: List[Trajectory],
           threads: int) -> ComparisonRow:
    runs = _map(lambda t: sampler.run(predictor, t.states[0], seed=t.seed), teachers, threads)
    calls = {run.model_calls for run in runs}
    if calls != {sampler.path.n}:
        raise ConfigError(f"{sampler.kind} made {sorted(calls)} model calls, expected {sampler.path.n}")
    # fixed seed order keeps the aggregates deterministic
    finals = [final_state_rmse(run, t) for run, t in zip(runs, teachers)]
    steps = np.array([step_rmse(run, t) for run, t in zip(runs, teachers)])
    return ComparisonRow(kind=sampler.kind, n=sampler.path.n, rmse=float(np.mean(finals)),
                         seconds=float(np.mean([run.seconds for run in runs])),
                         model_calls=sampler.path.n, step_residuals=steps.mean(axis=0).tolist())


def compare_schedulers(schedule: NoiseSchedule, predictor: INoisePredictor,  # pylint: disable=too-many-arguments
                       teacher_set: TrajectorySet, eval_seeds: Sequence[int],
                       n_values: Sequence[int] = DEFAULT_COMPARE_STEPS, threads: int = 1,
                       relative_epsilon: float = 1e-4) -> ComparisonReport:
    """
    Run DDIM, PNDM, OLSS-P and OLSS for every n over the evaluation seeds.
    OLSS-P and OLSS are trained on teacher_set with a shared residual cache.
    Args: schedule, predictor - the model; teacher_set - training trajectories;
          eval_seeds - seeds of the scored runs; n_values - step counts; threads - workers
    Returns: ComparisonReport
    """
    eval_seeds = tuple(int(s) for s in eval_seeds)
    if not eval_seeds:
        raise ConfigError("need at least one evaluation seed")
    training = set(range(teacher_set.base_seed, teacher_set.base_seed + teacher_set.K))
    overlap = sorted(training.intersection(eval_seeds))
    if overlap:
        logger.warning("Evaluation seeds %s were also used for training", overlap)

    teachers = teacher_runs(schedule, predictor, eval_seeds, threads)
    rfn = residual_fn(teacher_set)
    report = ComparisonReport(eval_seeds=eval_seeds)
    for n in n_values:
        path = uniform_path(schedule.T, n)
        samplers: List[AbstractSampler] = [DdimSampler(schedule, path), PndmSampler(schedule, path)]
        for mode in ("uniform", "optimized"):
            scheduler = train(teacher_set, n, mode=mode, relative_epsilon=relative_epsilon, rfn=rfn,
                              predictor=predictor)
            samplers.append(OlssSampler(scheduler, schedule))
        for sampler in samplers:
            row = _score(sampler, predictor, teachers, threads)
            logger.info("%-6s n=%-3d rmse=%.6g seconds=%.3g", row.kind, n, row.rmse, row.seconds)
            report.rows.append(row)
    return report


def write_report_csv(report: ComparisonReport, out) -> Path:
    """Write a comparison report; step residuals are joined with ';'."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPORT_HEADER)
        for row in report.rows:
            writer.writerow([row.kind, row.n, _fmt(row.rmse), _fmt(row.seconds), row.model_calls,
                             ";".join(_fmt(r) for r in row.step_residuals)])
    return out


def _subsampled(start: int, stop: int, stride: int) -> List[int]:
    steps = list(range(start, stop - 1, -stride))
    if steps[-1] != stop:
        steps.append(stop)
    return steps


def heatmap_variables(trajectory: Trajectory, stride: int) -> List[Tuple[str, np.ndarray]]:
    """
    Ordered (name, vector) pairs: x_T, x_{T-stride}, ..., x_0 then e_T, ..., e_1.
    The last index of each family is always included.
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    variables = [(f"x_{t}", trajectory.state(t)) for t in _subsampled(trajectory.T, 0, stride)]
    variables += [(f"e_{t}", trajectory.output(t)) for t in _subsampled(trajectory.T, 1, stride)]
    return variables


def correlation_heatmap_csv(trajectory: Trajectory, stride: int = DEFAULT_HEATMAP_STRIDE,
                            out=None) -> Tuple[List[str], np.ndarray]:
    """
    Pearson correlation between subsampled intermediate variables of one trajectory.
    Args: trajectory - complete process; stride - step subsampling; out - CSV path or None
    Returns: (names, matrix)
    """
    variables = heatmap_variables(trajectory, stride)
    names = [name for name, _ in variables]
    matrix = pearson_correlation_matrix([vector for _, vector in variables])
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["variable"] + names)
            for name, row in zip(names, matrix):
                writer.writerow([name] + [_fmt(v) for v in row])
    return names, matrix


def _series_names(runs: Sequence[SamplerRun]) -> List[str]:
    names, seen = [], {}
    for run in runs:
        base = f"{run.kind}-{run.path.n}"
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}-{seen[base]}")
    return names


def pca_paths(teacher: Trajectory, runs: Sequence[SamplerRun]) -> List[Tuple[str, int, float, float]]:
    """
    Project the teacher path and every run onto the teacher's two principal directions.
    Returns: rows (series, step, pc1, pc2); the teacher series comes first
    """
    for run in runs:
        _check_same_start(run, teacher)
    basis = pca_fit(list(teacher.states))
    rows = []
    for t, x in zip(range(teacher.T, -1, -1), teacher.states):
        rows.append(("teacher", t) + pca_project(basis, x))
    for name, run in zip(_series_names(runs), runs):
        for state in run.latent_states():
            rows.append((name, state.t) + pca_project(basis, state.x))
    return rows


def pca_paths_csv(teacher: Trajectory, runs: Sequence[SamplerRun], out) -> Path:
    """Write pca_paths rows under the header series,step,pc1,pc2."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(PCA_HEADER)
        for series, step, pc1, pc2 in pca_paths(teacher, runs):
            writer.writerow([series, step, _fmt(pc1), _fmt(pc2)])
    return out


def efficiency_sweep(predictor: INoisePredictor,  # pylint: disable=too-many-arguments
                     sampler_factory: Callable[[int], AbstractSampler], n_values: Sequence[int],
                     teachers: Sequence[Trajectory], repeats: int = 1, out=None) -> SweepResult:
    """
    Steps-vs-error/runtime trade-off.
    Args: predictor - noise model; sampler_factory - builds a sampler for n steps;
          n_values - step counts; teachers - reference runs whose x_T are sampled;
          repeats - timing repetitions per teacher; out - CSV path or None
    Returns: SweepResult - r_squared of a linear fit of seconds on n (None for < 3 step counts)
    """
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if not teachers:
        raise ConfigError("need at least one reference trajectory")
    rows = []
    for n in n_values:
        sampler = sampler_factory(n)
        errors, seconds = [], []
        for teacher in teachers:
            for _ in range(repeats):
                run = sampler.run(predictor, teacher.states[0], seed=teacher.seed)
                seconds.append(run.seconds)
            errors.append(final_state_rmse(run, teacher))
        rows.append((int(n), float(np.mean(errors)), float(np.mean(seconds))))
        logger.debug("sweep n=%d rmse=%.6g seconds=%.3g", *rows[-1])

    r_squared = None
    if len({n for n, _, _ in rows}) >= 3:
        fit = stats.linregress([r[0] for r in rows], [r[2] for r in rows])
        r_squared = float(fit.rvalue ** 2)
        logger.info("Sampling time vs n: slope %.3g s/step, R^2 %.4f", fit.slope, r_squared)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(SWEEP_HEADER)
            for n, rmse, secs in rows:
                writer.writerow([n, _fmt(rmse), _fmt(secs)])
    return SweepResult(rows, r_squared)


def read_csv(path) -> Tuple[List[str], List[List[str]]]:
    """
    Read a CSV written by this module.
    Returns: (header, rows); raises DimensionMismatchError on ragged rows
    """
    with Path(path).open(newline="", encoding="utf-8") as handle:
        records = list(csv.reader(handle))
    if not records:
        raise DimensionMismatchError(f"{path} is empty")
    header, rows = records[0], records[1:]
    for number, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DimensionMismatchError(f"{path}:{number} has {len(row)} fields, "
                                         f"header has {len(header)}")
    return header, rows
