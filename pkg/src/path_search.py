"""
Step-path optimisation under an error bound.
find_next_step solves min t(i+1) s.t. d(t(1), ..., t(i+1)) <= D by binary search, assuming the
residual grows with the skip length. find_path chains it into an n-step path ending at 0, and
optimize_path bisects on D for the smallest bound that still admits a path.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

from src.errors import ConfigError, InvalidPathError
from src.interfaces import IResidualFunction
from src.samplers import StepPath, uniform_path

logger = logging.getLogger(__name__)

DEFAULT_RELATIVE_EPSILON = 1e-4


@dataclass(frozen=True)
class MonotonicityViolation:
    """Binary search and exhaustive scan disagreed for one step search."""
    prefix: tuple
    bound: float
    binary_result: Optional[int]
    scan_result: Optional[int]


@dataclass(frozen=True)
class PathOptimization:
    """
    Outcome of the outer search on D.
    d_star is the achieved max per-step residual of path; d_hi that of the uniform path.
    """
    path: StepPath
    d_star: float
    d_hi: float
    epsilon: float
    iterations: int
    uniform_fallback: bool


def _search_range(rfn: IResidualFunction, prefix: Sequence[int], floor: int):
    if not prefix:
        raise InvalidPathError("step search needs a nonempty prefix")
    if prefix[0] != rfn.total_steps:
        raise InvalidPathError(f"prefix must start at T={rfn.total_steps}, got {prefix[0]}")
    return max(floor, 0), prefix[-1] - 1


def find_next_step(rfn: IResidualFunction, prefix: Sequence[int], D: float,  # pylint: disable=invalid-name
                   floor: int = 0) -> Optional[int]:
    """
    Smallest next step whose residual stays within the bound.
    Args: rfn - residual function; prefix - t(1)..t(i); D - error bound;
          floor - smallest admissible step (room for later steps)
    Returns: int or None - None when even t(i) - 1 violates the bound
    """
    low, high = _search_range(rfn, prefix, floor)
    if high < low:
        return None
    left, right = low, high + 1
    while left < right:
        mid = (left + right) // 2
        if rfn(prefix, mid) <= D:
            right = mid
        else:
            left = mid + 1
    if right > high or rfn(prefix, right) > D:
        return None
    return right


def scan_next_step(rfn: IResidualFunction, prefix: Sequence[int], D: float,  # pylint: disable=invalid-name
                   floor: int = 0) -> Optional[int]:
    """Exhaustive counterpart of find_next_step; makes no monotonicity assumption."""
    low, high = _search_range(rfn, prefix, floor)
    for t in range(low, high + 1):
        if rfn(prefix, t) <= D:
            return t
    return None


def audit_next_step(rfn: IResidualFunction, prefix: Sequence[int], D: float,  # pylint: disable=invalid-name
                    floor: int = 0) -> Optional[MonotonicityViolation]:
    """
    Compare binary search with an exhaustive scan for one step.
    Returns: MonotonicityViolation or None when both agree
    """
    binary = find_next_step(rfn, prefix, D, floor)
    scan = scan_next_step(rfn, prefix, D, floor)
    if binary == scan:
        return None
    logger.warning("Residual not monotone after prefix %s at D=%.3g: binary search gave %s, "
                   "scan gave %s", tuple(prefix), D, binary, scan)
    return MonotonicityViolation(tuple(prefix), D, binary, scan)


def find_path(rfn: IResidualFunction, n: int, D: float) -> Optional[StepPath]:  # pylint: disable=invalid-name
    """
    Greedy path with every per-step residual <= D that reaches 0 in exactly n steps.
    While searching t(i+1) for i < n the floor n - i keeps room for the remaining steps.
    Args: rfn - residual function; n - number of steps; D - error bound
    Returns: StepPath or None when no such path is found
    """
    if n < 1 or D < 0:
        raise ConfigError(f"need n >= 1 and D >= 0, got n={n}, D={D}")
    steps: List[int] = [rfn.total_steps]
    for i in range(1, n + 1):
        nxt = find_next_step(rfn, steps, D, floor=n - i if i < n else 0)
        if nxt is None:
            return None
        steps.append(nxt)
    if steps[-1] > 0:
        return None
    return StepPath(tuple(steps[:-1]))


def path_residuals(rfn: IResidualFunction, path: StepPath) -> List[float]:
    """Residual of every hop of a path, the last one targeting step 0."""
    full = path.with_terminal
    return [rfn(full[:i], full[i]) for i in range(1, len(full))]


def optimize_path(rfn: IResidualFunction, n: int, epsilon: Optional[float] = None,
                  relative_epsilon: float = DEFAULT_RELATIVE_EPSILON) -> PathOptimization:
    """
    Bisect on D over [0, D_hi] where D_hi is the max residual of the uniform n-step path.
    Args: rfn - residual function; n - steps; epsilon - absolute bracket width, or None to
          use relative_epsilon * D_hi
    Returns: PathOptimization - falls back to the uniform path if no path is found at D_hi
    """
    uniform = uniform_path(rfn.total_steps, n)
    d_hi = max(path_residuals(rfn, uniform))
    if epsilon is None:
        epsilon = relative_epsilon * d_hi
    if d_hi == 0.0:
        return PathOptimization(uniform, 0.0, 0.0, epsilon, 0, True)
    if epsilon <= 0.0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")

    low, high = 0.0, d_hi
    found: Optional[StepPath] = None
    iterations = 0
    while high - low > epsilon:
        mid = 0.5 * (low + high)
        iterations += 1
        candidate = find_path(rfn, n, mid)
        logger.debug("D bracket [%.6g, %.6g], trying %.6g -> %s", low, high, mid,
                     candidate.steps if candidate else None)
        if candidate is None:
            low = mid
        else:
            found, high = candidate, mid
    if found is None:
        found = find_path(rfn, n, d_hi)

    fallback = found is None
    if fallback:
        logger.warning("No optimised %d-step path within D_hi=%.6g, keeping the uniform path",
                       n, d_hi)
        found = uniform
    d_star = max(path_residuals(rfn, found))
    logger.info("Optimised path %s with D*=%.6g (uniform max %.6g, %d bisections)",
                found.steps, d_star, d_hi, iterations)
    return PathOptimization(found, d_star, d_hi, epsilon, iterations, fallback)


def evaluation_budget(n: int, T: int, d_hi: float, epsilon: float) -> int:  # pylint: disable=invalid-name
    """Upper bound n * ceil(log2(D_hi / eps)) * ceil(log2 T) + n on residual evaluations."""
    outer = max(1, math.ceil(math.log2(d_hi / epsilon))) if d_hi > epsilon else 1
    return n * outer * max(1, math.ceil(math.log2(T))) + n
