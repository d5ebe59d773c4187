"""
Excursions Module
Cut trajectories into excursions away from the ceiling (the stand-in for infinitely
many blocks) and estimate the stationary law, the speed of coming down, the reach
scaling of the excursion measure and the dimension of the zero set.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import linregress

from .analytic import ModelParams, aldous_phi_moments
from .dynamics import Trajectory, occupation_array
from .errors import DomainError, InvariantViolation

logger = logging.getLogger(__name__)

MIN_R_SQUARED = 0.98
MIN_FIT_SCALES = 4


@dataclass(frozen=True)
class Excursion:
    """
    One maximal stretch of time spent below the ceiling

    first and stop index the constant pieces of the parent trajectory covered by
    the excursion (stop exclusive). left_clipped marks a stretch already under way at
    time 0, right_clipped one still running at t_end.
    """

    start_time: float
    end_time: float
    min_state: int
    first: int
    stop: int
    left_clipped: bool = False
    right_clipped: bool = False
    trajectory: Optional[Trajectory] = field(default=None, repr=False, compare=False)

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def path(self) -> Tuple[np.ndarray, np.ndarray]:
        """Entry times and block counts of the pieces inside this excursion"""
        if self.trajectory is None:
            raise DomainError("excursion is detached from its trajectory")
        starts, _, counts = self.trajectory.segments()
        return starts[self.first:self.stop], counts[self.first:self.stop]


@dataclass(frozen=True)
class EmpiricalPmf:
    """Time-average law of the block count, values[k-1] for k = 1..n_max"""

    values: np.ndarray
    total_time: float

    @classmethod
    def from_occupation(cls, occupation: np.ndarray) -> "EmpiricalPmf":
        """Normalise a dwell array indexed 0..n_max (index 0 unused)"""
        total = float(np.sum(occupation[1:]))
        return cls(values=occupation[1:] / total, total_time=total)

    def restricted_tv(self, reference: np.ndarray, k_max: int) -> float:
        """Half the l1 distance to a reference pmf over k = 1..k_max"""
        k_max = min(k_max, self.values.size, reference.size)
        return 0.5 * float(np.sum(np.abs(self.values[:k_max] - reference[:k_max])))


class TailFit(NamedTuple):
    """Power-law fit of a pmf, p(k) ~ k^(-exponent)"""

    exponent: float
    stderr: float
    r_squared: float
    points: int


class SpeedLevel(NamedTuple):
    """Normalised entrance time c*j*phi_j/2 at one level"""

    j: int
    mean_ratio: float
    stderr: float
    expected_ratio: float
    used: int
    excluded: int


class ReachFit(NamedTuple):
    """Log-log fit of the number of excursions reaching n blocks against n"""

    exponent: float
    stderr: float
    r_squared: float
    levels: np.ndarray
    counts: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class DimensionEstimate:
    """Box-counting estimate of the dimension of the time spent at the ceiling"""

    scales: np.ndarray
    counts: np.ndarray
    slope: float
    ci: float
    r_squared: float
    window: Tuple[int, int]
    raw_slope: float
    degenerate: bool = False


def segment(trajectory: Trajectory, ceiling: Optional[int] = None) -> List[Excursion]:
    """
    Split a trajectory into its excursions below the ceiling

    Args:
        trajectory: Trajectory simulated with n_max equal to the ceiling
        ceiling: Ceiling; defaults to trajectory.n_max

    Returns:
        Excursions in time order; empty when the chain never leaves the ceiling
    """
    ceiling = trajectory.n_max if ceiling is None else ceiling
    if ceiling != trajectory.n_max:
        raise DomainError(f"trajectory ceiling is {trajectory.n_max}, not {ceiling}")
    starts, ends, counts = trajectory.segments()
    below = counts < ceiling

    # inside an excursion the count may only drop by one at a time
    inside = below[:-1] & below[1:]
    steps = np.diff(counts)[inside]
    if np.any(steps != -1):
        raise InvariantViolation("an excursion revisits a block count or skips a level")

    edges = np.diff(np.concatenate(([0], below.astype(np.int8), [0])))
    run_starts = np.flatnonzero(edges == 1)
    run_stops = np.flatnonzero(edges == -1)
    if run_starts.size == 0:
        return []
    # counts at the ceiling exceed every count inside a run, so reduceat sees only the run
    minima = np.minimum.reduceat(counts, run_starts)
    pieces = counts.size
    excursions = [
        Excursion(
            start_time=float(starts[a]),
            end_time=float(ends[b - 1]),
            min_state=int(m),
            first=int(a),
            stop=int(b),
            left_clipped=bool(a == 0),
            right_clipped=bool(b == pieces),
            trajectory=trajectory,
        )
        for a, b, m in zip(run_starts, run_stops, minima)
    ]
    logger.debug("segmented %d excursions below ceiling %d", len(excursions), ceiling)
    return excursions


def ceiling_time(trajectory: Trajectory, level: Optional[int] = None) -> float:
    """Total time spent with at least `level` blocks, the ceiling itself by default"""
    level = trajectory.n_max if level is None else level
    starts, ends, counts = trajectory.segments()
    return math.fsum((ends - starts)[counts >= level])


def ceiling_fraction(trajectory: Trajectory, level: Optional[int] = None) -> float:
    """
    Fraction of [0, t_end] spent with at least `level` blocks

    With the default level this is the time at the ceiling. A level growing with the
    ceiling, such as sqrt(n_max), tracks the time spent near infinity.
    """
    return ceiling_time(trajectory, level) / trajectory.t_end


def ceiling_intervals(trajectory: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    """Start and end times of the constant pieces at the ceiling"""
    starts, ends, counts = trajectory.segments()
    at_top = counts == trajectory.n_max
    return starts[at_top], ends[at_top]


def empirical_stationary(trajectories: Iterable[Trajectory]) -> EmpiricalPmf:
    """
    Pool the occupation times of several trajectories into a pmf over block counts

    Args:
        trajectories: Trajectories sharing one ceiling

    Returns:
        EmpiricalPmf over 1..n_max
    """
    total = None
    time = 0.0
    for trajectory in trajectories:
        dwell = occupation_array(trajectory)[1:]
        if total is None:
            total = dwell.copy()
        elif total.size != dwell.size:
            raise DomainError("trajectories were simulated with different ceilings")
        else:
            total += dwell
        time += trajectory.t_end
    if total is None:
        raise DomainError("no trajectories given")
    return EmpiricalPmf(values=total / time, total_time=time)


def fit_pmf_tail_exponent(pmf: np.ndarray, k_lo: int = 10, k_hi: int = 100) -> TailFit:
    """
    Fit p(k) ~ k^(-exponent) by least squares on the log-log scale

    Args:
        pmf: Values indexed k-1
        k_lo: First block count in the fit
        k_hi: Last block count in the fit

    Returns:
        TailFit
    """
    k = np.arange(k_lo, min(k_hi, pmf.size) + 1)
    p = pmf[k - 1]
    keep = p > 0
    if keep.sum() < 3:
        raise DomainError("fewer than three positive pmf values in the fit range")
    fit = linregress(np.log(k[keep]), np.log(p[keep]))
    return TailFit(exponent=-fit.slope, stderr=fit.stderr, r_squared=fit.rvalue ** 2, points=int(keep.sum()))


def entrance_ratios(excursions: Sequence[Excursion], j: int, entrance_correction: bool = True) -> np.ndarray:
    """
    c*j*phi_j/2 for every excursion started at the ceiling that reaches j blocks

    phi_j runs from the moment an excursion leaves the ceiling until it first holds
    j blocks. With entrance_correction the mean time to come down from infinity to
    just below the ceiling is added, removing the truncation bias.

    Args:
        excursions: Excursions from segment(), possibly from several trajectories
        j: Level below every ceiling involved
        entrance_correction: Add the mean entrance time above the ceiling

    Returns:
        Ratios in excursion order
    """
    ratios: List[float] = []
    cache = {}
    for e in excursions:
        if e.left_clipped or e.min_state > j:
            continue
        trajectory = e.trajectory
        if trajectory is None:
            raise DomainError("excursion is detached from its trajectory")
        key = id(trajectory)
        if key not in cache:
            params: ModelParams = trajectory.params
            ceiling = trajectory.n_max
            if not 1 <= j < ceiling:
                raise DomainError(f"level {j} must lie below the ceiling {ceiling}")
            offset = aldous_phi_moments(params, ceiling - 1).mean if entrance_correction else 0.0
            starts, _, counts = trajectory.segments()
            cache[key] = (params.c, ceiling, offset, starts, counts)
        c, ceiling, offset, starts, counts = cache[key]
        # skip-free descent: level j sits a fixed number of pieces after the start
        index = e.first + (ceiling - 1 - j)
        if counts[index] != j:
            raise InvariantViolation(f"excursion path does not pass through level {j}")
        ratios.append(c * j * (starts[index] - e.start_time + offset) / 2.0)
    return np.asarray(ratios, dtype=float)


def summarize_ratios(ratios: np.ndarray, j: int, params: ModelParams, candidates: int) -> SpeedLevel:
    """Mean and standard error of pooled entrance ratios at level j"""
    used = int(ratios.size)
    excluded = candidates - used
    if excluded:
        logger.info("level %d: %d excursions never reached it and were excluded", j, excluded)
    return SpeedLevel(
        j=int(j),
        mean_ratio=float(np.mean(ratios)) if used else float("nan"),
        stderr=float(np.std(ratios, ddof=1) / math.sqrt(used)) if used > 1 else float("nan"),
        expected_ratio=params.c * j * aldous_phi_moments(params, j).mean / 2.0,
        used=used,
        excluded=excluded,
    )


def speed_estimate(
    excursions: Sequence[Excursion],
    j_window: Sequence[int],
    entrance_correction: bool = True,
) -> List[SpeedLevel]:
    """
    Normalised entrance times c*j*phi_j/2, which tend to one as j grows

    Args:
        excursions: Excursions from segment()
        j_window: Levels j, each below the ceiling
        entrance_correction: Add the mean entrance time above the ceiling

    Returns:
        One SpeedLevel per j, with the mean ratio, its standard error and the
        ratio expected from the entrance-time moments
    """
    complete = [e for e in excursions if not e.left_clipped]
    if not complete:
        raise DomainError("no excursion starts at the ceiling")
    if any(e.trajectory is None for e in complete):
        raise DomainError("excursion is detached from its trajectory")
    params = complete[0].trajectory.params
    ceiling = min(e.trajectory.n_max for e in complete)
    levels = []
    for j in j_window:
        if ceiling < 10 * j:
            logger.warning("ceiling %d is less than ten times level %d; expect bias", ceiling, j)
        ratios = entrance_ratios(complete, j, entrance_correction)
        levels.append(summarize_ratios(ratios, j, params, len(complete)))
    return levels


def reach_counts(excursions: Sequence[Excursion], levels: Sequence[int]) -> np.ndarray:
    """
    Number of excursions started at the ceiling that reach each level

    Clipped-at-t_end excursions count; excursions already running at time 0 do not.
    """
    minima = np.sort(np.array([e.min_state for e in excursions if not e.left_clipped], dtype=np.int64))
    counts = np.searchsorted(minima, np.asarray(levels), side="right")
    order = np.argsort(levels)
    if np.any(np.diff(counts[order]) < 0):
        raise InvariantViolation("reach counts must not decrease with the level")
    return counts


def reach_tail_exponent(excursions: Sequence[Excursion], levels: Optional[Sequence[int]] = None) -> ReachFit:
    """
    Slope of log(number of excursions reaching n) against log(n), which approaches theta

    Args:
        excursions: Excursions from one or more trajectories with a common ceiling
        levels: Reach levels; defaults to 20 log-spaced levels between 10 and
            min(1000, ceiling/2)

    Returns:
        ReachFit; degenerate is set when fewer than three levels have positive counts
    """
    complete = [e for e in excursions if not e.left_clipped]
    if len(complete) < 1000:
        logger.warning("only %d excursions; the reach fit will be noisy", len(complete))
    if levels is None:
        trajectory = complete[0].trajectory if complete else None
        ceiling = trajectory.n_max if trajectory is not None else 2000
        top = max(20, min(1000, ceiling // 2))
        levels = np.unique(np.geomspace(10, top, 20).astype(np.int64))
    levels = np.asarray(levels, dtype=np.int64)
    counts = reach_counts(complete, levels)
    keep = counts > 0
    if keep.sum() < 3 or np.unique(levels[keep]).size < 3:
        logger.warning("reach fit is degenerate: %d usable levels", int(keep.sum()))
        return ReachFit(float("nan"), float("nan"), float("nan"), levels, counts, True)
    fit = linregress(np.log(levels[keep]), np.log(counts[keep]))
    return ReachFit(
        exponent=float(fit.slope),
        stderr=float(fit.stderr),
        r_squared=float(fit.rvalue ** 2),
        levels=levels,
        counts=counts,
        degenerate=False,
    )


def box_counts(lo: np.ndarray, hi: np.ndarray, scales: Sequence[float]) -> np.ndarray:
    """
    Number of boxes [i*delta, (i+1)*delta) meeting the union of the intervals [lo, hi)

    Args:
        lo: Interval starts, time-ordered
        hi: Interval ends
        scales: Box sizes

    Returns:
        One count per scale
    """
    if lo.size == 0:
        return np.zeros(len(scales), dtype=np.int64)
    counts = []
    for delta in scales:
        first = np.floor(lo / delta).astype(np.int64)
        last = np.maximum(first, np.ceil(hi / delta).astype(np.int64) - 1)
        # intervals are time-ordered, so overlaps only reach back through the running maximum
        reach = np.maximum.accumulate(last)
        previous = np.concatenate(([-1], reach[:-1]))
        fresh = last - np.maximum(first, previous + 1) + 1
        counts.append(int(np.sum(np.maximum(fresh, 0))))
    return np.asarray(counts, dtype=np.int64)


def _best_window(x: np.ndarray, y: np.ndarray) -> Tuple[int, int, bool]:
    """Widest contiguous run of points whose fit reaches MIN_R_SQUARED"""
    size = x.size
    best = None
    for a in range(size):
        for b in range(a + MIN_FIT_SCALES, size + 1):
            fit = linregress(x[a:b], y[a:b])
            r2 = fit.rvalue ** 2 if np.isfinite(fit.rvalue) else 0.0
            if r2 < MIN_R_SQUARED:
                continue
            key = (x[b - 1] - x[a], r2)
            if best is None or key > best[0]:
                best = (key, a, b)
    if best is None:
        return 0, size, False
    return best[1], best[2], True


def default_scales(t_end: float, floor: float, count: int = 40) -> np.ndarray:
    """Log-spaced box sizes, decreasing from t_end/2 to a tenth of the truncation floor"""
    smallest = max(t_end * 1e-8, 0.1 * floor) if math.isfinite(floor) else t_end * 1e-6
    return np.geomspace(t_end / 2.0, smallest, count)


def fit_box_dimension(
    lo: np.ndarray,
    hi: np.ndarray,
    t_end: float,
    params: ModelParams,
    ceiling: int,
    scales: Optional[Sequence[float]] = None,
) -> DimensionEstimate:
    """
    Box-counting dimension of a union of ceiling intervals on [0, t_end]

    The fit drops the coarsest decade (saturation above t_end/10) and the finest
    decade above the truncation floor 1/(lambda*ceiling), then keeps the widest
    contiguous range of scales with R^2 >= 0.98. The slope is clipped to [0, 1].

    Args:
        lo: Interval starts
        hi: Interval ends
        t_end: Observation horizon
        params: Rates of the simulated chain
        ceiling: Ceiling of the simulated chain
        scales: Box sizes; defaults to default_scales()

    Returns:
        DimensionEstimate, degenerate when fewer than four usable scales remain
    """
    floor = 1.0 / (params.lam * ceiling) if params.lam > 0 else math.inf
    if scales is None or len(scales) == 0:
        scales = default_scales(t_end, floor)
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    if t_end / scales[-1] > 1e8:
        raise DomainError("finest scale would need more than 1e8 boxes")
    counts = box_counts(lo, hi, scales)

    usable = (scales >= 10.0 * floor) & (scales <= t_end / 10.0) & (counts > 0)
    index = np.flatnonzero(usable)
    if index.size < MIN_FIT_SCALES:
        logger.warning("dimension fit is degenerate: %d usable scales", index.size)
        return DimensionEstimate(
            scales=scales, counts=counts, slope=0.0, ci=float("nan"), r_squared=float("nan"),
            window=(0, 0), raw_slope=0.0, degenerate=True,
        )
    x = np.log(1.0 / scales[index])
    y = np.log(counts[index].astype(float))
    a, b, good = _best_window(x, y)
    if not good:
        logger.warning("no window of scales reaches R^2 >= %.2f; fitting all usable scales", MIN_R_SQUARED)
    fit = linregress(x[a:b], y[a:b])
    raw = float(fit.slope)
    logger.debug("dimension window %d..%d slope %.4f", index[a], index[b - 1], raw)
    return DimensionEstimate(
        scales=scales,
        counts=counts,
        slope=float(np.clip(raw, 0.0, 1.0)),
        ci=float(fit.stderr),
        r_squared=float(fit.rvalue ** 2),
        window=(int(index[a]), int(index[b - 1]) + 1),
        raw_slope=raw,
        degenerate=False,
    )


def box_dimension(
    trajectory: Trajectory,
    ceiling: Optional[int] = None,
    scales: Optional[Sequence[float]] = None,
) -> DimensionEstimate:
    """Box-counting dimension of the zero-set proxy {t : state = ceiling} of one trajectory"""
    ceiling = trajectory.n_max if ceiling is None else ceiling
    if ceiling != trajectory.n_max:
        raise DomainError(f"trajectory ceiling is {trajectory.n_max}, not {ceiling}")
    lo, hi = ceiling_intervals(trajectory)
    return fit_box_dimension(lo, hi, trajectory.t_end, trajectory.params, ceiling, scales)


def write_excursion_csv(excursions: Sequence[Excursion], path: Union[str, Path]) -> Path:
    """Excursion table with columns start,end,duration,min_state"""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["start", "end", "duration", "min_state"])
        for e in excursions:
            writer.writerow([repr(e.start_time), repr(e.end_time), repr(e.duration), e.min_state])
    return path


def write_dimension_csv(estimate: DimensionEstimate, path: Union[str, Path]) -> Path:
    """Box-counting table with columns delta,count"""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["delta", "count"])
        for delta, count in zip(estimate.scales.tolist(), estimate.counts.tolist()):
            writer.writerow([repr(delta), count])
    return path
