"""
Block-Count Dynamics Module
Event-driven simulation of the block-count chain truncated at a ceiling n_max.
Fragmentation sends the chain to n_max, which stands in for infinitely many blocks.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from numba import njit

from .analytic import ModelParams, classify_regime
from .errors import DomainError, InvariantViolation
from .streams import run_replicas

logger = logging.getLogger(__name__)

DEFAULT_MAX_EVENTS = 50_000_000
_CHUNK = 1 << 20


@dataclass(frozen=True)
class ChainState:
    """Current block count of the truncated chain"""

    blocks: int
    n_max: int

    def __post_init__(self):
        if not 1 <= self.blocks <= self.n_max:
            raise DomainError(f"state {self.blocks} outside 1..{self.n_max}")

    @property
    def at_ceiling(self) -> bool:
        return self.blocks == self.n_max


@dataclass(frozen=True)
class Trajectory:
    """
    Piecewise-constant record of the block count on [0, t_end]

    states[i] is the block count from jump_times[i] until the next jump; before the
    first jump the count is t0_state. When truncated is set the event budget ran
    out and t_end is the time actually covered.
    """

    jump_times: np.ndarray
    states: np.ndarray
    t0_state: int
    n_max: int
    t_end: float
    params: ModelParams
    seed: Optional[int] = None
    truncated: bool = False

    @property
    def event_count(self) -> int:
        return int(self.jump_times.size)

    def segments(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Start times, end times and block counts of the constant pieces"""
        starts = np.concatenate(([0.0], self.jump_times))
        ends = np.concatenate((self.jump_times, [self.t_end]))
        counts = np.concatenate(([self.t0_state], self.states)).astype(np.int64)
        return starts, ends, counts

    def check_skip_free(self) -> None:
        """Every downward move is by exactly one block and every upward move lands on n_max"""
        _, _, counts = self.segments()
        before, after = counts[:-1], counts[1:]
        bad = ~((after == before - 1) | (after == self.n_max))
        if np.any(bad):
            index = int(np.flatnonzero(bad)[0])
            raise InvariantViolation(
                f"illegal jump {before[index]} -> {after[index]} at event {index}"
            )


@dataclass(frozen=True)
class DescentRecord:
    """Outcome of one run from n_start until the target block count is hit"""

    total_time: float
    frag_count: int
    min_state_reached: int
    steps: int
    budget_exhausted: bool = False


@njit(nogil=True)
def _draw_uniform(rng):
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


@njit(nogil=True)
def _next_state(j, n_max, c, lam, rng):
    coalesce = 0.5 * c * j * (j - 1.0)
    rate = coalesce + lam * j
    u = _draw_uniform(rng)
    v = rng.random()
    if rate == 0.0:
        return j, np.inf
    dwell = -np.log(u) / rate
    if v * rate < coalesce:
        return j - 1, dwell
    return n_max, dwell


@njit(nogil=True)
def _advance(state, t, comp, t_end, n_max, c, lam, rng, times, states):
    filled = 0
    cap = times.size
    while filled < cap:
        nxt, dwell = _next_state(state, n_max, c, lam, rng)
        # compensated summation of the clock
        y = dwell - comp
        s = t + y
        if s > t_end:
            return filled, state, t, comp, True
        comp = (s - t) - y
        t = s
        times[filled] = t
        states[filled] = nxt
        state = nxt
        filled += 1
    return filled, state, t, comp, False


@njit(nogil=True)
def _descend(state, k_target, n_max, c, lam, rng, max_steps):
    total = 0.0
    comp = 0.0
    frags = 0
    lowest = state
    steps = 0
    while state > k_target:
        if max_steps >= 0 and steps >= max_steps:
            return total, frags, lowest, steps, False
        nxt, dwell = _next_state(state, n_max, c, lam, rng)
        y = dwell - comp
        s = total + y
        comp = (s - total) - y
        total = s
        # coalescence never lands on the ceiling, so this is exactly a shatter
        if nxt == n_max:
            frags += 1
        state = nxt
        if state < lowest:
            lowest = state
        steps += 1
    return total, frags, lowest, steps, True


@njit(nogil=True)
def _entrance_sums(rates, size, rng):
    out = np.empty(size)
    for r in range(size):
        total = 0.0
        comp = 0.0
        for i in range(rates.size):
            y = -np.log(_draw_uniform(rng)) / rates[i] - comp
            s = total + y
            comp = (s - total) - y
            total = s
        out[r] = total
    return out


@njit(nogil=True)
def _occupy(state, t_end, n_max, c, lam, rng, occupation):
    t = 0.0
    comp = 0.0
    events = 0
    while True:
        nxt, dwell = _next_state(state, n_max, c, lam, rng)
        y = dwell - comp
        s = t + y
        if s > t_end:
            occupation[state] += t_end - t
            return events
        comp = (s - t) - y
        occupation[state] += s - t
        t = s
        state = nxt
        events += 1


@njit(nogil=True)
def _ceiling_runs(state, t, comp, opened, t_end, n_max, c, lam, rng, lo, hi):
    filled = 0
    cap = lo.size
    while filled < cap:
        nxt, dwell = _next_state(state, n_max, c, lam, rng)
        y = dwell - comp
        s = t + y
        if s > t_end:
            if state == n_max:
                lo[filled] = opened
                hi[filled] = t_end
                filled += 1
            return filled, state, t, comp, opened, True
        comp = (s - t) - y
        t = s
        if state == n_max and nxt != n_max:
            lo[filled] = opened
            hi[filled] = t
            filled += 1
        elif state != n_max and nxt == n_max:
            opened = t
        state = nxt
    return filled, state, t, comp, opened, False


@njit(nogil=True)
def _frag_times(n, c, lam, rng, size):
    out = np.empty(size)
    for r in range(size):
        state = n
        total = 0.0
        while True:
            nxt, dwell = _next_state(state, n + 1, c, lam, rng)
            total += dwell
            if nxt == n + 1:
                break
            state = nxt
        out[r] = total
    return out


def _check_ceiling(state: int, n_max: int) -> None:
    if n_max < 2:
        raise DomainError("ceiling n_max must be at least 2")
    if not 1 <= state <= n_max:
        raise DomainError(f"state {state} outside 1..{n_max}")


def step(state: ChainState, params: ModelParams, rng: np.random.Generator) -> Tuple[ChainState, float]:
    """
    Take one jump of the truncated chain

    From j blocks the chain coalesces to j-1 with probability (j-1)/(j-1+theta) and
    otherwise shatters to the ceiling, after an exponential dwell of rate
    c*C(j,2) + lambda*j. With lambda = 0 the state 1 is absorbing and the dwell is infinite.

    Args:
        state: Current state
        params: Model rates
        rng: Caller-owned generator (two uniforms are consumed)

    Returns:
        Tuple of (next state, dwell time)
    """
    j = state.blocks
    coalesce = 0.5 * params.c * j * (j - 1)
    rate = coalesce + params.lam * j
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    v = rng.random()
    if rate == 0.0:
        return state, float("inf")
    dwell = -np.log(u) / rate
    nxt = j - 1 if v * rate < coalesce else state.n_max
    return ChainState(blocks=nxt, n_max=state.n_max), float(dwell)


def simulate_path(
    params: ModelParams,
    n_max: int,
    t_end: float,
    rng: np.random.Generator,
    initial: Optional[int] = None,
    max_events: int = DEFAULT_MAX_EVENTS,
    seed: Optional[int] = None,
) -> Trajectory:
    """
    Simulate the truncated chain on [0, t_end]

    Args:
        params: Model rates
        n_max: Ceiling
        t_end: Horizon
        rng: Generator driving the run
        initial: Starting block count (defaults to the ceiling)
        max_events: Event budget. A run that spends all of it is returned truncated
            unless its last state absorbs; one that would have ended exactly at the
            budget without another jump before t_end is still reported truncated
        seed: Seed record stored on the trajectory

    Returns:
        Trajectory
    """
    if t_end <= 0:
        raise DomainError("t_end must be positive")
    if max_events < 1:
        raise DomainError("max_events must be at least 1")
    start = n_max if initial is None else int(initial)
    _check_ceiling(start, n_max)

    time_chunks: List[np.ndarray] = []
    state_chunks: List[np.ndarray] = []
    state, t, comp = start, 0.0, 0.0
    recorded = 0
    finished = False
    while not finished and recorded < max_events:
        size = min(_CHUNK, max_events - recorded)
        times = np.empty(size, dtype=np.float64)
        states = np.empty(size, dtype=np.int64)
        filled, state, t, comp, finished = _advance(
            state, t, comp, float(t_end), n_max, float(params.c), float(params.lam), rng, times, states
        )
        time_chunks.append(times[:filled])
        state_chunks.append(states[:filled])
        recorded += filled

    jump_times = np.concatenate(time_chunks) if time_chunks else np.empty(0)
    jump_states = np.concatenate(state_chunks) if state_chunks else np.empty(0, dtype=np.int64)
    if not finished and params.jump_rate(state) == 0.0:
        # the budget ran out on the move into an absorbing state, so nothing is missing
        finished = True
    truncated = not finished
    covered = float(t_end)
    if truncated:
        covered = float(jump_times[-1])
        logger.warning(
            "event budget of %d exhausted at t=%.6g before t_end=%.6g; trajectory truncated",
            max_events, covered, t_end,
        )
    logger.debug("simulated %d events up to t=%.6g (n_max=%d)", recorded, covered, n_max)
    return Trajectory(
        jump_times=jump_times,
        states=jump_states,
        t0_state=start,
        n_max=n_max,
        t_end=covered,
        params=params,
        seed=seed,
        truncated=truncated,
    )


def simulate_descent(
    params: ModelParams,
    n_start: int,
    k_target: int,
    n_max: int,
    rng: np.random.Generator,
    max_steps: Optional[int] = None,
) -> DescentRecord:
    """
    Run the chain from n_start until it first holds k_target blocks

    Every fragmentation restarts the descent from the ceiling.

    Args:
        params: Model rates
        n_start: Starting block count
        k_target: Target, k_target < n_start
        n_max: Ceiling, n_start <= n_max
        rng: Generator driving the run
        max_steps: Jump budget; required when theta >= 1

    Returns:
        DescentRecord, with budget_exhausted set when the budget ran out first
    """
    _check_ceiling(n_start, n_max)
    if not 1 <= k_target < n_start:
        raise DomainError(f"target {k_target} must lie in 1..{n_start - 1}")
    if max_steps is None and classify_regime(params).absorbing:
        raise DomainError("theta >= 1 may never come down; supply max_steps")
    total, frags, lowest, steps, reached = _descend(
        n_start, k_target, n_max, float(params.c), float(params.lam), rng,
        -1 if max_steps is None else int(max_steps),
    )
    if not reached:
        logger.info("descent budget of %d steps exhausted at level %d", steps, lowest)
    return DescentRecord(
        total_time=float(total),
        frag_count=int(frags),
        min_state_reached=int(lowest),
        steps=int(steps),
        budget_exhausted=not reached,
    )


def simulate_descents(
    params: ModelParams,
    n_start: int,
    k_target: int,
    n_max: int,
    replicas: int,
    seed: Optional[int],
    threads: Optional[int] = None,
    max_steps: Optional[int] = None,
) -> List[DescentRecord]:
    """Replica-parallel simulate_descent; result i depends only on (seed, i)"""
    return run_replicas(
        lambda rng: simulate_descent(params, n_start, k_target, n_max, rng, max_steps=max_steps),
        seed,
        replicas,
        threads,
    )


def sample_entrance_times(
    params: ModelParams, j: int, n_top: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Samples of the entrance time phi_j truncated at n_top

    phi_j is the sum over i = j+1..n_top of independent exponential dwells with rate
    c*C(i,2) + lambda*i, i.e. the time to come down from n_top to j with no fragmentation.
    """
    if not 1 <= j < n_top:
        raise DomainError(f"need 1 <= j < n_top, got j={j}, n_top={n_top}")
    rates = np.asarray(params.jump_rate(np.arange(j + 1, n_top + 1, dtype=float)), dtype=np.float64)
    return _entrance_sums(rates, int(size), rng)


def simulate_occupation(
    params: ModelParams,
    n_max: int,
    t_end: float,
    rng: np.random.Generator,
    initial: Optional[int] = None,
) -> np.ndarray:
    """
    Dwell time per block count on [0, t_end] without storing the path

    Consumes the generator exactly like simulate_path, so for the same stream the
    result equals occupation_array of the stored trajectory.

    Returns:
        Array indexed 0..n_max (index 0 unused) summing to t_end
    """
    if t_end <= 0:
        raise DomainError("t_end must be positive")
    start = n_max if initial is None else int(initial)
    _check_ceiling(start, n_max)
    occupation = np.zeros(n_max + 1)
    events = _occupy(start, float(t_end), n_max, float(params.c), float(params.lam), rng, occupation)
    logger.debug("occupation run: %d events up to t=%.6g (n_max=%d)", events, t_end, n_max)
    return occupation


def simulate_ceiling_intervals(
    params: ModelParams,
    n_max: int,
    t_end: float,
    rng: np.random.Generator,
    initial: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Start and end times of the stays at the ceiling, recorded without the path

    Consecutive shatters at the ceiling extend one stay. Consumes the generator
    exactly like simulate_path.

    Returns:
        Tuple (starts, ends) of equal-length time-ordered arrays
    """
    if t_end <= 0:
        raise DomainError("t_end must be positive")
    start = n_max if initial is None else int(initial)
    _check_ceiling(start, n_max)
    lo_chunks: List[np.ndarray] = []
    hi_chunks: List[np.ndarray] = []
    state, t, comp, opened = start, 0.0, 0.0, 0.0
    finished = False
    while not finished:
        lo = np.empty(_CHUNK)
        hi = np.empty(_CHUNK)
        filled, state, t, comp, opened, finished = _ceiling_runs(
            state, t, comp, opened, float(t_end), n_max, float(params.c), float(params.lam), rng, lo, hi
        )
        lo_chunks.append(lo[:filled])
        hi_chunks.append(hi[:filled])
    return np.concatenate(lo_chunks), np.concatenate(hi_chunks)


def sample_fragmentation_times(
    params: ModelParams, n: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Samples of the time until the first shatter event, starting from n blocks

    This is the block-count marginal of the partition process started from n singletons.
    """
    if params.lam == 0.0:
        raise DomainError("lambda=0 never fragments")
    if n < 1 or size < 1:
        raise DomainError("need n >= 1 and size >= 1")
    return _frag_times(int(n), float(params.c), float(params.lam), rng, int(size))


def occupation_array(trajectory: Trajectory) -> np.ndarray:
    """Total dwell time per block count, indexed 0..n_max (index 0 unused)"""
    starts, ends, counts = trajectory.segments()
    return np.bincount(counts, weights=ends - starts, minlength=trajectory.n_max + 1)


def occupation_histogram(trajectory: Trajectory) -> Dict[int, float]:
    """
    Time spent in each block count over the whole trajectory

    Returns:
        Mapping block count -> total dwell; the values sum to t_end
    """
    dwell = occupation_array(trajectory)
    visited = np.flatnonzero(dwell > 0)
    return {int(k): float(dwell[k]) for k in visited}


def write_trajectory_csv(trajectory: Trajectory, path: Union[str, Path]) -> Path:
    """Write the event rows `t,state`, starting with the initial state at t=0"""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "state"])
        writer.writerow([repr(0.0), trajectory.t0_state])
        for t, state in zip(trajectory.jump_times.tolist(), trajectory.states.tolist()):
            writer.writerow([repr(t), state])
    return path


def read_trajectory_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Read `t,state` rows back into (times, states) arrays, initial row included"""
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["t", "state"]:
            raise InvariantViolation(f"unexpected trajectory header {header}")
        rows = [(float(t), int(s)) for t, s in reader]
    times = np.array([r[0] for r in rows], dtype=np.float64)
    states = np.array([r[1] for r in rows], dtype=np.int64)
    return times, states


def save_trajectory_npz(trajectory: Trajectory, path: Union[str, Path]) -> Path:
    """Binary export that round-trips every field"""
    path = Path(path)
    with open(path, "wb") as f:
        np.savez(
            f,
            jump_times=trajectory.jump_times,
            states=trajectory.states,
            meta=np.array(
                [trajectory.t0_state, trajectory.n_max, int(trajectory.truncated), int(trajectory.seed is not None)],
                dtype=np.int64,
            ),
            seed=np.array([trajectory.seed or 0], dtype=np.uint64),
            clock=np.array([trajectory.t_end, trajectory.params.c, trajectory.params.lam], dtype=np.float64),
        )
    return path


def load_trajectory_npz(path: Union[str, Path]) -> Trajectory:
    """Inverse of save_trajectory_npz"""
    with np.load(path) as data:
        t0_state, n_max, truncated, has_seed = (int(x) for x in data["meta"])
        seed = int(data["seed"][0]) if has_seed else None
        t_end, c, lam = (float(x) for x in data["clock"])
        return Trajectory(
            jump_times=data["jump_times"].copy(),
            states=data["states"].copy(),
            t0_state=t0_state,
            n_max=n_max,
            t_end=t_end,
            params=ModelParams(c=c, lam=lam),
            seed=seed,
            truncated=bool(truncated),
        )
