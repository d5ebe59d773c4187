"""
Validation Module
Acceptance suite behind the `validate` command: exact formulas, oracle agreement and
desk-scale Monte Carlo checks, each reported as a CheckResult
"""

import logging
import math
import time
from dataclasses import replace
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import ks_2samp

from .analytic import (
    ModelParams,
    frag_state_pmf,
    hitting_time_from_zero,
    mean_time_to_frag,
    occupation_series,
    p_descend,
    stationary_pgf,
    stationary_pmf,
    stationary_table,
    stationary_tail,
)
from .dynamics import (
    sample_fragmentation_times,
    simulate_ceiling_intervals,
    simulate_descents,
    simulate_occupation,
    simulate_path,
)
from .errors import DomainError
from .excursions import (
    EmpiricalPmf,
    entrance_ratios,
    fit_box_dimension,
    reach_tail_exponent,
    segment,
    summarize_ratios,
)
from .oracle import build_generator, exact_hitting_times, stationary_solve
from .partition import first_fragmentation_time
from .streams import make_generator, run_replicas

logger = logging.getLogger(__name__)


class CheckResult(BaseModel):
    """Outcome of one acceptance check"""

    name: str
    passed: bool
    observed: Dict[str, Any] = Field(default_factory=dict)
    expected: Dict[str, Any] = Field(default_factory=dict)
    tolerance: str = ""
    runtime: float = 0.0


class SuiteReport(BaseModel):
    """All checks of one suite run"""

    suite: str
    seed: int
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]


class SuiteSizes(NamedTuple):
    """Problem sizes of the Monte Carlo checks"""

    ergodic_n_max: int
    ergodic_t_end: float
    hitting_n_max: int
    hitting_replicas: int
    speed_n_max: int
    speed_t_end: float
    speed_replicas: int
    reach_n_max: int
    reach_t_end: Dict[float, float]
    reach_replicas: int
    dimension_n_max: int
    dimension_t_end: float
    phase_n_max: Sequence[int]
    phase_t_end: float
    phase_replicas: int
    law_replicas: int


SIZES = {
    "quick": SuiteSizes(
        ergodic_n_max=1_000,
        ergodic_t_end=20_000.0,
        hitting_n_max=10_000,
        hitting_replicas=300,
        speed_n_max=10_000,
        speed_t_end=90.0,
        speed_replicas=4,
        reach_n_max=2_000,
        reach_t_end={0.5: 1_600.0, 0.8: 270.0},
        reach_replicas=4,
        dimension_n_max=1_000,
        dimension_t_end=1_000.0,
        phase_n_max=(100, 1_000),
        phase_t_end=100.0,
        phase_replicas=8,
        law_replicas=2_000,
    ),
    "full": SuiteSizes(
        ergodic_n_max=10_000,
        ergodic_t_end=10_000.0,
        hitting_n_max=100_000,
        hitting_replicas=1_000,
        speed_n_max=10_000,
        speed_t_end=150.0,
        speed_replicas=8,
        reach_n_max=2_000,
        reach_t_end={0.5: 8_000.0, 0.8: 1_350.0},
        reach_replicas=8,
        dimension_n_max=10_000,
        dimension_t_end=1_000.0,
        phase_n_max=(100, 1_000, 10_000),
        phase_t_end=100.0,
        phase_replicas=4,
        law_replicas=10_000,
    ),
}

Check = Callable[[SuiteSizes, int, Optional[int]], CheckResult]


def _child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def _keyed(values: Dict[Any, Any]) -> Dict[str, Any]:
    """String keys so the report serialises to JSON"""
    return {f"{key:g}" if isinstance(key, float) else str(key): value for key, value in values.items()}


def check_stationary_exact(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """rho(1) = 1-theta, mass plus tail equals one, and the pgf at s = 0.5"""
    rho1_err = mass_err = pgf_err = 0.0
    k = np.arange(1, 201, dtype=float)
    for theta in np.round(np.arange(0.1, 1.0, 0.1), 10):
        params = ModelParams.from_theta(theta)
        rho1_err = max(rho1_err, abs(stationary_pmf(params, 1) - (1.0 - theta)))
        table = stationary_table(params, 1_000_000)
        mass_err = max(mass_err, abs(table.total - 1.0))
        series = math.fsum(stationary_pmf(params, k) * 0.5 ** k)
        pgf_err = max(pgf_err, abs(series - stationary_pgf(params, 0.5)))
    return CheckResult(
        name="stationary_exact",
        passed=rho1_err <= 1e-14 and mass_err <= 1e-8 and pgf_err <= 1e-6,
        observed={"rho1_error": rho1_err, "mass_error": mass_err, "pgf_error": pgf_err},
        expected={"rho1_error": 0.0, "mass_error": 0.0, "pgf_error": 0.0},
        tolerance="rho1 1e-14, mass 1e-8, pgf 1e-6",
    )


def check_oracle_stationary(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """Truncated-chain stationary law against the Beta-Geometric law"""
    params = ModelParams.from_theta(0.5)
    renormalised, full = {}, {}
    for K in (100, 200, 400, 500):
        pi = stationary_solve(build_generator(params, K))
        rho = stationary_pmf(params, np.arange(1, K + 1, dtype=float))
        renormalised[K] = 0.5 * float(np.sum(np.abs(pi - rho / rho.sum())))
        full[K] = 0.5 * (float(np.sum(np.abs(pi - rho))) + stationary_tail(params, K))
    distances = list(full.values())
    decreasing = all(b < a for a, b in zip(distances, distances[1:]))
    return CheckResult(
        name="oracle_stationary",
        passed=renormalised[500] < 0.01 and decreasing,
        observed={"tv_renormalised": _keyed(renormalised), "tv_full": _keyed(full)},
        expected={"tv_renormalised_500": "< 0.01", "tv_full": "strictly decreasing in K"},
        tolerance="0.01",
    )


def check_ergodic_occupation(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """
    Time-average occupation of one long run against rho on k = 1..20

    The run is repeated with the ceiling doubled; truncation bias is taken as
    negligible when both runs meet the tolerance.
    """
    params = ModelParams.from_theta(0.4)
    reference = stationary_pmf(params, np.arange(1, 21, dtype=float))
    tv, p1 = {}, {}
    for index, n_max in enumerate((sizes.ergodic_n_max, 2 * sizes.ergodic_n_max)):
        occupation = simulate_occupation(
            params, n_max, sizes.ergodic_t_end, make_generator(_child_seed(seed, index))
        )
        pmf = EmpiricalPmf.from_occupation(occupation)
        tv[n_max] = pmf.restricted_tv(reference, 20)
        p1[n_max] = float(pmf.values[0])
    return CheckResult(
        name="ergodic_occupation",
        passed=all(value <= 0.02 for value in tv.values()),
        observed={"tv": _keyed(tv), "p1": _keyed(p1)},
        expected={"tv": 0.0, "p1": 0.6},
        tolerance="TV 0.02 on k <= 20 at n_max and 2*n_max",
    )


def check_hitting_time(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """Mean hitting time of 10 blocks from the ceiling, simulated and exact"""
    params = ModelParams.from_theta(0.4)
    target = hitting_time_from_zero(params, 10)
    n_max = sizes.hitting_n_max
    records = simulate_descents(params, n_max, 10, n_max, sizes.hitting_replicas, seed, threads)
    times = np.array([r.total_time for r in records])
    mean = float(times.mean())
    se = float(times.std(ddof=1) / math.sqrt(times.size))
    K = 10_000
    exact = float(exact_hitting_times(build_generator(params, K), 10)[K - 1])
    mc_ok = abs(mean - target) <= max(0.05 * target, 3.0 * se)
    oracle_ok = abs(exact - target) <= 0.02 * target
    return CheckResult(
        name="hitting_time",
        passed=mc_ok and oracle_ok,
        observed={"monte_carlo": mean, "standard_error": se, "oracle": exact},
        expected={"hitting_time": target},
        tolerance="MC max(5%, 3 SE); oracle 2%",
    )


def check_coming_down_speed(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """c*j*phi_j/2 averaged over excursions, at c = 1 and c = 2"""
    window = (100, 1000)
    observed: Dict[str, Any] = {}
    passed = True
    for index, c in enumerate((1.0, 2.0)):
        params = ModelParams(c=c, lam=0.2 * c)

        def task(rng, params=params):
            trajectory = simulate_path(params, sizes.speed_n_max, sizes.speed_t_end / params.c, rng)
            excursions = segment(trajectory)
            complete = sum(1 for e in excursions if not e.left_clipped)
            return complete, [entrance_ratios(excursions, j) for j in window]

        results = run_replicas(task, _child_seed(seed, index), sizes.speed_replicas, threads)
        candidates = sum(r[0] for r in results)
        for position, j in enumerate(window):
            ratios = np.concatenate([r[1][position] for r in results])
            level = summarize_ratios(ratios, j, params, candidates)
            observed[f"c={c:g},j={j}"] = {"mean": level.mean_ratio, "stderr": level.stderr, "used": level.used}
            passed = passed and 0.95 <= level.mean_ratio <= 1.05
    return CheckResult(
        name="coming_down_speed",
        passed=passed,
        observed=observed,
        expected={"ratio": 1.0},
        tolerance="[0.95, 1.05]",
    )


def check_reach_scaling(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """Slope of log reach counts against log level equals theta"""
    levels = np.unique(np.geomspace(10, 1000, 12).astype(np.int64))
    observed: Dict[str, Any] = {}
    passed = True
    for index, theta in enumerate((0.5, 0.8)):
        params = ModelParams.from_theta(theta)
        t_each = sizes.reach_t_end[theta] / sizes.reach_replicas

        def task(rng, params=params, t_each=t_each):
            trajectory = simulate_path(params, sizes.reach_n_max, t_each, rng)
            # only minima are needed, so the path can be released
            return [replace(e, trajectory=None) for e in segment(trajectory)]

        results = run_replicas(task, _child_seed(seed, index), sizes.reach_replicas, threads)
        excursions = [e for chunk in results for e in chunk]
        fit = reach_tail_exponent(excursions, levels)
        observed[f"theta={theta:g}"] = {"slope": fit.exponent, "stderr": fit.stderr, "excursions": len(excursions)}
        passed = passed and not fit.degenerate and abs(fit.exponent - theta) <= 0.1
    return CheckResult(
        name="reach_scaling",
        passed=passed,
        observed=observed,
        expected={"slope": "theta"},
        tolerance="0.1",
    )


def check_zero_set_dimension(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """Box-counting slope of the ceiling set tracks theta"""
    slopes: Dict[float, float] = {}
    r2: Dict[float, float] = {}
    for index, theta in enumerate((0.25, 0.5, 0.75)):
        params = ModelParams.from_theta(theta)
        lo, hi = simulate_ceiling_intervals(
            params, sizes.dimension_n_max, sizes.dimension_t_end, make_generator(_child_seed(seed, index))
        )
        estimate = fit_box_dimension(lo, hi, sizes.dimension_t_end, params, sizes.dimension_n_max)
        slopes[theta] = estimate.slope if not estimate.degenerate else float("nan")
        r2[theta] = estimate.r_squared
    ordered = slopes[0.25] < slopes[0.5] < slopes[0.75]
    passed = (
        abs(slopes[0.5] - 0.5) <= 0.15
        and r2[0.5] >= 0.98
        and ordered
        and slopes[0.75] - slopes[0.25] >= 0.3
    )
    return CheckResult(
        name="zero_set_dimension",
        passed=passed,
        observed={"slopes": _keyed(slopes), "r_squared": _keyed(r2)},
        expected={"slope_0.5": 0.5, "separation": ">= 0.3"},
        tolerance="0.15",
    )


def check_phase_transition(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """Divergent occupation series, time near infinity, and oracle mass at one block"""
    m = 100_000
    gaps = {}
    for theta in (1.0, 1.2):
        partial = occupation_series(ModelParams.from_theta(theta), 2 * m)
        ms = np.unique(np.geomspace(1, m, 30).astype(np.int64))
        gaps[theta] = float(np.min(partial[2 * ms - 1] - partial[ms - 1]))
    series_ok = all(g >= 0.4 for g in gaps.values())

    fractions: Dict[float, List[float]] = {}
    for index, theta in enumerate((1.2, 0.5)):
        params = ModelParams.from_theta(theta)
        fractions[theta] = []
        for position, n_max in enumerate(sizes.phase_n_max):
            level = math.ceil(math.sqrt(n_max))

            def task(rng, params=params, n_max=n_max, level=level):
                occupation = simulate_occupation(params, n_max, sizes.phase_t_end, rng)
                return float(np.sum(occupation[level:])) / sizes.phase_t_end

            stream = _child_seed(seed, 10 * index + position)
            fractions[theta].append(float(np.mean(run_replicas(task, stream, sizes.phase_replicas, threads))))
    grows = all(b > a for a, b in zip(fractions[1.2], fractions[1.2][1:]))
    shrinks = all(b < a for a, b in zip(fractions[0.5], fractions[0.5][1:]))

    mass_one: Dict[float, List[float]] = {}
    for theta in (1.2, 0.5):
        params = ModelParams.from_theta(theta)
        mass_one[theta] = [float(stationary_solve(build_generator(params, K))[0]) for K in (100, 1_000, 10_000, 100_000)]
    vanishing = all(b < a for a, b in zip(mass_one[1.2], mass_one[1.2][1:]))
    offsets = [abs(p - 0.5) for p in mass_one[0.5]]
    settling = all(b < a for a, b in zip(offsets, offsets[1:])) and offsets[-1] < 0.01

    return CheckResult(
        name="phase_transition",
        passed=series_ok and grows and shrinks and vanishing and settling,
        observed={
            "series_min_gap": _keyed(gaps),
            "time_above_sqrt_ceiling": _keyed(fractions),
            "oracle_mass_at_one": _keyed(mass_one),
        },
        expected={"series_min_gap": ">= 0.4", "theta=1.2": "grows", "theta=0.5": "shrinks"},
        tolerance="monotone",
    )


def check_numerical_stability(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """Recurrence against Gamma form of p_descend, and frag_state_pmf normalisation"""
    pairs = [(10, 1), (1_000, 1), (1_000, 500), (100_000, 10), (1_000_000, 1), (1_000_000, 1_000), (1_000_000, 500_000)]
    worst_ratio = 0.0
    worst_mass = 0.0
    for theta in (0.1, 0.5, 0.9):
        params = ModelParams.from_theta(theta)
        for n, k in pairs:
            exact = p_descend(params, n, k)
            product = p_descend(params, n, k, method="recurrence")
            worst_ratio = max(worst_ratio, abs(product - exact) / exact)
        for n in (10, 100, 1_000, 10_000):
            worst_mass = max(worst_mass, abs(math.fsum(frag_state_pmf(params, n)) - 1.0))
    return CheckResult(
        name="numerical_stability",
        passed=worst_ratio <= 1e-10 and worst_mass <= 1e-12,
        observed={"p_descend_relative_error": worst_ratio, "frag_pmf_mass_error": worst_mass},
        expected={"p_descend_relative_error": 0.0, "frag_pmf_mass_error": 0.0},
        tolerance="1e-10 relative, 1e-12 absolute",
    )


def check_cross_module_law(sizes: SuiteSizes, seed: int, threads: Optional[int]) -> CheckResult:
    """First-fragmentation times of the partition process and the block-count chain"""
    params = ModelParams(c=1.0, lam=0.2)
    n = 100
    partition_times = np.array(
        run_replicas(lambda rng: first_fragmentation_time(params, n, rng), _child_seed(seed, 0), sizes.law_replicas, threads)
    )
    chain_times = sample_fragmentation_times(params, n, sizes.law_replicas, make_generator(_child_seed(seed, 1)))
    test = ks_2samp(partition_times, chain_times)
    expected = mean_time_to_frag(params, n)
    mean = float(partition_times.mean())
    se = float(partition_times.std(ddof=1) / math.sqrt(partition_times.size))
    return CheckResult(
        name="cross_module_law",
        passed=test.pvalue > 0.01 and abs(mean - expected) <= 3.0 * se,
        observed={"ks_pvalue": float(test.pvalue), "partition_mean": mean, "chain_mean": float(chain_times.mean()), "stderr": se},
        expected={"mean_time_to_frag": expected},
        tolerance="KS p > 0.01, mean within 3 SE",
    )


CHECKS: Dict[str, Check] = {
    "stationary_exact": check_stationary_exact,
    "oracle_stationary": check_oracle_stationary,
    "ergodic_occupation": check_ergodic_occupation,
    "hitting_time": check_hitting_time,
    "coming_down_speed": check_coming_down_speed,
    "reach_scaling": check_reach_scaling,
    "zero_set_dimension": check_zero_set_dimension,
    "phase_transition": check_phase_transition,
    "numerical_stability": check_numerical_stability,
    "cross_module_law": check_cross_module_law,
}


def run_suite(
    suite: str = "quick",
    seed: int = 0,
    threads: Optional[int] = None,
    only: Optional[Sequence[str]] = None,
) -> SuiteReport:
    """
    Run the acceptance checks

    Args:
        suite: "quick" for scaled-down sizes, "full" for the stated sizes
        seed: Root seed; check i draws from a stream derived from (seed, i)
        threads: Worker cap for replica-parallel checks
        only: Names of the checks to run; all of them by default

    Returns:
        SuiteReport in registry order
    """
    if suite not in SIZES:
        raise DomainError(f"unknown suite {suite!r}")
    names = list(CHECKS) if only is None else list(only)
    unknown = [name for name in names if name not in CHECKS]
    if unknown:
        raise DomainError(f"unknown checks: {', '.join(unknown)}")
    sizes = SIZES[suite]
    report = SuiteReport(suite=suite, seed=seed)
    for index, name in enumerate(CHECKS):
        if name not in names:
            continue
        logger.info("running check %s", name)
        started = time.perf_counter()
        result = CHECKS[name](sizes, _child_seed(seed, 100 + index), threads)
        result.runtime = time.perf_counter() - started
        logger.info("check %s %s in %.2fs", name, "passed" if result.passed else "FAILED", result.runtime)
        report.checks.append(result)
    return report
