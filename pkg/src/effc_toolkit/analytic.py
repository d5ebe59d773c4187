"""
Closed-Form Analytics Module
Exact formulas for the block-count chain of the fast fragmentation-coalescence process:
descent probabilities, fragmentation-state laws, holding and hitting times,
the Beta-Geometric stationary law and the entrance-time moments.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import special

from .errors import DomainError, RegimeError

logger = logging.getLogger(__name__)

ArrayLike = Union[int, float, np.ndarray]

# Below this argument Gamma ratios are taken directly, above it from the
# difference of two Stirling series written without cancellation.
GAMMA_CROSSOVER = 20.0
# special.gamma overflows a double just above 171.6
GAMMA_OVERFLOW = 170.0

# Terms kept in the Hurwitz-zeta expansion of the entrance-time moments.
_ZETA_TERMS = 40

# B_2k / (2k(2k-1)) for k = 1..6
_STIRLING = (1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0, -691.0 / 360360.0)


class ModelParams(BaseModel):
    """Rates of the fast fragmentation-coalescence process; theta is always derived"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    c: float = Field(..., gt=0, description="Coalescence rate per pair of blocks")
    lam: float = Field(..., ge=0, alias="lambda", description="Shatter rate per block")

    @property
    def theta(self) -> float:
        """Dimensionless control parameter 2*lambda/c"""
        return 2.0 * self.lam / self.c

    @classmethod
    def from_theta(cls, theta: float, c: float = 1.0) -> "ModelParams":
        """Build the rates that realise a given theta at coalescence rate c"""
        return cls(c=c, lam=theta * c / 2.0)

    def jump_rate(self, k: ArrayLike) -> ArrayLike:
        """Total event rate c*C(k,2) + lambda*k out of a state with k blocks"""
        k = np.asarray(k, dtype=float)
        rate = 0.5 * self.c * k * (k - 1.0) + self.lam * k
        return rate if rate.ndim else float(rate)


class Regime(str, Enum):
    """Phase of the process as governed by theta"""

    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"

    @property
    def absorbing(self) -> bool:
        """Whether infinity traps the process (theta >= 1)"""
        return self is not Regime.SUBCRITICAL


@dataclass(frozen=True)
class PmfTable:
    """A pmf on {1..k_max} with the exact probability mass beyond k_max"""

    values: np.ndarray
    tail_mass: float

    @property
    def k_max(self) -> int:
        return int(self.values.size)

    @property
    def total(self) -> float:
        return math.fsum(self.values) + self.tail_mass


class PhiMoments(NamedTuple):
    """Mean and variance of the entrance time phi_j"""

    mean: float
    variance: float


def classify_regime(params: ModelParams) -> Regime:
    """
    Classify the phase of the process

    Args:
        params: Model rates

    Returns:
        Subcritical when theta < 1, Critical when theta == 1, Supercritical otherwise
    """
    theta = params.theta
    if theta < 1.0:
        return Regime.SUBCRITICAL
    if theta == 1.0:
        return Regime.CRITICAL
    return Regime.SUPERCRITICAL


def _stirling_tail(z: np.ndarray) -> np.ndarray:
    inv2 = 1.0 / (z * z)
    total = np.zeros_like(z)
    for coefficient in reversed(_STIRLING):
        total = total * inv2 + coefficient
    return total / z


def _log_gamma_ratio_large(x: np.ndarray, delta: float) -> np.ndarray:
    """ln Gamma(x+delta) - ln Gamma(x) for x >= GAMMA_CROSSOVER"""
    # (x+delta-1/2)ln(x+delta) - (x-1/2)ln(x) regrouped so nothing large cancels
    return (
        (x - 0.5) * np.log1p(delta / x)
        + delta * np.log(x + delta)
        - delta
        + _stirling_tail(x + delta)
        - _stirling_tail(x)
    )


def log_gamma_ratio(x: ArrayLike, delta: float) -> ArrayLike:
    """
    Evaluate ln Gamma(x + delta) - ln Gamma(x)

    Below GAMMA_CROSSOVER the difference of scipy's gammaln is exact enough; above it
    the Stirling form avoids cancelling two large logarithms.

    Args:
        x: Positive argument(s)
        delta: Shift with x + delta > 0

    Returns:
        The log ratio, scalar or array matching x
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x_arr)
    small = x_arr < GAMMA_CROSSOVER
    if np.any(small):
        xs = x_arr[small]
        out[small] = special.gammaln(xs + delta) - special.gammaln(xs)
    if not np.all(small):
        out[~small] = _log_gamma_ratio_large(x_arr[~small], delta)
    if np.ndim(x) == 0:
        return float(out[0])
    return out


def gamma_ratio(x: ArrayLike, delta: float) -> ArrayLike:
    """
    Evaluate Gamma(x + delta) / Gamma(x) without overflow

    Args:
        x: Positive argument(s)
        delta: Shift with x + delta > 0

    Returns:
        The ratio, scalar or array matching x
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x_arr)
    # direct quotient only while both Gamma values stay finite
    direct = (x_arr < GAMMA_CROSSOVER) & (x_arr + delta < GAMMA_OVERFLOW)
    if np.any(direct):
        xs = x_arr[direct]
        out[direct] = special.gamma(xs + delta) / special.gamma(xs)
    if not np.all(direct):
        out[~direct] = np.exp(np.atleast_1d(log_gamma_ratio(x_arr[~direct], delta)))
    if np.ndim(x) == 0:
        return float(out[0])
    return out


def _require_blocks(n: int, k: int = 1) -> None:
    if k < 1 or n < 1:
        raise DomainError(f"block counts must be at least 1, got n={n}, k={k}")
    if k > n:
        raise DomainError(f"target k={k} exceeds start n={n}")


def _require_subcritical(params: ModelParams) -> float:
    theta = params.theta
    if not 0.0 < theta < 1.0:
        raise RegimeError(
            f"theta={theta:g} is outside (0, 1); this quantity only exists in the subcritical regime"
        )
    return theta


def _require_fragmentation(params: ModelParams) -> float:
    if params.lam == 0.0:
        raise DomainError("lambda=0 never fragments; the quantity is undefined")
    return params.theta


def p_descend(params: ModelParams, n: int, k: int, method: str = "gamma") -> float:
    """
    Probability that the chain started with n blocks reaches k blocks before fragmenting

    p_{n,k} = Gamma(k+theta)Gamma(n) / (Gamma(n+theta)Gamma(k))

    Args:
        params: Model rates
        n: Starting block count
        k: Target block count, 1 <= k <= n
        method: "gamma" for the Gamma-ratio form, "recurrence" for the product
            of the per-step survival factors j/(j+theta)

    Returns:
        Probability in (0, 1]
    """
    _require_blocks(n, k)
    theta = params.theta
    if n == k or theta == 0.0:
        return 1.0
    if method == "gamma":
        return math.exp(log_gamma_ratio(k, theta) - log_gamma_ratio(n, theta))
    if method == "recurrence":
        j = np.arange(k, n, dtype=float)
        return math.exp(math.fsum(np.log1p(-theta / (j + theta))))
    raise DomainError(f"unknown method {method!r}")


def frag_state_pmf(params: ModelParams, n: int) -> np.ndarray:
    """
    Law of the block count at the moment of the first fragmentation, starting from n blocks

    Args:
        params: Model rates (lambda > 0)
        n: Starting block count

    Returns:
        Array r where r[k-1] = r_k^{(n)}, k = 1..n
    """
    _require_blocks(n)
    theta = _require_fragmentation(params)
    k = np.arange(1, n + 1, dtype=float)
    # Gamma(k-1+theta)/Gamma(k) scaled by Gamma(n)/Gamma(n+theta), combined as logs
    return theta * np.exp(log_gamma_ratio(k, theta - 1.0) - log_gamma_ratio(n, theta))


def holding_time(params: ModelParams, k: ArrayLike) -> ArrayLike:
    """
    Expected holding time u_k = 2 / (2*lambda*k + c*k*(k-1)) in a state with k blocks

    Returns infinity for k = 1 when lambda = 0 (state 1 is then absorbing).
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise DomainError("holding time needs k >= 1")
    rate = np.asarray(params.jump_rate(k_arr), dtype=float)
    with np.errstate(divide="ignore"):
        u = 1.0 / rate
    return u if u.ndim else float(u)


def descent_time(params: ModelParams, n: int, k: int) -> float:
    """
    Expected time of a skip-free descent from n to k blocks, t_k^{(n)} = sum_{j=k+1}^{n} u_j
    """
    _require_blocks(n, k)
    if n == k:
        return 0.0
    j = np.arange(k + 1, n + 1, dtype=float)
    return math.fsum(holding_time(params, j))


def mean_time_to_frag(params: ModelParams, n: int) -> float:
    """
    Expected time until the first fragmentation event when starting from n blocks

    E_n[tau] = sum_k (t_k^{(n)} + u_k) * r_k^{(n)}

    Args:
        params: Model rates (lambda > 0)
        n: Starting block count

    Returns:
        Expected time
    """
    r = frag_state_pmf(params, n)
    u = holding_time(params, np.arange(1, n + 1, dtype=float))
    # t_k + u_k is the suffix sum of u from k to n
    suffix = np.cumsum(u[::-1])[::-1]
    return math.fsum(r * suffix)


def stationary_pmf(params: ModelParams, k: ArrayLike) -> ArrayLike:
    """
    Beta-Geometric(1-theta, theta) stationary probability of k blocks

    rho(k) = (1-theta)/Gamma(theta) * Gamma(k-1+theta)/Gamma(k+1)

    Args:
        params: Model rates, subcritical
        k: Block count(s), k >= 1

    Returns:
        Probability, scalar or array matching k
    """
    theta = _require_subcritical(params)
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 1):
        raise DomainError("stationary pmf is defined for k >= 1")
    rho = (1.0 - theta) / special.gamma(theta) * np.asarray(gamma_ratio(k_arr, theta - 1.0)) / k_arr
    return rho if rho.ndim else float(rho)


def stationary_tail(params: ModelParams, k_max: int) -> float:
    """Exact mass P(N > k_max) = Gamma(k_max+theta) / (Gamma(theta) Gamma(k_max+1))"""
    theta = _require_subcritical(params)
    if k_max < 0:
        raise DomainError("k_max must be nonnegative")
    return gamma_ratio(k_max + 1, theta - 1.0) / special.gamma(theta)


def stationary_table(params: ModelParams, k_max: int) -> PmfTable:
    """
    Stationary pmf on {1..k_max} with the exact tail mass attached

    Args:
        params: Model rates, subcritical
        k_max: Cutoff

    Returns:
        PmfTable whose values plus tail_mass sum to one
    """
    if k_max < 1:
        raise DomainError("k_max must be at least 1")
    values = stationary_pmf(params, np.arange(1, k_max + 1, dtype=float))
    return PmfTable(values=np.asarray(values), tail_mass=stationary_tail(params, k_max))


def stationary_pgf(params: ModelParams, s: float) -> float:
    """Probability generating function G(s) = 1 - (1-s)^{1-theta} of the stationary law"""
    theta = _require_subcritical(params)
    if not 0.0 <= s < 1.0:
        raise DomainError(f"s={s} is outside [0, 1)")
    return -math.expm1((1.0 - theta) * math.log1p(-s))


def stationary_normalizer(params: ModelParams) -> float:
    """(2/c) * sum_k Gamma(k-1+theta)/Gamma(k+1) = Gamma(1+theta) / (lambda (1-theta))"""
    theta = _require_subcritical(params)
    return special.gamma(1.0 + theta) / (params.lam * (1.0 - theta))


def hitting_time_from_zero(params: ModelParams, k: ArrayLike) -> ArrayLike:
    """
    Expected first hitting time of k blocks when started from infinitely many

    e_k = 2 / (c (1-theta) k)
    """
    theta = _require_subcritical(params)
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 1):
        raise DomainError("hitting time needs k >= 1")
    e = 2.0 / (params.c * (1.0 - theta) * k_arr)
    return e if e.ndim else float(e)


def mean_return_time(params: ModelParams, k: int) -> float:
    """Mean time between successive entries into k blocks, 1 / (rho(k) * rate_k)"""
    return 1.0 / (stationary_pmf(params, k) * params.jump_rate(k))


def hitting_time_via_return(params: ModelParams, k: int) -> float:
    """
    Hitting time of k from infinity recovered from the return-time identity

    A return to k needs a fragmentation and a new descent, so e_k equals the mean
    return time minus the expected time to the first fragmentation from k.
    """
    return mean_return_time(params, k) - mean_time_to_frag(params, k)


def excursion_reach_weight(params: ModelParams, n: ArrayLike) -> ArrayLike:
    """
    Excursion measure of the excursions that reach n blocks, Gamma(n+theta)/Gamma(n),
    normalised so that the excursion-measure constant equals one
    """
    theta = _require_subcritical(params)
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 1):
        raise DomainError("reach level must be at least 1")
    return gamma_ratio(n, theta)


def occupation_before_one(params: ModelParams, k: int) -> float:
    """
    Expected time spent with k blocks before the first visit to one block, g_k = u_k / p_{k,1}
    """
    _require_subcritical(params)
    if k < 2:
        raise DomainError("occupation before one is defined for k >= 2")
    return holding_time(params, k) / p_descend(params, k, 1)


def expected_visits(params: ModelParams, k: int) -> float:
    """Mean number of excursions that reach k blocks before the chain first hits one block"""
    _require_fragmentation(params)
    return 1.0 / p_descend(params, k, 1)


def occupation_series(params: ModelParams, m: int) -> np.ndarray:
    """
    Partial sums S_1..S_m of the excursion occupation ratios s_k/s_1

    Each term equals theta Gamma(k+theta) / (Gamma(k) Gamma(1+theta) k (k-1+theta)),
    which simplifies to Gamma(k-1+theta) / (Gamma(theta) Gamma(k+1)). The series
    converges to 1/(1-theta) for theta < 1 and diverges for theta >= 1.
    """
    theta = _require_fragmentation(params)
    if m < 1:
        raise DomainError("need at least one term")
    k = np.arange(1, m + 1, dtype=float)
    terms = np.exp(log_gamma_ratio(k, theta - 1.0) - special.gammaln(theta)) / k
    return np.cumsum(terms)


def aldous_phi_moments(params: ModelParams, j: int) -> PhiMoments:
    """
    Moments of phi_j, the entrance time from infinity down to j blocks

    phi_j is a sum of independent exponentials with rates c*C(i,2) + lambda*i, i > j.

    Args:
        params: Model rates (lambda = 0 gives the pure Kingman case)
        j: Level, j >= 1

    Returns:
        PhiMoments(mean, variance)
    """
    if j < 1:
        raise DomainError("entrance level must be at least 1")
    a = params.theta - 1.0
    q = j + 1.0
    scale = 2.0 / params.c
    if abs(a) < q / 4.0:
        # 1/(i(i+a)) expanded in powers of a/i, summed with Hurwitz zeta
        m = np.arange(_ZETA_TERMS, dtype=float)
        powers = (-a) ** m
        first = math.fsum(powers * special.zeta(m + 2.0, q))
        second = math.fsum((m + 1.0) * powers * special.zeta(m + 4.0, q))
    else:
        dpsi = special.digamma(q + a) - special.digamma(q)
        first = dpsi / a
        second = (special.polygamma(1, q) + special.polygamma(1, q + a) - 2.0 * dpsi / a) / (a * a)
    return PhiMoments(mean=scale * first, variance=scale * scale * second)
