"""
Exact Oracle Module
Linear algebra on the truncated chain with states {1..K}: coalescence j -> j-1 at
rate c*C(j,2), shatter j -> K at rate lambda*j. Uses no closed form from analytic.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .analytic import ModelParams
from .errors import DomainError, NumericalError

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class GeneratorMatrix:
    """
    Rate matrix of the truncated chain

    down[j-1] is the coalescence rate out of state j and frag[j-1] the shatter rate.
    The shatter from K back to K is a self-loop and has no effect on the generator.
    """

    K: int
    down: np.ndarray
    frag: np.ndarray
    rates: sparse.csr_matrix

    @property
    def exit_rates(self) -> np.ndarray:
        """Total rate of leaving each state (self-loop excluded)"""
        out = self.down + self.frag
        out[-1] = self.down[-1]
        return out


def build_generator(params: ModelParams, K: int) -> GeneratorMatrix:
    """
    Assemble the generator of the chain truncated at K

    Args:
        params: Model rates
        K: Number of states, K >= 2

    Returns:
        GeneratorMatrix with rows summing to zero
    """
    if K < 2:
        raise DomainError("K must be at least 2")
    j = np.arange(1, K + 1, dtype=float)
    down = 0.5 * params.c * j * (j - 1.0)
    frag = params.lam * j

    rows, cols, vals = [], [], []
    index = np.arange(K)
    # subdiagonal j -> j-1
    rows.append(index[1:])
    cols.append(index[:-1])
    vals.append(down[1:])
    # shatter column j -> K, K itself excluded
    rows.append(index[:-1])
    cols.append(np.full(K - 1, K - 1))
    vals.append(frag[:-1])
    off_rows = np.concatenate(rows)
    off_cols = np.concatenate(cols)
    off_vals = np.concatenate(vals)
    diagonal = -np.bincount(off_rows, weights=off_vals, minlength=K)
    rates = sparse.csr_matrix(
        (np.concatenate((off_vals, diagonal)), (np.concatenate((off_rows, index)), np.concatenate((off_cols, index)))),
        shape=(K, K),
    )
    rates.sum_duplicates()
    generator = GeneratorMatrix(K=K, down=down, frag=frag, rates=rates)
    row_sums = np.abs(np.asarray(rates.sum(axis=1)).ravel())
    scale = max(1.0, float(np.max(np.abs(diagonal))))
    if np.max(row_sums) > ROW_SUM_TOLERANCE * scale:
        raise NumericalError("generator rows do not sum to zero", {"max_row_sum": float(np.max(row_sums))})
    return generator


def residual(gen: GeneratorMatrix, pi: np.ndarray) -> float:
    """Largest entry of |pi Q|"""
    return float(np.max(np.abs(gen.rates.T @ pi)))


def stationary_solve(gen: GeneratorMatrix) -> np.ndarray:
    """
    Stationary distribution of the truncated chain

    Flow balance across the cut between {1..j-1} and {j..K}: the only downward move
    across it is j -> j-1, and every shatter from below lands on K, so
    pi_j * c*C(j,2) = lambda * sum_{i<j} i * pi_i. This gives pi in O(K).

    Args:
        gen: Generator from build_generator

    Returns:
        Probability vector over {1..K}
    """
    if gen.frag[0] == 0.0:
        raise NumericalError(
            "chain is reducible without fragmentation; state 1 absorbs",
            {"lambda": 0.0, "K": float(gen.K)},
        )
    K = gen.K
    weights = np.empty(K)
    weights[0] = 1.0
    outflow = gen.frag[0]
    for j in range(1, K):
        weights[j] = outflow / gen.down[j]
        if j < K - 1:
            outflow += gen.frag[j] * weights[j]
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericalError("stationary weights overflowed", {"total": float(total)})
    pi = weights / total
    res = residual(gen, pi)
    scale = float(np.max(np.abs(gen.rates.diagonal())))
    logger.debug("stationary solve K=%d residual=%.3g", K, res)
    if res > 1e-12 * scale:
        raise NumericalError("stationary residual too large", {"residual": res, "scale": scale})
    return pi


def exact_hitting_times(gen: GeneratorMatrix, target: int) -> np.ndarray:
    """
    Expected hitting times of the state `target` from every state

    For target < j < K each h_j is affine in the ceiling value, h_j = alpha_j + beta_j * h_K;
    a forward pass builds the coefficients, the ceiling equation h_K = 1/rate_K + h_{K-1}
    closes the system, and a second forward pass fills the states below the target.

    Args:
        gen: Generator
        target: Target state, 1 <= target <= K

    Returns:
        Array h with h[j-1] the expected time from state j; h[target-1] = 0
    """
    K = gen.K
    if not 1 <= target <= K:
        raise DomainError(f"target {target} outside 1..{K}")
    down, frag = gen.down, gen.frag
    h = np.zeros(K)

    h_top = 0.0
    if target < K:
        alphas = np.zeros(K)
        betas = np.zeros(K)
        alpha, beta = 0.0, 0.0
        for j in range(target + 1, K):
            rate = down[j - 1] + frag[j - 1]
            alpha = (1.0 + down[j - 1] * alpha) / rate
            beta = (down[j - 1] * beta + frag[j - 1]) / rate
            alphas[j - 1] = alpha
            betas[j - 1] = beta
        denominator = 1.0 - beta
        if denominator <= 0.0:
            raise NumericalError("ceiling recursion is singular", {"beta": float(beta), "K": float(K)})
        h_top = (1.0 / down[K - 1] + alpha) / denominator
        h[target:K - 1] = alphas[target:K - 1] + betas[target:K - 1] * h_top
        h[K - 1] = h_top

    previous = 0.0
    for j in range(1, target):
        rate = down[j - 1] + frag[j - 1]
        h[j - 1] = (1.0 + down[j - 1] * previous + frag[j - 1] * h_top) / rate
        previous = h[j - 1]
    if not np.all(np.isfinite(h)):
        raise NumericalError("hitting times are not finite", {"K": float(K), "target": float(target)})
    return h


def exact_time_to_fragmentation(gen: GeneratorMatrix) -> np.ndarray:
    """
    Expected time until the first shatter event from every state

    Every shatter counts, including the one from K, so this is the absorption time of
    the chain killed at its first fragmentation.
    """
    if gen.frag[0] == 0.0:
        raise NumericalError("no fragmentation: absorption time is infinite", {"lambda": 0.0})
    h = np.empty(gen.K)
    previous = 0.0
    for j in range(1, gen.K + 1):
        rate = gen.down[j - 1] + gen.frag[j - 1]
        h[j - 1] = (1.0 + gen.down[j - 1] * previous) / rate
        previous = h[j - 1]
    return h
