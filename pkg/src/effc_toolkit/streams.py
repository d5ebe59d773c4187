"""
Random Stream Module
Deterministic seeding and replica-parallel execution.
Every replica owns a Philox (counter-based) generator spawned from one root seed,
so results never depend on the number of worker threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

from .config import thread_cap

logger = logging.getLogger(__name__)

T = TypeVar("T")


def make_generator(seed: Optional[int]) -> np.random.Generator:
    """Single counter-based generator for a sequential run"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_generators(seed: Optional[int], count: int) -> List[np.random.Generator]:
    """
    Independent generators for replicas 0..count-1

    Args:
        seed: Root seed (64-bit)
        count: Number of replica streams

    Returns:
        List of generators; stream i depends only on (seed, i)
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def run_replicas(
    task: Callable[[np.random.Generator], T],
    seed: Optional[int],
    replicas: int,
    threads: Optional[int] = None,
) -> List[T]:
    """
    Run a task once per replica and return results ordered by replica index

    The compiled kernels release the GIL, so a thread pool gives real parallelism.

    Args:
        task: Function of a generator
        seed: Root seed
        replicas: Number of replicas
        threads: Worker cap; defaults to EFFC_THREADS / CPU count

    Returns:
        List of task results, index i from stream i
    """
    generators = spawn_generators(seed, replicas)
    workers = max(1, min(threads or thread_cap(), replicas))
    logger.debug("running %d replicas on %d threads", replicas, workers)
    if workers == 1:
        return [task(rng) for rng in generators]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, generators))
