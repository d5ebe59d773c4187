"""
Partition Module
Partition-valued fragmentation-coalescence dynamics restricted to {1..n}:
Coag/Frag operators, paintbox sampling and the event-driven process with
pairwise coalescence and shatter fragmentation.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .analytic import ModelParams
from .errors import DomainError, InvariantViolation

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Partition:
    """A partition of {1..n}; blocks are sorted tuples ordered by least element"""

    blocks: Tuple[Tuple[int, ...], ...]
    n: int

    def __post_init__(self):
        seen = [b for block in self.blocks for b in block]
        if sorted(seen) != list(range(1, self.n + 1)):
            raise InvariantViolation(f"blocks do not partition 1..{self.n}: {self.blocks}")
        for block in self.blocks:
            if not block or list(block) != sorted(block):
                raise InvariantViolation(f"block {block} is empty or unsorted")
        mins = [block[0] for block in self.blocks]
        if mins != sorted(mins):
            raise InvariantViolation("blocks are not ordered by least element")

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], n: Optional[int] = None) -> "Partition":
        """Normalise any collection of disjoint blocks into canonical order"""
        canonical = sorted((tuple(sorted(b)) for b in blocks if b), key=lambda b: b[0])
        size = n if n is not None else sum(len(b) for b in canonical)
        return cls(blocks=tuple(canonical), n=size)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        """Build from labels[i] = block label of element i+1"""
        groups = {}
        for element, label in enumerate(labels, start=1):
            groups.setdefault(int(label), []).append(element)
        return cls.from_blocks(groups.values(), n=len(labels))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(blocks=tuple((i,) for i in range(1, n + 1)), n=n)

    @classmethod
    def single_block(cls, n: int) -> "Partition":
        return cls(blocks=(tuple(range(1, n + 1)),), n=n)

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def __str__(self) -> str:
        return format_partition(self)


def format_partition(pi: Partition) -> str:
    """Canonical text form, e.g. {1,3|2|4}"""
    return "{" + "|".join(",".join(str(x) for x in block) for block in pi.blocks) + "}"


def parse_partition(text: str) -> Partition:
    """Inverse of format_partition"""
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise InvariantViolation(f"not a partition literal: {text!r}")
    body = text[1:-1]
    if not body:
        raise InvariantViolation("empty partition literal")
    try:
        blocks = [tuple(int(x) for x in part.split(",")) for part in body.split("|")]
    except ValueError as e:
        raise InvariantViolation(f"bad element in {text!r}: {e}") from e
    partition = Partition.from_blocks(blocks)
    if format_partition(partition) != text:
        raise InvariantViolation(f"{text!r} is not in canonical form")
    return partition


def coag(pi: Partition, pi2: Partition) -> Partition:
    """
    Coagulate the blocks of pi according to pi2

    Block i of the result is the union of the blocks pi_j with j in pi2_i.

    Args:
        pi: Partition whose blocks are merged
        pi2: Pattern partition, defined on at least block_count(pi) indices

    Returns:
        Coagulated partition of the same ground set as pi
    """
    m = pi.block_count
    if pi2.n < m:
        raise InvariantViolation(f"pattern on {pi2.n} indices cannot coagulate {m} blocks")
    merged = []
    for pattern in pi2.blocks:
        union = [x for j in pattern if j <= m for x in pi.blocks[j - 1]]
        if union:
            merged.append(union)
    return Partition.from_blocks(merged, n=pi.n)


def frag(pi: Partition, pi2: Partition, k: int) -> Partition:
    """
    Fragment the k-th block of pi (1-based) by intersecting it with the blocks of pi2

    Args:
        pi: Partition to fragment
        pi2: Partition of a ground set containing the k-th block
        k: Block index

    Returns:
        Partition with block k replaced by its nonempty intersections with pi2
    """
    if not 1 <= k <= pi.block_count:
        raise DomainError(f"block index {k} outside 1..{pi.block_count}")
    target = pi.blocks[k - 1]
    if target[-1] > pi2.n:
        raise InvariantViolation(f"pattern on {pi2.n} elements cannot split block {target}")
    pieces = [b for i, b in enumerate(pi.blocks, start=1) if i != k]
    target_set = set(target)
    for pattern in pi2.blocks:
        piece = [x for x in pattern if x in target_set]
        if piece:
            pieces.append(piece)
    return Partition.from_blocks(pieces, n=pi.n)


def restrict(pi: Partition, m: int) -> Partition:
    """Restriction of pi to {1..m}"""
    if not 1 <= m <= pi.n:
        raise DomainError(f"cannot restrict a partition of {pi.n} to {m}")
    return Partition.from_blocks(([x for x in block if x <= m] for block in pi.blocks), n=m)


def asymptotic_frequencies(pi: Partition) -> np.ndarray:
    """Block sizes divided by n, in decreasing order"""
    sizes = np.array(sorted((len(b) for b in pi.blocks), reverse=True), dtype=float)
    return sizes / pi.n


def paintbox_sample(masses: Sequence[float], n: int, rng: np.random.Generator) -> Partition:
    """
    Sample an exchangeable partition of {1..n} from a mass partition

    Each element drops a uniform on [0,1); elements landing in the same mass interval
    share a block and elements landing in the leftover dust are singletons.

    Args:
        masses: Decreasing nonnegative masses with sum at most one
        n: Ground-set size
        rng: Generator

    Returns:
        Partition
    """
    masses = np.asarray(masses, dtype=float)
    if n < 1:
        raise DomainError("n must be at least 1")
    if np.any(masses < 0) or np.any(np.diff(masses) > 0):
        raise DomainError("masses must be nonnegative and decreasing")
    if masses.sum() > 1.0 + MASS_TOLERANCE:
        raise DomainError(f"masses sum to {masses.sum():.15g} > 1")
    uniforms = rng.random(n)
    interval = np.searchsorted(np.cumsum(masses), uniforms, side="right")
    dust = interval >= masses.size
    labels = interval.copy()
    # dust elements get labels beyond every interval, one each
    labels[dust] = masses.size + np.flatnonzero(dust)
    return Partition.from_labels(labels)


def spacing_frequencies(j: int, rng: np.random.Generator) -> np.ndarray:
    """
    Lengths of the pieces of [0,1] cut at j-1 uniform points, in decreasing order

    This is the law of the block frequencies of an excursion entrance holding j blocks.
    """
    if j < 1:
        raise DomainError("need at least one block")
    cuts = np.sort(rng.random(j - 1))
    spacings = np.diff(np.concatenate(([0.0], cuts, [1.0])))
    return np.sort(spacings)[::-1]


@dataclass
class EffcPath:
    """Event record of the restricted process; partitions[i] holds from times[i]"""

    times: List[float] = field(default_factory=list)
    counts: List[int] = field(default_factory=list)
    partitions: List[Partition] = field(default_factory=list)
    fragmentation_times: List[float] = field(default_factory=list)
    t_end: float = 0.0
    truncated: bool = False


class RestrictedEffc:
    """
    Working state of the process on {1..n}

    Keeps a block-index array (labels) and a block list (members) in step so that a
    merge costs the size of the smaller block. Canonical ordering is only built
    when a snapshot is taken.
    """

    def __init__(self, params: ModelParams, initial: Partition, rng: np.random.Generator):
        """
        Initialize the working state

        Args:
            params: Model rates
            initial: Starting partition
            rng: Generator owned by this run
        """
        self.params = params
        self.n = initial.n
        self.rng = rng
        self.labels = np.empty(self.n + 1, dtype=np.int64)
        self.members: List[List[int]] = []
        self.active: List[int] = []
        self.position: List[int] = []
        self.free: List[int] = []
        for block in initial.blocks:
            self._new_slot(list(block))

    def _new_slot(self, elements: List[int]) -> int:
        if self.free:
            slot = self.free.pop()
            self.members[slot] = elements
            self.position[slot] = len(self.active)
        else:
            slot = len(self.members)
            self.members.append(elements)
            self.position.append(len(self.active))
        self.active.append(slot)
        self.labels[elements] = slot
        return slot

    def _drop_slot(self, slot: int) -> None:
        index = self.position[slot]
        last = self.active[-1]
        self.active[index] = last
        self.position[last] = index
        self.active.pop()
        self.members[slot] = []
        self.free.append(slot)

    @property
    def block_count(self) -> int:
        return len(self.active)

    def snapshot(self) -> Partition:
        return Partition.from_blocks((self.members[s] for s in self.active), n=self.n)

    def coalesce(self, a: int, b: int) -> None:
        """Merge the blocks in active positions a and b"""
        keep, gone = self.active[a], self.active[b]
        if len(self.members[keep]) < len(self.members[gone]):
            keep, gone = gone, keep
        moved = self.members[gone]
        self.members[keep].extend(moved)
        self.labels[moved] = keep
        self._drop_slot(gone)

    def shatter(self, a: int) -> None:
        """Replace the block in active position a by the singletons of its elements"""
        slot = self.active[a]
        elements = self.members[slot]
        if len(elements) == 1:
            return
        self.members[slot] = [elements[0]]
        for x in elements[1:]:
            self._new_slot([x])

    def run(
        self,
        t_end: float,
        max_events: int = 1_000_000,
        snapshots: bool = True,
        stop_at_fragmentation: bool = False,
    ) -> EffcPath:
        """
        Advance the process to t_end

        Coalescence of each pair of blocks happens at rate c and each block shatters at
        rate lambda, so the next event is exponential with rate c*C(b,2) + lambda*b.

        Args:
            t_end: Horizon
            max_events: Event budget; when reached the path is flagged truncated
            snapshots: Record a Partition after every event (off records counts only)
            stop_at_fragmentation: End the run at the first shatter event

        Returns:
            EffcPath
        """
        c, lam = self.params.c, self.params.lam
        path = EffcPath(t_end=t_end)
        t = 0.0
        path.times.append(t)
        path.counts.append(self.block_count)
        if snapshots:
            path.partitions.append(self.snapshot())
        events = 0
        while True:
            b = self.block_count
            coalesce_rate = 0.5 * c * b * (b - 1)
            rate = coalesce_rate + lam * b
            if rate == 0.0:
                break
            t += self.rng.exponential(1.0 / rate)
            if t > t_end:
                break
            if events >= max_events:
                path.truncated = True
                path.t_end = path.times[-1]
                logger.warning("partition event budget of %d exhausted at t=%.6g", max_events, path.t_end)
                break
            events += 1
            if self.rng.random() * rate < coalesce_rate:
                first = int(self.rng.integers(b))
                second = int(self.rng.integers(b - 1))
                if second >= first:
                    second += 1
                self.coalesce(first, second)
            else:
                self.shatter(int(self.rng.integers(b)))
                path.fragmentation_times.append(t)
            path.times.append(t)
            path.counts.append(self.block_count)
            if snapshots:
                path.partitions.append(self.snapshot())
            if stop_at_fragmentation and path.fragmentation_times:
                path.t_end = t
                break
        return path


def simulate_restricted_effc(
    params: ModelParams,
    n: int,
    t_end: float,
    rng: np.random.Generator,
    initial: Optional[Partition] = None,
    max_events: int = 1_000_000,
    snapshots: bool = True,
) -> EffcPath:
    """
    Simulate the partition-valued process on {1..n} up to t_end

    Args:
        params: Model rates
        n: Ground-set size
        t_end: Horizon
        rng: Generator
        initial: Starting partition (defaults to singletons)
        max_events: Event budget
        snapshots: Whether to store a Partition after each event

    Returns:
        EffcPath with the piecewise-constant path
    """
    if t_end <= 0:
        raise DomainError("t_end must be positive")
    start = initial if initial is not None else Partition.singletons(n)
    if start.n != n:
        raise DomainError(f"initial partition is on {start.n} elements, expected {n}")
    return RestrictedEffc(params, start, rng).run(t_end, max_events=max_events, snapshots=snapshots)


def first_fragmentation_time(params: ModelParams, n: int, rng: np.random.Generator) -> float:
    """Time of the first shatter event of the process started from the singletons of {1..n}"""
    if params.lam == 0.0:
        raise DomainError("lambda=0 never fragments")
    process = RestrictedEffc(params, Partition.singletons(n), rng)
    path = process.run(np.inf, snapshots=False, stop_at_fragmentation=True)
    return path.fragmentation_times[0]


def block_count_path(path: EffcPath) -> Tuple[np.ndarray, np.ndarray]:
    """Event times and block counts of a partition path"""
    return np.asarray(path.times, dtype=float), np.asarray(path.counts, dtype=np.int64)
