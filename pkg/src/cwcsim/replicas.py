"""Independent seeded replicas and their streaming summary statistics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .engine import SimConfig, Trajectory, simulate
from .model import Model

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def derive_seed(base: int, index: int) -> int:
    """Seed of replica ``index``: splitmix64 of ``base + (index + 1) * golden``.

    The mixer is a bijection on 64-bit words and the golden increment is
    odd, so distinct indices below 2**64 never collide for a fixed base.
    """
    if index < 0:
        raise ValueError("replica index must be non-negative")
    z = (base + (index + 1) * GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class GridMismatch(ValueError):
    pass


class SummaryStats:
    """Count, mean, M2, min and max per (sample time, observable).

    Cells can hold different counts when a replica stopped early at the
    event cap and only covers a prefix of the grid.
    """

    def __init__(self, times=None, names=None):
        self.times = None if times is None else tuple(times)
        self.names = None if names is None else tuple(names)
        if self.times is not None:
            shape = (len(self.times), len(self.names))
            self.count = np.zeros(shape, dtype=np.int64)
            self.mean = np.zeros(shape)
            self.m2 = np.zeros(shape)
            self.min = np.full(shape, np.inf)
            self.max = np.full(shape, -np.inf)

    @property
    def empty(self) -> bool:
        return self.times is None

    @classmethod
    def from_trajectory(cls, traj: Trajectory, times=None) -> SummaryStats:
        stats = cls(traj.times if times is None else times, traj.names)
        n = len(traj.rows)
        if n:
            values = np.asarray(traj.rows, dtype=float).reshape(n, len(traj.names))
            stats.count[:n] = 1
            stats.mean[:n] = values
            stats.min[:n] = values
            stats.max[:n] = values
        return stats

    def merge(self, other: SummaryStats) -> SummaryStats:
        """Chan's pairwise combination; the empty summary is the identity."""
        if other.empty:
            return self
        if self.empty:
            return other
        if self.times != other.times or self.names != other.names:
            raise GridMismatch("summaries cover different sample grids or observables")
        out = SummaryStats(self.times, self.names)
        na, nb = self.count, other.count
        n = na + nb
        safe = np.where(n == 0, 1, n)
        delta = other.mean - self.mean
        out.count = n
        out.mean = np.where(n == 0, 0.0, self.mean + delta * (nb / safe))
        out.m2 = self.m2 + other.m2 + delta * delta * (na * nb / safe)
        # exact when one side is empty for a cell
        only_a, only_b = nb == 0, na == 0
        out.mean = np.where(only_a, self.mean, np.where(only_b, other.mean, out.mean))
        out.m2 = np.where(only_a, self.m2, np.where(only_b, other.m2, out.m2))
        out.min = np.minimum(self.min, other.min)
        out.max = np.maximum(self.max, other.max)
        return out

    def variance(self) -> np.ndarray:
        """Sample variance (``M2 / (n - 1)``), zero where ``n < 2``."""
        denom = np.where(self.count > 1, self.count - 1, 1)
        return np.where(self.count > 1, np.maximum(self.m2, 0.0) / denom, 0.0)

    def std(self) -> np.ndarray:
        return np.sqrt(self.variance())

    def rows(self):
        """``(time, observable, n, mean, std, min, max)`` in grid order."""
        std = self.std()
        for i, t in enumerate(self.times):
            for k, name in enumerate(self.names):
                n = int(self.count[i, k])
                if n:
                    yield (t, name, n, float(self.mean[i, k]), float(std[i, k]),
                           float(self.min[i, k]), float(self.max[i, k]))

    def __eq__(self, other):
        if not isinstance(other, SummaryStats):
            return NotImplemented
        if self.empty or other.empty:
            return self.empty and other.empty
        return (self.times == other.times and self.names == other.names
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("count", "mean", "m2", "min", "max")))


@dataclass
class ReplicaMetrics:
    index: int
    seed: int
    reason: str
    events: int
    final: dict[str, float]
    first_crossing: dict[str, float | None]


@dataclass
class TerminalMetrics:
    replicas: list[ReplicaMetrics] = field(default_factory=list)
    thresholds: dict[str, float] = field(default_factory=dict)

    def finals(self, name: str) -> list[float]:
        return [r.final[name] for r in self.replicas]

    def crossings(self, name: str) -> list[float | None]:
        return [r.first_crossing.get(name) for r in self.replicas]


def first_crossing(traj: Trajectory, name: str, threshold: float) -> float | None:
    """Earliest sample time at which ``name`` is at least ``threshold``."""
    for t, v in zip(traj.times, traj.column(name)):
        if v >= threshold:
            return t
    return None


def terminal_metrics(index: int, seed: int, traj: Trajectory, thresholds: dict) -> ReplicaMetrics:
    final = dict(zip(traj.names, traj.rows[-1])) if traj.rows else {}
    crossing = {name: first_crossing(traj, name, th) for name, th in thresholds.items()}
    return ReplicaMetrics(index, seed, traj.reason, traj.events, final, crossing)


@dataclass
class ReplicaPlan:
    model: Model
    n: int
    config: SimConfig  # its seed is the base seed
    workers: int = 1
    thresholds: dict[str, float] = field(default_factory=dict)
    keep_trajectories: bool = False
    engine: str = "auto"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a plan needs at least one replica")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        unknown = set(self.thresholds) - {o.name for o in self.model.observables}
        if unknown:
            raise ValueError(f"thresholds for unknown observables: {sorted(unknown)}")


@dataclass
class ReplicaFailure:
    index: int
    seed: int
    error: str


@dataclass
class ReplicaResult:
    stats: SummaryStats
    metrics: TerminalMetrics
    failures: list[ReplicaFailure]
    trajectories: dict[int, Trajectory]

    @property
    def partial(self) -> bool:
        return bool(self.failures) or any(r.reason == "event_cap" for r in self.metrics.replicas)


def _one(model: Model, config: SimConfig, engine: str):
    try:
        return simulate(model, config, engine=engine), None
    except Exception as exc:  # reported per replica, never aborts the batch
        return None, f"{type(exc).__name__}: {exc}"


def run_replicas(plan: ReplicaPlan, progress=None) -> ReplicaResult:
    """Run every replica and reduce in replica-index order.

    The result does not depend on ``plan.workers`` or on completion order.
    ``progress(done, total)`` is called as replicas finish.
    """
    base = plan.config.seed
    configs = [SimConfig(plan.config.t_end, plan.config.dt_sample, derive_seed(base, i),
                         plan.config.max_events) for i in range(plan.n)]
    outcomes: list = [None] * plan.n
    workers = min(plan.workers, plan.n)
    if workers == 1:
        for i, cfg in enumerate(configs):
            outcomes[i] = _one(plan.model, cfg, plan.engine)
            if progress:
                progress(i + 1, plan.n)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_one, plan.model, cfg, plan.engine): i for i, cfg in enumerate(configs)}
            done = 0
            for fut in as_completed(futures):
                outcomes[futures[fut]] = fut.result()
                done += 1
                if progress:
                    progress(done, plan.n)

    grid = tuple(plan.config.sample_times())
    names = tuple(o.name for o in plan.model.observables)
    stats = SummaryStats()
    metrics = TerminalMetrics(thresholds=dict(plan.thresholds))
    failures = []
    kept = {}
    for i, (traj, error) in enumerate(outcomes):
        seed = configs[i].seed
        if error is not None:
            failures.append(ReplicaFailure(i, seed, error))
            continue
        part = SummaryStats.from_trajectory(traj, grid)
        if part.names != names:
            raise GridMismatch("replica observables differ from the model")
        stats = stats.merge(part)
        metrics.replicas.append(terminal_metrics(i, seed, traj, plan.thresholds))
        if plan.keep_trajectories:
            kept[i] = traj
    if stats.empty:
        stats = SummaryStats(grid, names)
    return ReplicaResult(stats, metrics, failures, kept)


def default_workers() -> int:
    env = os.environ.get("CWC_SIM_WORKERS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("CWC_SIM_WORKERS must be a positive integer")
        return n
    return 1


def median(values) -> float:
    """Median treating ``None`` (never happened) as +inf."""
    xs = sorted(math.inf if v is None else v for v in values)
    if not xs:
        return math.nan
    mid = len(xs) // 2
    if len(xs) % 2:
        return xs[mid]
    lo, hi = xs[mid - 1], xs[mid]
    return hi if math.isinf(hi) else (lo + hi) / 2
