"""Adaptive estimation engine over a worker pool.

Runs are indexed 0, 1, 2, ... and each gets a deterministically derived
seed, so the estimate for a fixed (query, seed-of-seeds, policy) triple
is bit-identical regardless of worker count or scheduling. Workers
execute runs concurrently; samples are committed strictly in run-index
order, and convergence is checked once per block.
"""

from __future__ import annotations

import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .quatex import ObservationPlan, QueryAst, evaluate_run
from .rng import splitmix64_at
from .stats import PointAccumulator, StoppingPolicy, check_convergence, half_width

log = logging.getLogger(__name__)


def seed_for_run(seed_of_seeds: int, run_index: int) -> int:
    """Seed of the run with the given index: SplitMix64 output stream."""
    return splitmix64_at(seed_of_seeds, run_index)


@dataclass(frozen=True)
class EngineConfig:
    workers: int = 1
    seed_of_seeds: int = 1
    policy: StoppingPolicy = field(default_factory=StoppingPolicy)
    horizon: int = 600
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class PointEstimate:
    step: int
    observable: str
    mean: float
    half_width: float
    n: int


@dataclass(frozen=True)
class TrajectoryResult:
    points: tuple[PointEstimate, ...]
    total_runs: int
    wall_time: float
    status: str  # "converged" | "partial"


class EngineState:
    """Accumulators plus the in-order commit buffer."""

    def __init__(self, plan: ObservationPlan, policy: StoppingPolicy):
        self.plan = plan
        self.policy = policy
        self.accs = [PointAccumulator() for _ in plan.points]
        self.committed = 0
        self._buffer: dict[int, list[float]] = {}

    def commit_sample(self, run_index: int, samples: list[float]) -> None:
        if run_index < self.committed or run_index in self._buffer:
            raise ValueError(f"duplicate commit for run index {run_index}")
        self._buffer[run_index] = samples
        while self.committed in self._buffer:
            row = self._buffer.pop(self.committed)
            for acc, x in zip(self.accs, row):
                acc.add(x)  # frozen accumulators ignore updates
            self.committed += 1

    def check_block(self) -> None:
        """Freeze every point whose CI target is met; block boundary only."""
        for acc in self.accs:
            if not acc.frozen and check_convergence(acc, self.policy):
                acc.freeze(self.policy.alpha)

    @property
    def all_frozen(self) -> bool:
        return all(acc.frozen for acc in self.accs)


def run_query(
    ast: QueryAst,
    plan: ObservationPlan,
    sim_factory,
    config: EngineConfig,
    verbose: bool = False,
) -> TrajectoryResult:
    """Estimate the plan's expectation trajectory to the policy's precision."""
    if plan.max_step > config.horizon:
        raise ValueError(
            f"plan requires step {plan.max_step} beyond horizon {config.horizon}"
        )
    policy = config.policy
    start = time.monotonic()
    state = EngineState(plan, policy)

    def execute(run_index: int, handle) -> list[float]:
        seed = seed_for_run(config.seed_of_seeds, run_index)
        last_error: Exception | None = None
        for attempt in range(config.max_retries + 1):
            try:
                return evaluate_run(ast, plan, handle[0], seed)
            except Exception as exc:  # noqa: BLE001 - retried with a fresh simulator
                last_error = exc
                log.warning("run %d failed (attempt %d): %s", run_index, attempt + 1, exc)
                try:
                    handle[0].close()
                except Exception:  # noqa: BLE001
                    pass
                handle[0] = sim_factory()
        raise RuntimeError(
            f"run {run_index} failed after {config.max_retries + 1} attempts"
        ) from last_error

    workers = config.workers
    handles = [[sim_factory()] for _ in range(workers)]
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        next_index = 0
        while True:
            block = range(next_index, next_index + policy.block_size)
            if pool is None:
                for i in block:
                    state.commit_sample(i, execute(i, handles[0]))
            else:
                # each worker owns one handle and serially executes its
                # slice of the block, so no handle is shared concurrently
                def worker_slice(w: int) -> list[tuple[int, list[float]]]:
                    return [
                        (i, execute(i, handles[w])) for i in block if i % workers == w
                    ]

                results = [
                    item for part in pool.map(worker_slice, range(workers)) for item in part
                ]
                for i, samples in sorted(results):
                    state.commit_sample(i, samples)
            next_index += policy.block_size
            state.check_block()
            if verbose:
                frozen = sum(acc.frozen for acc in state.accs)
                print(
                    f"progress runs={state.committed} frozen={frozen}/{len(state.accs)}",
                    file=sys.stderr,
                )
            if state.all_frozen:
                status = "converged"
                break
            if policy.max_runs is not None and state.committed >= policy.max_runs:
                status = "partial"
                break
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
        for handle in handles:
            try:
                handle[0].close()
            except Exception:  # noqa: BLE001
                pass

    points = []
    total_runs = 0
    for (step, obs), acc in zip(plan.points, state.accs):
        if acc.frozen:
            est = PointEstimate(
                step, obs, acc.final_mean, acc.final_half_width, acc.n_at_convergence
            )
            total_runs = max(total_runs, acc.n_at_convergence)
        else:
            hw = half_width(acc.stat, policy.alpha) if acc.stat.n >= 2 else float("inf")
            est = PointEstimate(step, obs, acc.stat.mean, hw, acc.stat.n)
            total_runs = max(total_runs, acc.stat.n)
        points.append(est)
    return TrajectoryResult(
        points=tuple(points),
        total_runs=total_runs,
        wall_time=time.monotonic() - start,
        status=status,
    )
