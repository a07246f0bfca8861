"""Online statistics, Student-t confidence intervals, and stopping policy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy import stats as _scipy_stats


@dataclass
class RunningStat:
    """Welford accumulator for mean and sum of squared deviations."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        if not math.isfinite(x):
            raise ValueError(f"non-finite sample: {x!r}")
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        """Unbiased sample variance (n >= 2)."""
        if self.n < 2:
            raise ValueError("variance requires at least two samples")
        return self.m2 / (self.n - 1)

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class StoppingPolicy:
    alpha: float = 0.05
    delta: float = 0.01
    block_size: int = 30
    max_runs: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0,1), got {self.alpha}")
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.block_size < 2:
            raise ValueError(f"block size must be >= 2, got {self.block_size}")
        if self.max_runs is not None and self.max_runs < 1:
            raise ValueError("max_runs must be positive when set")


@dataclass
class PointAccumulator:
    """Per observation point statistics plus convergence freeze state."""

    stat: RunningStat = field(default_factory=RunningStat)
    frozen: bool = False
    n_at_convergence: int | None = None
    final_mean: float | None = None
    final_half_width: float | None = None

    def add(self, x: float) -> None:
        if self.frozen:
            return
        self.stat.add(x)

    def freeze(self, alpha: float) -> None:
        self.frozen = True
        self.n_at_convergence = self.stat.n
        self.final_mean = self.stat.mean
        self.final_half_width = half_width(self.stat, alpha)


def t_quantile(p: float, dof: int) -> float:
    """Inverse CDF of Student's t with `dof` degrees of freedom."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0,1), got {p}")
    if dof < 1:
        raise ValueError(f"dof must be positive, got {dof}")
    return float(_scipy_stats.t.ppf(p, dof))


def half_width(stat: RunningStat, alpha: float) -> float:
    """Student-t confidence interval half-width for the mean."""
    if stat.n < 2:
        raise ValueError("half_width requires at least two samples")
    return t_quantile(1.0 - alpha / 2.0, stat.n - 1) * stat.sd / math.sqrt(stat.n)


def check_convergence(acc: PointAccumulator, policy: StoppingPolicy) -> bool:
    """True iff the point's CI half-width has reached the policy target.

    Meant to be called at block boundaries only; freezing is the
    caller's job.
    """
    n = acc.stat.n
    if n < policy.block_size:
        return False
    return half_width(acc.stat, policy.alpha) <= policy.delta
