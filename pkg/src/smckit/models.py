"""Built-in in-process simulators.

`counter` and the calibration models (`bernoulli:p`, `gaussian:mu,sd`)
have known statistics and exist for testing and calibration. The
`switching` model is a desk-scale expectation-feedback economy: five
forecasting heuristics compete through a discrete-choice switching
mechanism with tunable intensity of choice, adoption inertia, and score
memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .blackbox import InProcessSimulator
from .rng import Xoshiro256StarStar

HEURISTICS = ("NAI", "ADA", "WTR", "STR", "AA")


class CounterSimulator(InProcessSimulator):
    """Deterministic counter; "VAL" mirrors the step index."""

    def _reinit(self, seed: int) -> None:
        pass

    def _step_once(self) -> None:
        pass

    def _observe(self, name: str) -> float | None:
        if name == "VAL":
            return float(self.step)
        return None


class BernoulliSimulator(InProcessSimulator):
    """Fresh Bernoulli(p) draw for "X" at every step."""

    def __init__(self, p: float = 0.5):
        super().__init__()
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must be in [0,1], got {p}")
        self.p = p
        self.x = 0.0
        self._rng: Xoshiro256StarStar | None = None

    def _reinit(self, seed: int) -> None:
        self._rng = Xoshiro256StarStar(seed)

    def _step_once(self) -> None:
        self.x = 1.0 if self._rng.uniform() < self.p else 0.0

    def _observe(self, name: str) -> float | None:
        if name == "X":
            return self.x
        return None


class GaussianSimulator(InProcessSimulator):
    """Fresh N(mu, sd^2) draw for "X" at every step."""

    def __init__(self, mu: float = 0.0, sd: float = 1.0):
        super().__init__()
        if sd < 0:
            raise ValueError(f"sd must be non-negative, got {sd}")
        self.mu = mu
        self.sd = sd
        self.x = 0.0
        self._rng: Xoshiro256StarStar | None = None

    def _reinit(self, seed: int) -> None:
        self._rng = Xoshiro256StarStar(seed)

    def _step_once(self) -> None:
        self.x = self.mu + self.sd * self._rng.gaussian()

    def _observe(self, name: str) -> float | None:
        if name == "X":
            return self.x
        return None


@dataclass(frozen=True)
class SwitchingParams:
    """Parameters of the heuristic-switching model.

    Defaults are the within-sweep baselines of the sensitivity campaign
    grids.
    """

    beta: float = 0.4  # intensity of choice
    delta_s: float = 0.7  # inertia in rule adoption
    eta: float = 0.7  # memory in performance scores
    omega_ada: float = 0.65
    omega_wtr: float = 0.4
    omega_str: float = 1.3
    omega_aa: float = 0.5
    feedback: float = 0.9
    noise_sd: float = 0.1
    n_agents: int = 100

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        for name in ("delta_s", "eta", "omega_aa"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        for name in ("omega_ada", "omega_wtr", "omega_str"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.feedback < 1.0:
            raise ValueError(f"feedback must be in (0,1), got {self.feedback}")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")


@dataclass
class SwitchingState:
    x_prev: float = 0.0  # x_{t-1}
    x_prev2: float = 0.0  # x_{t-2}
    anchor: float = 0.0  # running mean of all past x
    anchor_n: int = 0
    ada_memory: float = 0.0  # previous ADA forecast
    scores: list[float] = field(default_factory=lambda: [0.0] * 5)
    shares: list[float] = field(default_factory=lambda: [0.2] * 5)


def forecast(h: str, state: SwitchingState, params: SwitchingParams) -> float:
    x1, x2 = state.x_prev, state.x_prev2
    if h == "NAI":
        return x1
    if h == "ADA":
        return state.ada_memory + params.omega_ada * (x1 - state.ada_memory)
    if h == "WTR":
        return x1 + params.omega_wtr * (x1 - x2)
    if h == "STR":
        return x1 + params.omega_str * (x1 - x2)
    if h == "AA":
        return params.omega_aa * state.anchor + (1 - params.omega_aa) * x1 + (x1 - x2)
    raise ValueError(f"unknown heuristic {h!r}")


def update_scores(
    state: SwitchingState, params: SwitchingParams, forecasts: list[float], realized: float
) -> None:
    eta = params.eta
    for i in range(5):
        err = realized - forecasts[i]
        state.scores[i] = eta * state.scores[i] - (1 - eta) * err * err


def switch_shares(state: SwitchingState, params: SwitchingParams) -> list[float]:
    top = max(params.beta * u for u in state.scores)
    weights = [math.exp(params.beta * u - top) for u in state.scores]
    total = sum(weights)
    logit = [w / total for w in weights]
    mixed = [
        params.delta_s * n + (1 - params.delta_s) * p
        for n, p in zip(state.shares, logit)
    ]
    norm = sum(mixed)
    return [m / norm for m in mixed]


class SwitchingSimulator(InProcessSimulator):
    """Expectation-feedback aggregate driven by five competing heuristics."""

    def __init__(self, params: SwitchingParams | None = None):
        super().__init__()
        self.params = params or SwitchingParams()
        self.state = SwitchingState()
        self.x = 0.0
        self.ferr = 0.0
        self._rng: Xoshiro256StarStar | None = None

    def _reinit(self, seed: int) -> None:
        self._rng = Xoshiro256StarStar(seed)
        self.state = SwitchingState()
        self.x = 0.0
        self.ferr = 0.0

    def _step_once(self) -> None:
        state, params = self.state, self.params
        forecasts = [forecast(h, state, params) for h in HEURISTICS]
        mean_forecast = sum(n * f for n, f in zip(state.shares, forecasts))
        x = params.feedback * mean_forecast + params.noise_sd * self._rng.gaussian()
        self.ferr = sum(
            n * (x - f) ** 2 for n, f in zip(state.shares, forecasts)
        )
        update_scores(state, params, forecasts, x)
        state.shares = switch_shares(state, params)
        state.ada_memory = forecasts[HEURISTICS.index("ADA")]
        state.x_prev2 = state.x_prev
        state.x_prev = x
        state.anchor_n += 1
        state.anchor += (x - state.anchor) / state.anchor_n
        self.x = x

    def _observe(self, name: str) -> float | None:
        if name == "X":
            return self.x
        if name == "FERR":
            return self.ferr
        if name.startswith("SHARE"):
            try:
                idx = int(name[5:])
            except ValueError:
                return None
            if 1 <= idx <= 5:
                return self.state.shares[idx - 1]
        return None


SWITCHING_PARAM_NAMES = frozenset(
    f.name for f in SwitchingParams.__dataclass_fields__.values()
)


def make_factory(spec: str, params: dict[str, float] | None = None):
    """Parse a builtin simulator spec into a zero-argument factory.

    Specs: `counter`, `bernoulli:p`, `gaussian:mu,sd`, `switching`.
    `params` overrides switching parameters by name.
    """
    params = dict(params or {})
    name, _, argtext = spec.partition(":")
    args = [float(a) for a in argtext.split(",")] if argtext else []

    def reject_unknown(allowed: set[str]) -> None:
        unknown = set(params) - allowed
        if unknown:
            raise ValueError(
                f"unknown parameter(s) for {name!r}: {sorted(unknown)}"
            )

    if name == "counter":
        reject_unknown(set())
        return CounterSimulator
    if name == "bernoulli":
        reject_unknown({"p"})
        p = params.get("p", args[0] if args else 0.5)
        return lambda: BernoulliSimulator(p)
    if name == "gaussian":
        reject_unknown({"mu", "sd"})
        mu = params.get("mu", args[0] if args else 0.0)
        sd = params.get("sd", args[1] if len(args) > 1 else 1.0)
        return lambda: GaussianSimulator(mu, sd)
    if name == "switching":
        unknown = set(params) - SWITCHING_PARAM_NAMES
        if unknown:
            raise ValueError(f"unknown switching parameter(s): {sorted(unknown)}")
        if "n_agents" in params:
            params["n_agents"] = int(params["n_agents"])
        sp = SwitchingParams(**params)
        return lambda: SwitchingSimulator(sp)
    raise ValueError(f"unknown builtin simulator {spec!r}")
