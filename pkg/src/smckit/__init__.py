"""Statistical model checking toolkit for black-box discrete-event simulators."""

from .engine import EngineConfig, TrajectoryResult, run_query, seed_for_run
from .quatex import ObservationPlan, QueryAst, expand_parametric, parse
from .stats import PointAccumulator, RunningStat, StoppingPolicy

__all__ = [
    "EngineConfig",
    "ObservationPlan",
    "PointAccumulator",
    "QueryAst",
    "RunningStat",
    "StoppingPolicy",
    "TrajectoryResult",
    "expand_parametric",
    "parse",
    "run_query",
    "seed_for_run",
]

__version__ = "0.1.0"
