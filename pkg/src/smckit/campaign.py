"""Declarative multi-sweep campaign execution.

A campaign config (YAML) names a simulator, a temporal grid, a set of
observables with per-observable precision targets, and a list of
one-parameter sweep experiments. Each (experiment, parameter value,
observable) combination becomes one independent estimation job; results
are persisted as one trajectory CSV per job plus a manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import models, quatex
from .blackbox import LaunchSpec, spawn_external
from .engine import EngineConfig, TrajectoryResult, run_query, seed_for_run
from .stats import StoppingPolicy

log = logging.getLogger(__name__)

CSV_HEADER = "experiment,param_name,param_value,observable,step,mean,ci_halfwidth,n_at_convergence"


class ConfigError(Exception):
    """Campaign config failed validation; message carries the field path."""


@dataclass(frozen=True)
class ObservableSpec:
    name: str
    delta: float
    direction: str = "higher-is-better"

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ConfigError(f"observables.{self.name}.delta must be > 0")
        if self.direction not in ("higher-is-better", "lower-is-better"):
            raise ConfigError(
                f"observables.{self.name}.direction must be higher-is-better "
                f"or lower-is-better, got {self.direction!r}"
            )


@dataclass(frozen=True)
class SweepExperiment:
    id: str
    parameter: str
    values: tuple[float, ...]
    baseline_index: int = 0

    def __post_init__(self) -> None:
        if len(self.values) < 2:
            raise ConfigError(f"experiments.{self.id}.values needs >= 2 entries")
        if len(set(self.values)) != len(self.values):
            raise ConfigError(f"experiments.{self.id}.values must be pairwise distinct")
        if not 0 <= self.baseline_index < len(self.values):
            raise ConfigError(f"experiments.{self.id}.baseline_index out of range")


@dataclass(frozen=True)
class CampaignConfig:
    simulator: str  # builtin spec, or "external" with command set
    command: tuple[str, ...] = ()
    horizon: int = 600
    grid_lo: int = 101
    grid_step: int = 10
    grid_hi: int = 600
    alpha: float = 0.05
    block_size: int = 30
    workers: int = 1
    seed_of_seeds: int = 1
    max_runs: int | None = None
    tail_fraction: float = 0.3
    observables: tuple[ObservableSpec, ...] = ()
    experiments: tuple[SweepExperiment, ...] = ()

    def __post_init__(self) -> None:
        if not self.observables:
            raise ConfigError("observables must be non-empty")
        names = [o.name for o in self.observables]
        if len(set(names)) != len(names):
            raise ConfigError("observable names must be unique")
        if not self.experiments:
            raise ConfigError("experiments must be non-empty")
        ids = [e.id for e in self.experiments]
        if len(set(ids)) != len(ids):
            raise ConfigError("experiment ids must be unique")
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ConfigError("tail_fraction must be in (0,1]")
        if self.grid_step < 1 or self.grid_lo > self.grid_hi or self.grid_lo < 1:
            raise ConfigError("grid must satisfy 1 <= lo <= hi and step >= 1")
        if self.simulator == "external" and not self.command:
            raise ConfigError("external simulator requires a command")

    @property
    def grid(self) -> list[int]:
        return list(range(self.grid_lo, self.grid_hi + 1, self.grid_step))


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"missing field {context}{key}")
    return mapping[key]


def load_config(path: str | Path) -> CampaignConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    grid = raw.get("grid", {})
    observables = tuple(
        ObservableSpec(
            name=_require(o, "name", "observables[]."),
            delta=float(_require(o, "delta", f"observables.{o.get('name')}.")),
            direction=o.get("direction", "higher-is-better"),
        )
        for o in _require(raw, "observables", "")
    )
    experiments = tuple(
        SweepExperiment(
            id=str(_require(e, "id", "experiments[].")),
            parameter=str(_require(e, "parameter", f"experiments.{e.get('id')}.")),
            values=tuple(float(v) for v in _require(e, "values", f"experiments.{e.get('id')}.")),
            baseline_index=int(e.get("baseline_index", 0)),
        )
        for e in _require(raw, "experiments", "")
    )
    command = raw.get("command", [])
    if isinstance(command, str):
        command = command.split()
    return CampaignConfig(
        simulator=str(_require(raw, "simulator", "")),
        command=tuple(str(c) for c in command),
        horizon=int(raw.get("horizon", 600)),
        grid_lo=int(grid.get("lo", 101)),
        grid_step=int(grid.get("step", 10)),
        grid_hi=int(grid.get("hi", 600)),
        alpha=float(raw.get("alpha", 0.05)),
        block_size=int(raw.get("block", 30)),
        workers=int(raw.get("workers", 1)),
        seed_of_seeds=int(raw.get("seed_of_seeds", 1)),
        max_runs=int(raw["max_runs"]) if raw.get("max_runs") is not None else None,
        tail_fraction=float(raw.get("tail_fraction", 0.3)),
        observables=observables,
        experiments=experiments,
    )


@dataclass(frozen=True)
class Job:
    ordinal: int
    experiment: SweepExperiment
    value_index: int
    observable: ObservableSpec


@dataclass
class JobResult:
    job: Job
    trajectory: TrajectoryResult | None
    csv_path: str | None
    error: str | None = None


def enumerate_jobs(config: CampaignConfig) -> list[Job]:
    jobs = []
    ordinal = 0
    for experiment in config.experiments:
        for value_index in range(len(experiment.values)):
            for obs in config.observables:
                jobs.append(Job(ordinal, experiment, value_index, obs))
                ordinal += 1
    return jobs


def _query_for(config: CampaignConfig, obs: str) -> tuple[quatex.QueryAst, quatex.ObservationPlan]:
    text = (
        "obsAtStep(x, obs) =\n"
        '  if (s.rval("steps") == x) then s.rval(obs)\n'
        "  else # obsAtStep(x, obs) fi;\n"
        f"eval parametric(E[obsAtStep(x, obs)], x, {config.grid_lo}, "
        f"{config.grid_step}, {config.grid_hi});\n"
    )
    ast = quatex.parse(text)
    plan = quatex.expand_parametric(ast, {"obs": obs}, horizon=config.horizon)
    return ast, plan


def _sim_factory(config: CampaignConfig, job: Job):
    if config.simulator == "external":
        declared = {o.name for o in config.observables}
        spec = LaunchSpec(
            command=config.command,
            experiment_id=_experiment_number(config, job.experiment),
            param_index=job.value_index + 1,  # 1-based, matching p1..pN labels
        )
        return lambda: spawn_external(spec, declared=declared)
    params = {job.experiment.parameter: job.experiment.values[job.value_index]}
    return models.make_factory(config.simulator, params)


def _experiment_number(config: CampaignConfig, experiment: SweepExperiment) -> int:
    return list(config.experiments).index(experiment) + 1


def run_job(config: CampaignConfig, job: Job, verbose: bool = False) -> TrajectoryResult:
    ast, plan = _query_for(config, job.observable.name)
    policy = StoppingPolicy(
        alpha=config.alpha,
        delta=job.observable.delta,
        block_size=config.block_size,
        max_runs=config.max_runs,
    )
    engine_config = EngineConfig(
        workers=config.workers,
        seed_of_seeds=seed_for_run(config.seed_of_seeds, job.ordinal),
        policy=policy,
        horizon=config.horizon,
    )
    return run_query(ast, plan, _sim_factory(config, job), engine_config, verbose=verbose)


def trajectory_csv(
    result: TrajectoryResult, experiment: str, param_name: str, param_value: float
) -> str:
    lines = [CSV_HEADER]
    for p in result.points:
        lines.append(
            f"{experiment},{param_name},{param_value!r},{p.observable},"
            f"{p.step},{p.mean!r},{p.half_width!r},{p.n}"
        )
    return "\n".join(lines) + "\n"


def config_hash(config: CampaignConfig) -> str:
    blob = json.dumps(
        {
            "simulator": config.simulator,
            "command": config.command,
            "horizon": config.horizon,
            "grid": [config.grid_lo, config.grid_step, config.grid_hi],
            "alpha": config.alpha,
            "block": config.block_size,
            "seed_of_seeds": config.seed_of_seeds,
            "max_runs": config.max_runs,
            "tail_fraction": config.tail_fraction,
            "observables": [
                [o.name, o.delta, o.direction] for o in config.observables
            ],
            "experiments": [
                [e.id, e.parameter, list(e.values), e.baseline_index]
                for e in config.experiments
            ],
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def run_campaign(
    config: CampaignConfig,
    output_dir: str | Path,
    fail_fast: bool = False,
    verbose: bool = False,
) -> list[JobResult]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = enumerate_jobs(config)
    results: list[JobResult] = []
    manifest_jobs = []
    campaign_start = time.monotonic()
    for job in jobs:
        name = f"{job.experiment.id}_p{job.value_index + 1}_{job.observable.name}.csv"
        param_value = job.experiment.values[job.value_index]
        try:
            trajectory = run_job(config, job, verbose=verbose)
        except Exception as exc:  # noqa: BLE001 - recorded in the manifest
            log.error("job %s failed: %s", name, exc)
            results.append(JobResult(job, None, None, error=str(exc)))
            manifest_jobs.append(
                {
                    "experiment": job.experiment.id,
                    "param_name": job.experiment.parameter,
                    "param_value": param_value,
                    "value_index": job.value_index,
                    "observable": job.observable.name,
                    "status": "failed",
                    "error": str(exc),
                }
            )
            if fail_fast:
                break
            continue
        csv_text = trajectory_csv(
            trajectory, job.experiment.id, job.experiment.parameter, param_value
        )
        (out / name).write_text(csv_text)
        results.append(JobResult(job, trajectory, name))
        manifest_jobs.append(
            {
                "experiment": job.experiment.id,
                "param_name": job.experiment.parameter,
                "param_value": param_value,
                "value_index": job.value_index,
                "observable": job.observable.name,
                "status": trajectory.status,
                "csv": name,
                "total_runs": trajectory.total_runs,
                "wall_time_s": round(trajectory.wall_time, 3),
            }
        )
    manifest = {
        "campaign_hash": config_hash(config),
        "grid": config.grid,
        "tail_fraction": config.tail_fraction,
        "alpha": config.alpha,
        "baseline_index": {e.id: e.baseline_index for e in config.experiments},
        "directions": {o.name: o.direction for o in config.observables},
        "jobs": manifest_jobs,
        "wall_time_s": round(time.monotonic() - campaign_start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return results
