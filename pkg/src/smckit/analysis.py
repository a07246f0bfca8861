"""Post-processing of campaign results.

Turns per-job trajectory estimates into counterfactual separation
metrics (significant pairwise differences at the final step and over the
tail window), directional trade-off classifications against the sweep
baseline, and a cross-experiment scorecard.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

from scipy import stats as _scipy_stats

from .stats import t_quantile


@dataclass(frozen=True)
class PointEstimate:
    step: int
    mean: float
    half_width: float
    n: int

    def __post_init__(self) -> None:
        if self.half_width < 0:
            raise ValueError("half_width must be non-negative")
        if self.n < 2:
            raise ValueError("n must be >= 2")


# One sweep point's estimated trajectory: ordered list of PointEstimate
Trajectory = list[PointEstimate]


@dataclass(frozen=True)
class ScorecardRow:
    experiment: str
    winwin: int
    mixed: int
    loselose: int
    best_obs: str
    best_point: str
    best_tail_mean: float
    mean_nsamples: dict[str, float]
    final_diff: dict[str, tuple[int, int]]
    tail_share: dict[str, float]
    partial: bool = False


def _z(alpha: float) -> float:
    return float(_scipy_stats.norm.ppf(1.0 - alpha / 2.0))


def _recover_sd(p: PointEstimate, alpha: float) -> float:
    # invert hw = t * s / sqrt(n) using the point's own dof
    return p.half_width * math.sqrt(p.n) / t_quantile(1.0 - alpha / 2.0, p.n - 1)


def significant_pair(
    a: PointEstimate, b: PointEstimate, alpha: float, method: str = "z"
) -> bool:
    """Two-sample separation test on persisted summary statistics.

    `z` reconstructs per-point sample sds from the stored half-widths and
    applies a two-sample z-test; `ci` declares significance when the
    confidence intervals are disjoint. Boundary cases are not significant.
    """
    if a.step != b.step:
        raise ValueError(f"mismatched steps: {a.step} vs {b.step}")
    diff = abs(a.mean - b.mean)
    if method == "ci":
        return diff > a.half_width + b.half_width
    if method != "z":
        raise ValueError(f"unknown method {method!r}")
    sa = _recover_sd(a, alpha)
    sb = _recover_sd(b, alpha)
    threshold = _z(alpha) * math.sqrt(sa * sa / a.n + sb * sb / b.n)
    return diff > threshold


def final_diff_count(
    trajectories: list[Trajectory], alpha: float, method: str = "z"
) -> tuple[int, int]:
    """Significant pairs at the last grid step, over all sweep-point pairs."""
    _check_common_grid(trajectories)
    k = sum(
        significant_pair(a[-1], b[-1], alpha, method)
        for a, b in combinations(trajectories, 2)
    )
    return k, math.comb(len(trajectories), 2)


def tail_metrics(
    trajectories: list[Trajectory],
    alpha: float,
    tail_fraction: float,
    method: str = "z",
) -> dict:
    """Tail means, mean tail separation share, and tail-majority count.

    The tail window is the last ceil(tail_fraction * G) grid points.
    """
    grid_len = _check_common_grid(trajectories)
    if grid_len < 2:
        raise ValueError("tail metrics need a grid of length >= 2")
    window = math.ceil(tail_fraction * grid_len)
    if window < 1:
        raise ValueError("empty tail window")
    tail_steps = range(grid_len - window, grid_len)
    tail_means = [
        sum(t[i].mean for i in tail_steps) / window for t in trajectories
    ]
    pairs = list(combinations(range(len(trajectories)), 2))
    shares = []
    majority = 0
    for i, j in pairs:
        hits = sum(
            significant_pair(trajectories[i][s], trajectories[j][s], alpha, method)
            for s in tail_steps
        )
        shares.append(hits / window)
        if hits >= window / 2:
            majority += 1
    tail_diff_share = sum(shares) / len(pairs) if pairs else 0.0
    return {
        "tail_means": tail_means,
        "tail_window": window,
        "tail_diff_share": tail_diff_share,
        "tail_majority_count": majority,
        "total_pairs": len(pairs),
    }


def best_tail_point(tail_means: list[float], direction: str) -> tuple[int, str, float]:
    """Most favorable tail mean; ties break toward the lower index."""
    if not tail_means:
        raise ValueError("need at least one sweep point")
    if direction == "lower-is-better":
        index = min(range(len(tail_means)), key=lambda i: (tail_means[i], i))
    elif direction == "higher-is-better":
        index = min(range(len(tail_means)), key=lambda i: (-tail_means[i], i))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return index, f"p{index + 1}", tail_means[index]


def classify_tradeoff(
    point_good: float, point_bad: float, baseline_good: float, baseline_bad: float
) -> str:
    """Directional label of a sweep point against the baseline.

    `good` is a higher-is-better observable, `bad` lower-is-better.
    Any tie lands in `mixed`.
    """
    better_good = point_good > baseline_good
    worse_good = point_good < baseline_good
    better_bad = point_bad < baseline_bad
    worse_bad = point_bad > baseline_bad
    if better_good and better_bad:
        return "win-win"
    if worse_good and worse_bad:
        return "lose-lose"
    return "mixed"


def _check_common_grid(trajectories: list[Trajectory]) -> int:
    if not trajectories:
        raise ValueError("no trajectories")
    grid = [p.step for p in trajectories[0]]
    for t in trajectories[1:]:
        if [p.step for p in t] != grid:
            raise ValueError("trajectories do not share a common grid")
    return len(grid)


# ---------------------------------------------------------------------------
# Campaign result loading


@dataclass
class CampaignResults:
    """Trajectories keyed (experiment, value_index, observable)."""

    trajectories: dict[tuple[str, int, str], Trajectory]
    experiments: list[str]
    values_per_experiment: dict[str, int]
    observables: list[str]
    directions: dict[str, str]
    baseline_index: dict[str, int]
    tail_fraction: float
    alpha: float
    failed_jobs: list[dict]


def load_results(result_dir: str | Path) -> CampaignResults:
    result_dir = Path(result_dir)
    manifest = json.loads((result_dir / "manifest.json").read_text())
    trajectories: dict[tuple[str, int, str], Trajectory] = {}
    experiments: list[str] = []
    values: dict[str, int] = {}
    observables: list[str] = []
    failed = []
    for job in manifest["jobs"]:
        exp = job["experiment"]
        if exp not in experiments:
            experiments.append(exp)
        obs = job["observable"]
        if obs not in observables:
            observables.append(obs)
        values[exp] = max(values.get(exp, 0), job["value_index"] + 1)
        if job["status"] == "failed":
            failed.append(job)
            continue
        rows = []
        with open(result_dir / job["csv"], newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(
                    PointEstimate(
                        step=int(row["step"]),
                        mean=float(row["mean"]),
                        half_width=float(row["ci_halfwidth"]),
                        n=int(row["n_at_convergence"]),
                    )
                )
        trajectories[(exp, job["value_index"], obs)] = rows
    return CampaignResults(
        trajectories=trajectories,
        experiments=experiments,
        values_per_experiment=values,
        observables=observables,
        directions=manifest.get("directions", {}),
        baseline_index=manifest.get("baseline_index", {}),
        tail_fraction=manifest.get("tail_fraction", 0.3),
        alpha=manifest.get("alpha", 0.05),
        failed_jobs=failed,
    )


# ---------------------------------------------------------------------------
# Scorecard


def build_scorecard(
    results: CampaignResults,
    pair: tuple[str, str],
    alpha: float | None = None,
    tail_fraction: float | None = None,
    method: str = "z",
) -> list[ScorecardRow]:
    """One row per experiment; `pair` is (higher-better, lower-better)."""
    alpha = results.alpha if alpha is None else alpha
    tail_fraction = results.tail_fraction if tail_fraction is None else tail_fraction
    obs_good, obs_bad = pair
    rows = []
    for exp in results.experiments:
        n_values = results.values_per_experiment[exp]
        baseline = results.baseline_index.get(exp, 0)
        partial = False
        per_obs_tail: dict[str, list[float]] = {}
        mean_nsamples: dict[str, float] = {}
        final_diff: dict[str, tuple[int, int]] = {}
        tail_share: dict[str, float] = {}
        for obs in results.observables:
            block = [
                results.trajectories.get((exp, v, obs)) for v in range(n_values)
            ]
            if any(t is None for t in block):
                partial = True
                continue
            metrics = tail_metrics(block, alpha, tail_fraction, method)
            per_obs_tail[obs] = metrics["tail_means"]
            final_diff[obs] = final_diff_count(block, alpha, method)
            tail_share[obs] = metrics["tail_diff_share"]
            samples = [p.n for t in block for p in t]
            mean_nsamples[obs] = sum(samples) / len(samples)
        counts = {"win-win": 0, "mixed": 0, "lose-lose": 0}
        if obs_good in per_obs_tail and obs_bad in per_obs_tail:
            good, bad = per_obs_tail[obs_good], per_obs_tail[obs_bad]
            for v in range(n_values):
                if v == baseline:
                    continue
                label = classify_tradeoff(good[v], bad[v], good[baseline], bad[baseline])
                counts[label] += 1
        else:
            partial = True
        best_obs, best_point, best_tail_mean = "", "", math.nan
        best_candidates = []
        for obs, means in per_obs_tail.items():
            direction = results.directions.get(obs, "higher-is-better")
            idx, label, value = best_tail_point(means, direction)
            best_candidates.append((obs, label, value, direction))
        if best_candidates:
            # report the probe with the strongest relative improvement
            # over its own baseline tail mean
            def rel_gain(c):
                obs, label, value, direction = c
                base = per_obs_tail[obs][results.baseline_index.get(exp, 0)]
                sign = -1.0 if direction == "lower-is-better" else 1.0
                scale = abs(base) if base else 1.0
                return sign * (value - base) / scale

            best_obs, best_point, best_tail_mean, _ = max(best_candidates, key=rel_gain)
        rows.append(
            ScorecardRow(
                experiment=exp,
                winwin=counts["win-win"],
                mixed=counts["mixed"],
                loselose=counts["lose-lose"],
                best_obs=best_obs,
                best_point=best_point,
                best_tail_mean=best_tail_mean,
                mean_nsamples=mean_nsamples,
                final_diff=final_diff,
                tail_share=tail_share,
                partial=partial,
            )
        )
    return rows


def scorecard_csv(rows: list[ScorecardRow], observables: list[str]) -> str:
    header = ["experiment", "winwin", "mixed", "loselose", "best_obs", "best_point", "best_tail_mean"]
    header += [f"mean_nsamples_{o}" for o in observables]
    header += [f"final_diff_{o}" for o in observables]
    header += [f"tail_share_{o}" for o in observables]
    lines = [",".join(header)]
    for r in rows:
        cells = [
            r.experiment,
            str(r.winwin),
            str(r.mixed),
            str(r.loselose),
            r.best_obs,
            r.best_point,
            f"{r.best_tail_mean:.6g}",
        ]
        cells += [f"{r.mean_nsamples.get(o, math.nan):.1f}" for o in observables]
        cells += [
            "{}/{}".format(*r.final_diff[o]) if o in r.final_diff else ""
            for o in observables
        ]
        cells += [
            f"{r.tail_share[o]:.3f}" if o in r.tail_share else "" for o in observables
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def scorecard_text(rows: list[ScorecardRow], observables: list[str]) -> str:
    table = [
        ["experiment", "win-win", "mixed", "lose-lose", "best signal"]
        + [f"final diff {o}" for o in observables]
        + [f"tail share {o}" for o in observables]
        + [f"mean n {o}" for o in observables]
    ]
    for r in rows:
        best = f"{r.best_obs} {r.best_point} ({r.best_tail_mean:.5g})" if r.best_obs else "-"
        if r.partial:
            best += " [partial]"
        row = [r.experiment, str(r.winwin), str(r.mixed), str(r.loselose), best]
        row += [
            "{}/{}".format(*r.final_diff[o]) if o in r.final_diff else "-"
            for o in observables
        ]
        row += [
            f"{r.tail_share[o]:.3f}" if o in r.tail_share else "-" for o in observables
        ]
        row += [
            f"{r.mean_nsamples[o]:.0f}" if o in r.mean_nsamples else "-"
            for o in observables
        ]
        table.append(row)
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        for row in table
    ) + "\n"


# ---------------------------------------------------------------------------
# Plot-ready data


def emit_plotdata(
    results: CampaignResults,
    output_dir: str | Path,
    method: str = "z",
    svg: bool = False,
) -> list[str]:
    """Write long-format trajectory CSVs and per-step significance matrices."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    for exp in results.experiments:
        n_values = results.values_per_experiment[exp]
        for obs in results.observables:
            block = [results.trajectories.get((exp, v, obs)) for v in range(n_values)]
            if any(t is None for t in block):
                continue
            name = f"{exp}_{obs}_trajectories.csv"
            lines = ["sweep_point,step,mean,lower,upper"]
            for v, trajectory in enumerate(block):
                for p in trajectory:
                    lines.append(
                        f"p{v + 1},{p.step},{p.mean!r},"
                        f"{p.mean - p.half_width!r},{p.mean + p.half_width!r}"
                    )
            (out / name).write_text("\n".join(lines) + "\n")
            written.append(name)
            name = f"{exp}_{obs}_significance.csv"
            lines = ["step,i,j,significant"]
            grid_len = len(block[0])
            for s in range(grid_len):
                for i, j in combinations(range(n_values), 2):
                    sig = significant_pair(block[i][s], block[j][s], results.alpha, method)
                    lines.append(f"{block[0][s].step},p{i + 1},p{j + 1},{int(sig)}")
            (out / name).write_text("\n".join(lines) + "\n")
            written.append(name)
            if svg:
                name = f"{exp}_{obs}.svg"
                (out / name).write_text(_svg_chart(block, f"{exp} {obs}"))
                written.append(name)
    return written


def _svg_chart(block: list[Trajectory], title: str) -> str:
    width, height, pad = 640, 360, 45
    steps = [p.step for p in block[0]]
    lo = min(p.mean - p.half_width for t in block for p in t)
    hi = max(p.mean + p.half_width for t in block for p in t)
    if hi == lo:
        hi = lo + 1.0
    sx = lambda s: pad + (s - steps[0]) / max(steps[-1] - steps[0], 1) * (width - 2 * pad)
    sy = lambda v: height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)
    palette = ["#1b6ca8", "#d1495b", "#3a7d44", "#8d5a97", "#c77f2e", "#4f6d7a"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for v, trajectory in enumerate(block):
        color = palette[v % len(palette)]
        upper = [(sx(p.step), sy(p.mean + p.half_width)) for p in trajectory]
        lower = [(sx(p.step), sy(p.mean - p.half_width)) for p in reversed(trajectory)]
        band = " ".join(f"{x:.1f},{y:.1f}" for x, y in upper + lower)
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        line = " ".join(f"{sx(p.step):.1f},{sy(p.mean):.1f}" for p in trajectory)
        parts.append(
            f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - pad + 4}" y="{pad + 14 * v}" font-size="11" '
            f'fill="{color}">p{v + 1}</text>'
        )
    parts.append(
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        'stroke="black"/>'
    )
    parts.append(
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
