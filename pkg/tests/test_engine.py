import pytest

from smckit import models, quatex
from smckit.engine import (
    EngineConfig,
    EngineState,
    run_query,
    seed_for_run,
)
from smckit.stats import StoppingPolicy

MASK64 = (1 << 64) - 1


def splitmix64_reference(seed, count):
    """Published SplitMix64 reference algorithm, advanced sequentially."""
    outputs = []
    state = seed & MASK64
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        outputs.append(z ^ (z >> 31))
    return outputs


def _plan_query(lo=1, step=1, hi=3, obs="VAL"):
    text = (
        'f(x, obs) = if (s.rval("steps") == x) then s.rval(obs) '
        f"else # f(x, obs) fi; eval parametric(E[f(x, obs)], x, {lo}, {step}, {hi});"
    )
    ast = quatex.parse(text)
    return ast, quatex.expand_parametric(ast, {"obs": obs})


class TestSeedForRun:
    def test_matches_reference_sequence(self):
        expected = splitmix64_reference(1, 10)
        assert [seed_for_run(1, i) for i in range(10)] == expected

    def test_matches_reference_for_other_masters(self):
        for master in (0, 7, 2**63, MASK64):
            expected = splitmix64_reference(master, 5)
            assert [seed_for_run(master, i) for i in range(5)] == expected

    def test_pairwise_distinct(self):
        seeds = [seed_for_run(1, k) for k in range(10)]
        assert len(set(seeds)) == 10

    def test_pure(self):
        assert seed_for_run(1, 3) == seed_for_run(1, 3)


class TestCommitOrdering:
    def _state(self):
        _, plan = _plan_query()
        return EngineState(plan, StoppingPolicy(delta=0.1, block_size=2))

    def test_out_of_order_commits_applied_in_index_order(self):
        state = self._state()
        state.commit_sample(2, [3.0, 3.0, 3.0])
        assert state.committed == 0  # buffered until 0 and 1 arrive
        state.commit_sample(0, [1.0, 1.0, 1.0])
        assert state.committed == 1
        state.commit_sample(1, [2.0, 2.0, 2.0])
        assert state.committed == 3
        assert state.accs[0].stat.mean == pytest.approx(2.0)

    def test_duplicate_index_rejected(self):
        state = self._state()
        state.commit_sample(0, [1.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="duplicate"):
            state.commit_sample(0, [1.0, 1.0, 1.0])
        state.commit_sample(2, [1.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="duplicate"):
            state.commit_sample(2, [9.0, 9.0, 9.0])

    def test_frozen_point_ignores_samples(self):
        state = self._state()
        state.accs[1].stat.add(5.0)
        state.accs[1].stat.add(5.0)
        state.accs[1].freeze(0.05)
        state.commit_sample(0, [1.0, 9.0, 1.0])
        assert state.accs[1].stat.n == 2
        assert state.accs[0].stat.n == 1


class TestRunQuery:
    def test_counter_converges_in_one_block(self):
        ast, plan = _plan_query(101, 10, 600)
        config = EngineConfig(policy=StoppingPolicy(delta=0.005), horizon=600)
        result = run_query(ast, plan, models.CounterSimulator, config)
        assert result.status == "converged"
        assert result.total_runs == 30
        assert [p.mean for p in result.points] == [float(s) for s in range(101, 600, 10)]
        assert all(p.half_width == 0.0 for p in result.points)
        assert all(p.n == 30 for p in result.points)

    def test_worker_count_invariance(self):
        ast, plan = _plan_query(1, 1, 5, obs="X")
        results = []
        for workers in (1, 3, 8):
            config = EngineConfig(
                workers=workers,
                seed_of_seeds=1,
                policy=StoppingPolicy(delta=0.2),
                horizon=10,
            )
            results.append(
                run_query(ast, plan, lambda: models.GaussianSimulator(0, 1), config)
            )
        assert results[0].points == results[1].points == results[2].points
        assert results[0].total_runs == results[1].total_runs == results[2].total_runs

    def test_bernoulli_sample_size_near_clt_prediction(self):
        ast, plan = _plan_query(2, 1, 2, obs="X")
        hits = 0
        for rep in range(5):
            config = EngineConfig(
                seed_of_seeds=rep + 1,
                policy=StoppingPolicy(delta=0.05, alpha=0.05),
                horizon=5,
            )
            result = run_query(ast, plan, lambda: models.BernoulliSimulator(0.5), config)
            hits += 360 <= result.total_runs <= 450
        assert hits >= 4

    def test_max_runs_partial_status(self):
        ast, plan = _plan_query(1, 1, 2, obs="X")
        config = EngineConfig(
            policy=StoppingPolicy(delta=1e-6, max_runs=60), horizon=5
        )
        result = run_query(ast, plan, lambda: models.GaussianSimulator(0, 1), config)
        assert result.status == "partial"
        assert result.total_runs == 60

    def test_total_runs_is_max_point_n(self):
        # mix a deterministic and a noisy observable via two grids of
        # the same observable at different variance steps is not
        # possible with one model, so check the invariant directly
        ast, plan = _plan_query(1, 1, 3, obs="X")
        config = EngineConfig(policy=StoppingPolicy(delta=0.1), horizon=5)
        result = run_query(ast, plan, lambda: models.GaussianSimulator(0, 0.5), config)
        assert result.total_runs == max(p.n for p in result.points)
        assert result.total_runs % 30 == 0

    def test_halving_delta_never_decreases_cost(self):
        ast, plan = _plan_query(1, 1, 3, obs="X")
        for seed in range(10):
            ns = {}
            for delta in (0.1, 0.05):
                config = EngineConfig(
                    seed_of_seeds=seed,
                    policy=StoppingPolicy(delta=delta),
                    horizon=5,
                )
                result = run_query(
                    ast, plan, lambda: models.GaussianSimulator(0, 1), config
                )
                ns[delta] = [p.n for p in result.points]
            assert all(b >= a for a, b in zip(ns[0.1], ns[0.05]))

    def test_horizon_too_small_rejected(self):
        ast, plan = _plan_query(101, 10, 600)
        config = EngineConfig(policy=StoppingPolicy(delta=0.1), horizon=500)
        with pytest.raises(ValueError, match="horizon"):
            run_query(ast, plan, models.CounterSimulator, config)

    def test_failed_runs_retried_with_fresh_simulator(self):
        failures = {"left": 2}

        class Flaky(models.CounterSimulator):
            def reset(self, seed):
                if failures["left"] > 0:
                    failures["left"] -= 1
                    raise RuntimeError("synthetic crash")
                super().reset(seed)

        ast, plan = _plan_query(1, 1, 2)
        config = EngineConfig(policy=StoppingPolicy(delta=0.1), horizon=5)
        result = run_query(ast, plan, Flaky, config)
        assert result.status == "converged"

    def test_retry_budget_exhaustion_raises(self):
        class Broken(models.CounterSimulator):
            def reset(self, seed):
                raise RuntimeError("always down")

        ast, plan = _plan_query(1, 1, 2)
        config = EngineConfig(policy=StoppingPolicy(delta=0.1), horizon=5)
        with pytest.raises(RuntimeError, match="failed after"):
            run_query(ast, plan, Broken, config)
