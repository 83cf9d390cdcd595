"""Budget loop, policies, trajectory logging, and allocation summaries.

Runs here use deliberately tiny budgets and optimizer schedules; full-scale
protocol behavior lives in the acceptance suite.
"""

import json
import math

import numpy as np
import pytest
import torch

from eabo.acquisition import CompareAction, EvaluateAction, posterior_utility
from eabo.config import RunConfig
from eabo.driver import (
    BudgetLoop,
    CSV_COLUMNS,
    StepRecord,
    Trajectory,
    canonical_csv,
    run,
    run_baseline,
    run_eabo,
    state_fingerprint,
    stream_seed,
    summarize_allocation,
    trajectory_csv,
    trajectory_summary,
    write_trajectory,
)
from eabo.errors import (
    BudgetExhausted,
    ConfigError,
    EmptyTrajectory,
    OracleFailure,
)
from eabo.surrogate import PosteriorCache

FAST_SURROGATE = {"steps_cold": 40, "steps_warm": 20, "inducing_count": 12}
FAST_ACQ = {"restarts": 3, "steps": 20, "raw_samples": 16}


def make_config(**overrides):
    doc = {
        "schema_version": 1,
        "benchmark": "branin",
        "costs": {"c_eval": 5.0, "c_comp": 1.0, "budget": 14.0},
        "noise": {"sigma_eval": 0.1, "sigma_comp": 0.1, "pin": True},
        "policy": "ea-bo",
        "seed": 3,
        "surrogate": dict(FAST_SURROGATE),
        "acquisition": dict(FAST_ACQ),
    }
    doc.update(overrides)
    return RunConfig.from_dict(doc)


@pytest.fixture(scope="module")
def eabo_trajectory():
    return run(make_config())


class TestSeedStreams:
    def test_deterministic(self):
        assert stream_seed(5, "oracle", 2) == stream_seed(5, "oracle", 2)

    def test_streams_distinct(self):
        seeds = {
            stream_seed(5, name)
            for name in ("oracle", "surrogate", "acquisition", "random", "final")
        }
        assert len(seeds) == 5

    def test_counters_distinct(self):
        assert stream_seed(5, "acquisition", 0) != stream_seed(5, "acquisition", 1)

    def test_masters_distinct(self):
        assert stream_seed(5, "oracle") != stream_seed(6, "oracle")


class TestFingerprints:
    def test_stable_and_discriminating(self):
        from eabo.surrogate import SurrogateConfig, initial_state

        cfg = SurrogateConfig(n_outputs=1, n_inputs=2, inducing_count=8)
        a = initial_state(cfg, seed=0)
        b = initial_state(cfg, seed=1)
        assert state_fingerprint(a) == state_fingerprint(a)
        assert state_fingerprint(a) != state_fingerprint(b)


class TestRunEabo:
    def test_budget_conservation(self, eabo_trajectory):
        traj = eabo_trajectory
        total = sum(s.cost for s in traj.steps)
        assert total == pytest.approx(traj.total_spend, abs=1e-12)
        assert traj.total_spend <= traj.config.budget
        cheapest = min(traj.config.c_eval, traj.config.c_comp)
        assert traj.total_spend + cheapest > traj.config.budget

    def test_cumulative_spend_nondecreasing(self, eabo_trajectory):
        spends = [s.cum_spend for s in eabo_trajectory.steps]
        assert all(b > a for a, b in zip(spends, spends[1:]))

    def test_iterations_sequential(self, eabo_trajectory):
        assert [s.iteration for s in eabo_trajectory.steps] == list(
            range(len(eabo_trajectory.steps))
        )

    def test_warm_start_chain(self, eabo_trajectory):
        steps = eabo_trajectory.steps
        assert steps[0].warm_fingerprint is None
        for prev, cur in zip(steps, steps[1:]):
            assert cur.warm_fingerprint == prev.fitted_fingerprint

    def test_reproducible_bit_identical(self, eabo_trajectory):
        again = run(make_config())
        assert canonical_csv(trajectory_csv(again)) == canonical_csv(
            trajectory_csv(eabo_trajectory)
        )

    def test_seed_changes_trajectory(self, eabo_trajectory):
        other = run(make_config(seed=4))
        assert canonical_csv(trajectory_csv(other)) != canonical_csv(
            trajectory_csv(eabo_trajectory)
        )

    def test_empty_when_budget_below_cheapest(self):
        base = make_config()
        tiny = RunConfig(
            benchmark=base.benchmark,
            d=base.d,
            m=base.m,
            utility=base.utility,
            c_eval=5.0,
            c_comp=1.0,
            budget=0.5,
            sigma_eval=0.1,
            sigma_comp=0.1,
            pin_noise=True,
            policy="ea-bo",
            seed=0,
            surrogate=dict(FAST_SURROGATE),
            acquisition=dict(FAST_ACQ),
        )
        traj = run(tiny)
        assert traj.steps == []
        assert traj.total_spend == 0.0
        assert traj.final_recommendation.shape == (2,)
        assert math.isfinite(traj.final_norm_utility)

    def test_unaffordable_comparisons_never_chosen(self):
        cfg = make_config(
            costs={"c_eval": 5.0, "c_comp": 1e9, "budget": 16.0}
        )
        traj = run(cfg)
        assert all(s.action.kind == "evaluate" for s in traj.steps)
        assert len(traj.steps) == 3

    def test_oracle_failure_flags_partial(self):
        class Flaky:
            def __init__(self):
                self.calls = 0

            def evaluate(self, x, seed):
                self._tick()
                return np.zeros(1)

            def compare(self, a, b, seed):
                self._tick()
                return 1

            def _tick(self):
                self.calls += 1
                if self.calls > 2:
                    raise OracleFailure("expert left")

        traj = run(make_config(), oracle=Flaky())
        assert len(traj.steps) == 2
        assert not traj.complete

    def test_propose_raises_when_exhausted(self):
        loop = BudgetLoop(make_config())
        loop.spend = 13.5
        with pytest.raises(BudgetExhausted):
            loop.propose()

    def test_recommendation_beats_sobol_screen(self):
        cfg = make_config(costs={"c_eval": 5.0, "c_comp": 1.0, "budget": 4.0})
        loop = BudgetLoop(cfg)
        from eabo.driver import _execute, default_oracle

        oracle = default_oracle(cfg)
        while loop.can_continue():
            pending = loop.propose()
            loop.commit(pending, _execute(oracle, pending.action, pending.iteration))
        traj = loop.finalize()
        cache = PosteriorCache(loop.state)
        screen = torch.quasirandom.SobolEngine(2, scramble=True, seed=11).draw(
            64, dtype=torch.float64
        )
        best_screen = float(posterior_utility(cache, loop.utility, screen).max())
        rec_value = float(
            posterior_utility(
                cache,
                loop.utility,
                torch.as_tensor(traj.final_recommendation).unsqueeze(0),
            )[0]
        )
        assert rec_value >= best_screen - 1e-6

    def test_policy_guards(self):
        with pytest.raises(ConfigError):
            run_eabo(make_config(policy="kg-eval"))
        with pytest.raises(ConfigError):
            run_baseline(make_config())


class TestBaselines:
    def test_kg_eval_never_compares(self):
        traj = run_baseline(make_config(policy="kg-eval"))
        assert traj.steps
        assert all(s.action.kind == "evaluate" for s in traj.steps)
        assert all(s.voi_comp_raw is None for s in traj.steps)

    def test_kg_comp_never_evaluates(self):
        traj = run_baseline(make_config(policy="kg-comp"))
        assert traj.steps
        assert all(s.action.kind == "compare" for s in traj.steps)
        assert all(s.voi_eval_raw is None for s in traj.steps)

    def test_rand_comp_never_evaluates(self):
        traj = run_baseline(make_config(policy="rand-comp"))
        assert all(s.action.kind == "compare" for s in traj.steps)
        assert all(s.rule == "random-policy" for s in traj.steps)

    def test_rand_eval_tracks_recommendations(self):
        traj = run_baseline(
            make_config(policy="rand-eval", costs={"c_eval": 5.0, "c_comp": 1.0, "budget": 16.0})
        )
        assert len(traj.steps) == 3
        for s in traj.steps:
            assert s.recommendation.shape == (2,)
            assert math.isfinite(s.norm_utility)
        assert math.isfinite(traj.final_norm_utility)

    def test_restricted_guard_stops_at_source_cost(self):
        traj = run_baseline(make_config(policy="kg-eval"))
        assert traj.total_spend == 10.0


def make_step(i, kind, cost, cum, d=2):
    if kind == "evaluate":
        action = EvaluateAction(x=np.full(d, 0.5), cost=cost)
        outcome = np.zeros(1)
    else:
        action = CompareAction(x_a=np.full(d, 0.25), x_b=np.full(d, 0.75), cost=cost)
        outcome = 1
    return StepRecord(
        iteration=i,
        action=action,
        cost=cost,
        cum_spend=cum,
        outcome=outcome,
        recommendation=np.full(d, 0.5),
        norm_utility=0.9,
        rule="voi-per-cost",
        voi_eval_raw=0.1,
        voi_comp_raw=0.05,
        warm_fingerprint=None,
        fitted_fingerprint="abc",
        wall_ms=1.0,
    )


def synthetic_trajectory(kinds_costs):
    steps, cum = [], 0.0
    for i, (kind, cost) in enumerate(kinds_costs):
        cum += cost
        steps.append(make_step(i, kind, cost, cum))
    return Trajectory(config=make_config(), steps=steps)


class TestSummarizeAllocation:
    def test_all_evaluations_zero(self):
        traj = synthetic_trajectory([("evaluate", 5.0)] * 4)
        alloc = summarize_allocation(traj)
        assert alloc.comp_fraction == 0.0
        assert alloc.comp_fraction_early == 0.0
        assert alloc.comp_fraction_late == 0.0

    def test_all_comparisons_one(self):
        alloc = summarize_allocation(synthetic_trajectory([("compare", 1.0)] * 8))
        assert alloc.comp_fraction == 1.0
        assert alloc.comp_fraction_early == 1.0
        assert alloc.comp_fraction_late == 1.0

    def test_alternating_gives_one_sixth(self):
        pairs = [("evaluate", 5.0), ("compare", 1.0)] * 4
        alloc = summarize_allocation(synthetic_trajectory(pairs))
        assert alloc.comp_fraction == pytest.approx(1.0 / 6.0, abs=1e-12)

    def test_quartiles_split_pro_rata(self):
        # spend intervals: c[0,1) c[1,2) e[2,7) c[7,8); total 8, quarter 2
        traj = synthetic_trajectory(
            [("compare", 1.0), ("compare", 1.0), ("evaluate", 5.0), ("compare", 1.0)]
        )
        alloc = summarize_allocation(traj)
        assert alloc.comp_fraction_early == pytest.approx(1.0, abs=1e-12)
        assert alloc.comp_fraction_late == pytest.approx(0.5, abs=1e-12)

    def test_fractions_in_unit_interval(self, eabo_trajectory):
        alloc = summarize_allocation(eabo_trajectory)
        for val in (
            alloc.comp_fraction,
            alloc.comp_fraction_early,
            alloc.comp_fraction_late,
        ):
            assert 0.0 <= val <= 1.0
        assert alloc.comp_spend + alloc.eval_spend == pytest.approx(
            alloc.total_spend, abs=1e-12
        )

    def test_empty_trajectory_rejected(self):
        with pytest.raises(EmptyTrajectory):
            summarize_allocation(Trajectory(config=make_config()))


class TestTrajectorySerialization:
    def test_header(self, eabo_trajectory):
        text = trajectory_csv(eabo_trajectory)
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_one_row_per_step(self, eabo_trajectory):
        text = trajectory_csv(eabo_trajectory)
        assert len(text.splitlines()) == 1 + len(eabo_trajectory.steps)

    def test_canonical_strips_wall_ms(self, eabo_trajectory):
        text = trajectory_csv(eabo_trajectory)
        canon = canonical_csv(text)
        assert canon.splitlines()[0] == ",".join(CSV_COLUMNS[:-1])
        assert len(canon.splitlines()) == len(text.splitlines())

    def test_row_formats(self, eabo_trajectory):
        rows = trajectory_csv(eabo_trajectory).splitlines()[1:]
        d = 2
        for row in rows:
            parts = row.split(",")
            assert parts[1] in ("evaluate", "compare")
            coords = parts[2].split(";")
            if parts[1] == "evaluate":
                assert len(coords) == d
                assert len(parts[5].split(";")) == 1
            else:
                assert len(coords) == 2 * d
                assert parts[5] in ("0", "1")
            rec = [float(v) for v in parts[6].split(";")]
            assert len(rec) == d
            assert float(parts[3]) in (1.0, 5.0)

    def test_floats_round_trip(self, eabo_trajectory):
        row = trajectory_csv(eabo_trajectory).splitlines()[1].split(",")
        step = eabo_trajectory.steps[0]
        assert float(row[4]) == step.cum_spend
        assert float(row[7]) == step.norm_utility

    def test_write_files(self, eabo_trajectory, tmp_path):
        csv_path = tmp_path / "run.csv"
        sidecar = write_trajectory(eabo_trajectory, csv_path)
        assert csv_path.exists()
        doc = json.loads(open(sidecar).read())
        assert doc["config"] == eabo_trajectory.config.to_dict()
        assert doc["n_steps"] == len(eabo_trajectory.steps)
        assert doc["complete"] is True
        assert "allocation" in doc
        import hashlib

        canon = canonical_csv(open(csv_path).read())
        assert doc["csv_sha256"] == hashlib.sha256(canon.encode()).hexdigest()

    def test_summary_of_empty_trajectory(self):
        traj = Trajectory(config=make_config())
        doc = trajectory_summary(traj)
        assert doc["n_steps"] == 0
        assert "allocation" not in doc
