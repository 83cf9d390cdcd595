"""Sequential budget loop: fit, acquire, execute, log, recommend.

One BudgetLoop instance owns the state of a single run. run() drives it
against a simulated oracle; the service module drives the same loop with a
human in place of the oracle via propose/commit. Every stochastic choice
draws from a named stream derived from the master seed with a counter-based
split, so ablations can vary one stream while holding the others fixed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import (
    CompareAction,
    EvaluateAction,
    _random_action,
    dataset_utility,
    select_action_report,
    voi_comp,
    voi_eval,
)
from .benchmarks import (
    SimulatedOracle,
    expert_response,
    get_benchmark,
    noisy_evaluation,
    normalized_utility,
)
from .errors import BudgetExhausted, ConfigError, EmptyTrajectory, OracleFailure
from .surrogate import CompRecord, EvalRecord, MixedDataset, PosteriorCache, fit

BASELINES = ("kg-eval", "kg-comp", "rand-eval", "rand-comp")

_STREAMS = {
    "oracle": 0,
    "surrogate": 1,
    "acquisition": 2,
    "random": 3,
    "final": 4,
}

CSV_COLUMNS = [
    "iter",
    "action_type",
    "action_coords",
    "cost",
    "cum_spend",
    "outcome",
    "rec_coords",
    "norm_utility",
    "voi_eval_raw",
    "voi_comp_raw",
    "chosen_source",
    "wall_ms",
]


def stream_seed(master, stream, counter=0):
    """Independent 32-bit seed for a named stream and counter."""
    seq = np.random.SeedSequence([int(master), _STREAMS[stream], int(counter)])
    return int(seq.generate_state(1)[0])


def state_fingerprint(state):
    """sha256 over the state tensors, for warm-start chain verification."""
    h = hashlib.sha256()
    parts = (
        state.z,
        state.m_u,
        state.l_u,
        state.kernel.log_lengthscales,
        state.kernel.log_outputscales,
        state.log_noise_eval,
        state.log_noise_comp,
    )
    for t in parts:
        h.update(np.ascontiguousarray(t.detach().numpy()).tobytes())
    return h.hexdigest()


@dataclass
class PendingStep:
    """A proposed action plus everything worth logging about the proposal."""

    iteration: int
    action: object
    recommendation: np.ndarray
    expected_utility: float
    norm_utility: float
    rule: str
    voi_eval_raw: float | None
    voi_comp_raw: float | None
    warm_fingerprint: str | None
    fitted_fingerprint: str
    wall_ms: float


@dataclass
class StepRecord:
    """One executed action in a trajectory."""

    iteration: int
    action: object
    cost: float
    cum_spend: float
    outcome: object
    recommendation: np.ndarray
    norm_utility: float
    rule: str
    voi_eval_raw: float | None
    voi_comp_raw: float | None
    warm_fingerprint: str | None
    fitted_fingerprint: str
    wall_ms: float

    @property
    def voi_eval(self):
        return None if self.voi_eval_raw is None else max(self.voi_eval_raw, 0.0)

    @property
    def voi_comp(self):
        return None if self.voi_comp_raw is None else max(self.voi_comp_raw, 0.0)


@dataclass
class Trajectory:
    """Full record of one run."""

    config: object
    steps: list = field(default_factory=list)
    final_recommendation: np.ndarray | None = None
    final_expected_utility: float = math.nan
    final_norm_utility: float = math.nan
    final_fingerprint: str | None = None
    complete: bool = True

    @property
    def total_spend(self):
        return self.steps[-1].cum_spend if self.steps else 0.0


@dataclass(frozen=True)
class AllocationSummary:
    """Budget-weighted comparison fractions, overall and by spend quartile."""

    comp_fraction: float
    comp_fraction_early: float
    comp_fraction_late: float
    total_spend: float
    comp_spend: float
    eval_spend: float


def _allowed_kinds(policy):
    if policy in ("kg-eval", "rand-eval"):
        return ("evaluate",)
    if policy in ("kg-comp", "rand-comp"):
        return ("compare",)
    return ("evaluate", "compare")


class BudgetLoop:
    """The sequential loop of one run, driven step by step.

    propose() fits the surrogate (cold on the first iteration, warm from the
    previous state afterwards) and picks the next action under the config's
    policy; commit() records the observed outcome and pays the cost;
    finalize() refits on all data and returns the Trajectory with the final
    recommendation.
    """

    def __init__(self, config):
        self.config = config
        self.benchmark = (
            get_benchmark(config.benchmark) if config.benchmark is not None else None
        )
        self.utility = config.utility
        self.cost_model = config.cost_model()
        self.surrogate_config = config.surrogate_config()
        self.acq_config = config.acquisition_config()
        self.allowed_kinds = _allowed_kinds(config.policy)
        self.data = MixedDataset()
        self.state = None
        self.spend = 0.0
        self.iteration = 0
        self.steps = []
        self._surrogate_seed = stream_seed(config.seed, "surrogate")

    @property
    def remaining(self):
        return self.config.budget - self.spend

    def min_cost(self):
        return min(self.cost_model.cost_of(k) for k in self.allowed_kinds)

    def can_continue(self):
        return self.remaining >= self.min_cost()

    def _norm_utility(self, x):
        if self.benchmark is None:
            return math.nan
        try:
            return normalized_utility(self.benchmark, self.utility, x)
        except ValueError:
            return math.nan

    def _fit(self):
        warm = self.state
        warm_fp = state_fingerprint(warm) if warm is not None else None
        self.state = fit(
            self.data,
            self.utility,
            self.surrogate_config,
            warm_start=warm,
            seed=self._surrogate_seed,
        )
        return warm_fp, state_fingerprint(self.state)

    def propose(self):
        """Fit on the data so far and pick the next affordable action."""
        if not self.can_continue():
            raise BudgetExhausted(
                f"remaining budget {self.remaining} affords no allowed action"
            )
        t0 = time.perf_counter()
        warm_fp, fitted_fp = self._fit()
        cache = PosteriorCache(self.state)
        acq_seed = stream_seed(self.config.seed, "acquisition", self.iteration)
        policy = self.config.policy

        if policy == "ea-bo":
            report = select_action_report(
                cache,
                self.utility,
                self.cost_model,
                self.remaining,
                self.acq_config,
                seed=acq_seed,
            )
            action, rule, x_hat = report.action, report.rule, report.x_hat
            u_hat = report.u_current
            voi_e = report.eval_result.voi_raw if report.eval_result else None
            voi_c = report.comp_result.voi_raw if report.comp_result else None
        else:
            # Baselines reuse the ea-bo seed split so the shared streams
            # (dataset utility, per-source VoI) match the full policy.
            seeds = np.random.SeedSequence(int(acq_seed)).generate_state(4)
            du = dataset_utility(cache, self.utility, self.acq_config, seed=int(seeds[0]))
            u_hat, x_hat = du
            kind = self.allowed_kinds[0]
            voi_e = voi_c = None
            if policy == "kg-eval":
                res = voi_eval(
                    cache, self.utility, self.cost_model, self.acq_config,
                    seed=int(seeds[1]), dataset_value=du,
                )
                voi_e = res.voi_raw
            elif policy == "kg-comp":
                res = voi_comp(
                    cache, self.utility, self.cost_model, self.acq_config,
                    seed=int(seeds[2]), dataset_value=du,
                )
                voi_c = res.voi_raw
            else:
                res = None
            if res is not None and res.voi >= self.acq_config.epsilon:
                action, rule = res.action, "restricted-voi"
            else:
                if policy in ("kg-eval", "kg-comp"):
                    rng = np.random.default_rng(int(seeds[3]))
                    rule = "epsilon-random"
                else:
                    rng = np.random.default_rng(
                        stream_seed(self.config.seed, "random", self.iteration)
                    )
                    rule = "random-policy"
                action = _random_action(
                    kind, self.config.d, self.cost_model.cost_of(kind), rng
                )

        wall_ms = (time.perf_counter() - t0) * 1e3
        return PendingStep(
            iteration=self.iteration,
            action=action,
            recommendation=np.asarray(x_hat, dtype=float),
            expected_utility=float(u_hat),
            norm_utility=self._norm_utility(x_hat),
            rule=rule,
            voi_eval_raw=voi_e,
            voi_comp_raw=voi_c,
            warm_fingerprint=warm_fp,
            fitted_fingerprint=fitted_fp,
            wall_ms=wall_ms,
        )

    def commit(self, pending, outcome):
        """Record the outcome of a proposed action and pay its cost."""
        action = pending.action
        if action.kind == "evaluate":
            y = np.asarray(outcome, dtype=float)
            self.data.evals.append(EvalRecord(x=action.x.copy(), y=y))
            stored = y
        else:
            d = int(outcome)
            self.data.comps.append(
                CompRecord(x_a=action.x_a.copy(), x_b=action.x_b.copy(), d=d)
            )
            stored = d
        self.spend += action.cost
        step = StepRecord(
            iteration=pending.iteration,
            action=action,
            cost=action.cost,
            cum_spend=self.spend,
            outcome=stored,
            recommendation=pending.recommendation,
            norm_utility=pending.norm_utility,
            rule=pending.rule,
            voi_eval_raw=pending.voi_eval_raw,
            voi_comp_raw=pending.voi_comp_raw,
            warm_fingerprint=pending.warm_fingerprint,
            fitted_fingerprint=pending.fitted_fingerprint,
            wall_ms=pending.wall_ms,
        )
        self.steps.append(step)
        self.iteration += 1
        return step

    def finalize(self, complete=True):
        """Refit on all data and return the trajectory with x_hat."""
        _, final_fp = self._fit()
        cache = PosteriorCache(self.state)
        u_hat, x_hat = dataset_utility(
            cache,
            self.utility,
            self.acq_config,
            seed=stream_seed(self.config.seed, "final"),
        )
        return Trajectory(
            config=self.config,
            steps=list(self.steps),
            final_recommendation=np.asarray(x_hat, dtype=float),
            final_expected_utility=float(u_hat),
            final_norm_utility=self._norm_utility(x_hat),
            final_fingerprint=final_fp,
            complete=complete,
        )


def _execute(oracle, action, seed):
    if action.kind == "evaluate":
        if hasattr(oracle, "evaluate"):
            return oracle.evaluate(action.x, seed)
        return noisy_evaluation(oracle, action.x, seed)
    if hasattr(oracle, "compare"):
        return oracle.compare(action.x_a, action.x_b, seed)
    return expert_response(oracle, action.x_a, action.x_b, seed)


def default_oracle(config):
    """The simulated oracle a run uses when none is injected."""
    if config.benchmark is None:
        raise ConfigError(
            "a live problem has no simulated oracle; inject one", field="benchmark"
        )
    return SimulatedOracle(
        benchmark=get_benchmark(config.benchmark),
        utility=config.utility,
        noise_eval=config.sigma_eval,
        noise_comp=config.sigma_comp,
        seed=stream_seed(config.seed, "oracle"),
    )


def run(config, oracle=None):
    """Execute one full run of the configured policy.

    The oracle defaults to the simulated one; any object with
    evaluate(x, seed) and compare(x_a, x_b, seed) works. An OracleFailure
    aborts the loop and the partial trajectory is flagged incomplete.
    """
    loop = BudgetLoop(config)
    oracle = oracle if oracle is not None else default_oracle(config)
    complete = True
    while loop.can_continue():
        pending = loop.propose()
        try:
            outcome = _execute(oracle, pending.action, seed=pending.iteration)
        except OracleFailure:
            complete = False
            break
        loop.commit(pending, outcome)
    return loop.finalize(complete=complete)


def run_eabo(config, oracle=None):
    """Run the full cost-normalized two-source policy."""
    if config.policy != "ea-bo":
        raise ConfigError(f"run_eabo requires policy ea-bo, got {config.policy!r}", field="policy")
    return run(config, oracle)


def run_baseline(config, oracle=None):
    """Run one of the single-source or random baselines."""
    if config.policy not in BASELINES:
        raise ConfigError(
            f"run_baseline requires one of {', '.join(BASELINES)}, got {config.policy!r}",
            field="policy",
        )
    return run(config, oracle)


def summarize_allocation(trajectory):
    """Budget-weighted comparison fractions, quartiles on cumulative spend.

    Each step occupies the spend interval [cum_spend - cost, cum_spend); the
    quartile fractions measure the comparison share of the first and last
    quarter of the total spend by interval overlap, so steps straddling a
    quartile boundary contribute pro rata.
    """
    steps = trajectory.steps
    if not steps:
        raise EmptyTrajectory("cannot summarize an empty trajectory")
    total = steps[-1].cum_spend
    comp_spend = sum(s.cost for s in steps if s.action.kind == "compare")
    eval_spend = total - comp_spend

    def window_fraction(lo, hi):
        width = hi - lo
        overlap = 0.0
        for s in steps:
            if s.action.kind != "compare":
                continue
            start = s.cum_spend - s.cost
            overlap += max(0.0, min(s.cum_spend, hi) - max(start, lo))
        return overlap / width

    quarter = total / 4.0
    return AllocationSummary(
        comp_fraction=comp_spend / total,
        comp_fraction_early=window_fraction(0.0, quarter),
        comp_fraction_late=window_fraction(3.0 * quarter, total),
        total_spend=total,
        comp_spend=comp_spend,
        eval_spend=eval_spend,
    )


# ---------------------------------------------------------------------------
# trajectory serialization


def _fmt(value):
    return repr(float(value))


def _coords(arr):
    return ";".join(repr(float(v)) for v in np.asarray(arr, dtype=float).ravel())


def _action_coords(action):
    if action.kind == "evaluate":
        return _coords(action.x)
    return _coords(np.concatenate([action.x_a, action.x_b]))


def trajectory_rows(trajectory):
    """CSV rows (without header) for a trajectory."""
    rows = []
    for s in trajectory.steps:
        outcome = (
            _coords(s.outcome) if s.action.kind == "evaluate" else str(int(s.outcome))
        )
        rows.append(
            [
                str(s.iteration),
                s.action.kind,
                _action_coords(s.action),
                _fmt(s.cost),
                _fmt(s.cum_spend),
                outcome,
                _coords(s.recommendation),
                _fmt(s.norm_utility),
                "" if s.voi_eval_raw is None else _fmt(s.voi_eval_raw),
                "" if s.voi_comp_raw is None else _fmt(s.voi_comp_raw),
                s.action.kind,
                _fmt(s.wall_ms),
            ]
        )
    return rows


def trajectory_csv(trajectory):
    """The full CSV document as a string."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(trajectory_rows(trajectory))
    return buf.getvalue()


def canonical_csv(text):
    """CSV text with the wall_ms column stripped, for byte-level comparison.

    Wall time is the one nondeterministic column; everything else must be
    bit-identical across repeated runs of the same config.
    """
    lines = text.splitlines()
    return "\n".join(line.rsplit(",", 1)[0] for line in lines) + "\n"


def trajectory_summary(trajectory):
    """The JSON sidecar document: config, outcome summary, canonical hash."""
    doc = {
        "config": trajectory.config.to_dict(),
        "complete": trajectory.complete,
        "n_steps": len(trajectory.steps),
        "total_spend": trajectory.total_spend,
        "final_recommendation": (
            None
            if trajectory.final_recommendation is None
            else [float(v) for v in trajectory.final_recommendation]
        ),
        "final_expected_utility": (
            None
            if math.isnan(trajectory.final_expected_utility)
            else trajectory.final_expected_utility
        ),
        "final_norm_utility": (
            None
            if math.isnan(trajectory.final_norm_utility)
            else trajectory.final_norm_utility
        ),
        "final_fingerprint": trajectory.final_fingerprint,
        "csv_sha256": hashlib.sha256(
            canonical_csv(trajectory_csv(trajectory)).encode()
        ).hexdigest(),
    }
    if trajectory.steps:
        alloc = summarize_allocation(trajectory)
        doc["allocation"] = {
            "comp_fraction": alloc.comp_fraction,
            "comp_fraction_early": alloc.comp_fraction_early,
            "comp_fraction_late": alloc.comp_fraction_late,
            "comp_spend": alloc.comp_spend,
            "eval_spend": alloc.eval_spend,
        }
    return doc


def write_trajectory(trajectory, csv_path):
    """Write the CSV and its JSON sidecar; returns the sidecar path."""
    csv_path = str(csv_path)
    with open(csv_path, "w", newline="") as fh:
        fh.write(trajectory_csv(trajectory))
    sidecar = csv_path[: -len(".csv")] + ".json" if csv_path.endswith(".csv") else csv_path + ".json"
    with open(sidecar, "w") as fh:
        json.dump(trajectory_summary(trajectory), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar
