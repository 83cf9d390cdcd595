"""Cost-normalized value-of-information acquisition.

Dataset utility u(D) = max_x E[U(f(x))], the evaluation VoI (one-shot
knowledge gradient over Matheron fantasy draws), the comparison VoI (exact
two-term expectation over the binary outcome), and the action-selection
rule that maximizes VoI per unit cost among affordable actions.

Both acquisition surfaces are optimized jointly with their K inner fantasy
points by Adam under per-restart gradient clipping, box projection onto
[0, 1]^d, and Sobol multistart. All randomness derives from an explicit
seed, so identical (posterior, config, seed) give identical actions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import BudgetExhausted, NonFiniteObjective
from .fantasy import fantasy_comp_mean_var, matheron_draws, matheron_observations
from .surrogate import PosteriorCache
from .utility import delta_moments, expected_utility

VOI_TIE_TOL = 1e-12


def _as_cache(posterior):
    return posterior if isinstance(posterior, PosteriorCache) else PosteriorCache(posterior)


def _check_box(name, x):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a flat coordinate vector")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} must lie inside the unit box, got {arr}")
    return arr


@dataclass(frozen=True)
class EvaluateAction:
    """Request one noisy vector evaluation of f at x."""

    x: np.ndarray
    cost: float

    def __post_init__(self):
        object.__setattr__(self, "x", _check_box("x", self.x))
        if not self.cost > 0.0:
            raise ValueError("cost must be positive")

    @property
    def kind(self):
        return "evaluate"

    def coords(self):
        return [self.x]


@dataclass(frozen=True)
class CompareAction:
    """Request one noisy expert comparison between x_a and x_b."""

    x_a: np.ndarray
    x_b: np.ndarray
    cost: float

    def __post_init__(self):
        object.__setattr__(self, "x_a", _check_box("x_a", self.x_a))
        object.__setattr__(self, "x_b", _check_box("x_b", self.x_b))
        if not self.cost > 0.0:
            raise ValueError("cost must be positive")

    @property
    def kind(self):
        return "compare"

    def coords(self):
        return [self.x_a, self.x_b]


@dataclass(frozen=True)
class CostModel:
    """Fixed per-action costs and the total budget."""

    c_eval: float
    c_comp: float
    budget: float

    def __post_init__(self):
        for name in ("c_eval", "c_comp", "budget"):
            if not float(getattr(self, name)) > 0.0:
                raise ValueError(f"{name} must be positive")

    def cost_of(self, kind):
        return self.c_eval if kind == "evaluate" else self.c_comp


@dataclass
class AcquisitionConfig:
    """Optimizer and estimator settings shared by both acquisitions.

    raw_samples Sobol candidates are screened per source to pick the Adam
    starting points, mirroring the usual raw-sample initialization for
    one-shot acquisition optimization.
    """

    restarts: int = 16
    steps: int = 150
    learning_rate: float = 0.05
    clip_norm: float = 10.0
    n_fantasy: int = 8
    mc_draws: int = 16
    epsilon: float = 1e-9
    raw_samples: int = 256

    def __post_init__(self):
        if self.n_fantasy < 1:
            raise ValueError("n_fantasy must be at least 1")
        if self.restarts < 1 or self.steps < 0:
            raise ValueError("restarts must be >= 1 and steps >= 0")
        if self.mc_draws < 1:
            raise ValueError("mc_draws must be at least 1")
        if self.raw_samples < self.restarts:
            raise ValueError("raw_samples must be at least restarts")


@dataclass(frozen=True)
class AcquisitionResult:
    """Best action found for one source, with optimizer diagnostics.

    voi is floored at zero; voi_raw keeps the signed optimizer estimate.
    trace holds the final objective value of every restart.
    """

    action: object
    voi: float
    voi_raw: float
    voi_per_cost: float
    fantasy_points: np.ndarray
    trace: np.ndarray


@dataclass(frozen=True)
class SelectionReport:
    """Everything select_action computed on the way to its choice."""

    action: object
    rule: str
    u_current: float
    x_hat: np.ndarray
    eval_result: Optional[AcquisitionResult]
    comp_result: Optional[AcquisitionResult]


def _sobol(dim, count, seed):
    eng = torch.quasirandom.SobolEngine(dim, scramble=True, seed=int(seed))
    return eng.draw(count, dtype=torch.float64)


def _optimize_batch(objective, init, config):
    """Maximize objective rows over the unit box; returns (params, values).

    One Adam instance drives all restart rows at once; the sum objective
    keeps their gradients independent. Gradients are clipped per restart.
    """
    params = init.clone().requires_grad_(True)
    opt = torch.optim.Adam([params], lr=config.learning_rate)
    for _ in range(config.steps):
        opt.zero_grad()
        values = objective(params)
        loss = -values.sum()
        if not torch.isfinite(loss):
            raise NonFiniteObjective("acquisition objective became non-finite")
        loss.backward()
        with torch.no_grad():
            norms = params.grad.norm(dim=-1, keepdim=True)
            params.grad /= torch.clamp(norms / config.clip_norm, min=1.0)
        opt.step()
        with torch.no_grad():
            params.clamp_(0.0, 1.0)
    with torch.no_grad():
        values = objective(params)
    if not bool(torch.all(torch.isfinite(values))):
        raise NonFiniteObjective("acquisition objective became non-finite")
    return params.detach(), values.detach()


def posterior_utility(cache, utility, X):
    """E[U(f(x))] under the posterior at query rows X, shape (..., n)."""
    mean, var = cache.mean_var(X)
    return expected_utility(utility, mean, var)


def dataset_utility(posterior, utility, optimizer=None, seed=0):
    """Maximize the posterior expected utility over the unit box.

    optimizer can be an AcquisitionConfig (Sobol + Adam multistart, the
    default) or an explicit (n, d) candidate grid, in which case the best
    grid row is returned without refinement. Returns (u, x_hat).
    """
    cache = _as_cache(posterior)
    if isinstance(optimizer, np.ndarray) or torch.is_tensor(optimizer):
        grid = torch.as_tensor(np.asarray(optimizer, dtype=float))
        values = posterior_utility(cache, utility, grid)
        best = int(values.argmax())
        return float(values[best]), grid[best].numpy().copy()
    config = optimizer if optimizer is not None else AcquisitionConfig()
    cand = _sobol(cache.n_inputs, config.raw_samples, seed)
    with torch.no_grad():
        screen_values = posterior_utility(cache, utility, cand)
    top = torch.topk(screen_values, config.restarts).indices

    def objective(P):
        return posterior_utility(cache, utility, P.unsqueeze(-2)).squeeze(-1)

    params, values = _optimize_batch(objective, cand[top], config)
    best = int(values.argmax())
    if float(screen_values[top[0]]) > float(values[best]):
        return float(screen_values[top[0]]), cand[top[0]].numpy().copy()
    return float(values[best]), params[best].numpy().copy()


def _eval_inner_values(cache, utility, draws, x, inner):
    """Expected utility at inner points under each fantasy outcome.

    x (R, d) candidate evaluations, inner (R, K, d) fantasy points; returns
    (mc_draws, R, K). The fantasy variance after a Gaussian observation is
    outcome-independent, so only the mean varies across draws.
    """
    ys = matheron_observations(cache, x, draws)
    cand = x.unsqueeze(-2)
    mean_c, var_c = cache.mean_var(cand)
    noise_var = torch.exp(2.0 * cache.state.log_noise_eval.detach())
    denom = var_c + noise_var
    k_xc = cache.cross_cov(inner, cand).squeeze(-2)
    mean_q, var_q = cache.mean_var(inner)
    gain = (ys.unsqueeze(-2) - mean_c) / denom
    fantasy_mean = mean_q + k_xc * gain
    fantasy_var = torch.clamp(var_q - k_xc * k_xc / denom, min=0.0)
    return expected_utility(utility, fantasy_mean, fantasy_var)


def eval_surface(cache, utility, draws):
    """Objective (R,) for the one-shot evaluation VoI before subtracting u."""

    def objective(x, inner):
        values = _eval_inner_values(cache, utility, draws, x, inner)
        return values.max(dim=-1).values.mean(dim=0)

    return objective


def comp_surface(cache, utility):
    """Objective (R,) for the exact two-term comparison VoI before u."""
    noise = torch.exp(cache.state.log_noise_comp.detach())

    def objective(x_a, x_b, inner):
        pair = cache.pair_moments(x_a, x_b)
        dm = delta_moments(utility, pair)
        nu = torch.sqrt(dm.var + 2.0 * noise * noise)
        p_one = torch.special.ndtr(dm.mu / nu)
        mean_1, var_1 = fantasy_comp_mean_var(cache, x_a, x_b, 1, utility, inner)
        mean_0, var_0 = fantasy_comp_mean_var(cache, x_a, x_b, 0, utility, inner)
        best_1 = expected_utility(utility, mean_1, var_1).max(dim=-1).values
        best_0 = expected_utility(utility, mean_0, var_0).max(dim=-1).values
        return p_one * best_1 + (1.0 - p_one) * best_0

    return objective


def _ranked_indices(primary_hits, scores, count):
    """Indices ranked by hit count then score, as a long tensor of count."""
    T = scores.shape[0]
    counts = torch.bincount(primary_hits, minlength=T).numpy()
    order = np.lexsort((-scores.numpy(), -counts))
    return torch.as_tensor(order[:count].copy(), dtype=torch.long)


def _interleave_unique(first, second, count):
    """First count indices taken alternately from two rankings, no repeats."""
    if count <= 0:
        return torch.empty(0, dtype=torch.long)
    seen, out = set(), []
    for a, b in zip(first.tolist(), second.tolist()):
        for v in (a, b):
            if v not in seen:
                seen.add(v)
                out.append(v)
            if len(out) == count:
                return torch.as_tensor(out, dtype=torch.long)
    return torch.as_tensor(out[:count], dtype=torch.long)


def _screen_eval(cache, utility, draws, config, x_hat, seed_screen, seed_cand):
    """Screen raw Sobol candidates for the evaluation VoI Adam starts.

    Each raw candidate x is scored against a dense screen of inner points
    (incumbent included) under the shared fantasy draws. The top restarts
    rows keep, as inner inits, the screen points their draws actually argmax
    at, padded by mean expected utility; inner points that start inside the
    right basins matter because non-argmax inner points receive zero
    gradient through the max and never migrate. Returns (init_x, init_inner,
    best_value) with best_value the top dense-screen objective, a valid
    lower bound on the optimum since every screen point is feasible.
    """
    d, K, R = cache.n_inputs, config.n_fantasy, config.restarts
    anchor = torch.as_tensor(np.asarray(x_hat, dtype=float)).reshape(1, d)
    screen = torch.cat([anchor, _sobol(d, config.raw_samples - 1, seed_screen)])
    cand = _sobol(d, config.raw_samples, seed_cand)
    T = screen.shape[0]
    objs, means, hits = [], [], []
    chunk = 64
    with torch.no_grad():
        for i in range(0, cand.shape[0], chunk):
            x = cand[i : i + chunk]
            inner = screen.unsqueeze(0).expand(x.shape[0], T, d)
            vals = _eval_inner_values(cache, utility, draws, x, inner)
            objs.append(vals.max(dim=-1).values.mean(dim=0))
            means.append(vals.mean(dim=0))
            hits.append(vals.argmax(dim=-1))
    obj = torch.cat(objs)
    mean_eu = torch.cat(means)
    draw_arg = torch.cat(hits, dim=1)
    top = torch.topk(obj, R).indices
    init_inner = torch.empty((R, K, d), dtype=torch.float64)
    for r, idx in enumerate(top.tolist()):
        ranked = _ranked_indices(draw_arg[:, idx], mean_eu[idx], K - 1)
        init_inner[r] = torch.cat([anchor, screen[ranked]])[:K]
    return cand[top], init_inner, float(obj[top[0]])


def _screen_comp(cache, utility, config, x_hat, seed_screen, seed_pairs):
    """Screen raw Sobol pairs for the comparison VoI Adam starts.

    Pairs are drawn as one 2d-dimensional Sobol sequence so the joint
    (x_a, x_b) space is covered uniformly; pairing two independent
    d-dimensional sequences index-wise leaves them correlated and starves
    the screen of well-separated pairs. The Sobol pairs are augmented with
    every pair drawn from the highest-posterior-utility screen points: a
    comparison only beats the incumbent where the fantasy bump clears the
    posterior max, so informative pairs concentrate near the current peaks
    and uniform coverage alone finds none of them once the peaks sharpen
    (observed as exact-zero raw VoI on mid-run iterations). Each raw pair
    is scored by the exact two-term objective with a dense screen of inner
    points (incumbent and the pair itself included). Inner inits interleave
    the best screen points of each outcome branch: when a single inner
    point is argmax under both branches the objective collapses to the
    martingale mean, whose gradient with respect to the pair is identically
    zero and freezes the optimizer, so branch-diverse starts keep the pair
    gradient alive. Returns (init_a, init_b, init_inner, best_value);
    best_value is the top dense-screen objective, a valid lower bound on
    the optimum.
    """
    d, K, R = cache.n_inputs, config.n_fantasy, config.restarts
    S = config.raw_samples
    anchor = torch.as_tensor(np.asarray(x_hat, dtype=float)).reshape(1, d)
    screen = torch.cat([anchor, _sobol(d, S - 1, seed_screen)])
    T = screen.shape[0]
    pairs = _sobol(2 * d, S, seed_pairs)
    with torch.no_grad():
        screen_u = posterior_utility(cache, utility, screen)
    top_pts = screen[torch.topk(screen_u, min(16, T)).indices]
    ia, ib = torch.triu_indices(top_pts.shape[0], top_pts.shape[0], offset=1)
    cand_a = torch.cat([pairs[:, :d], top_pts[ia]]).contiguous()
    cand_b = torch.cat([pairs[:, d:], top_pts[ib]]).contiguous()
    noise = torch.exp(cache.state.log_noise_comp.detach())
    objs, eu1s, eu0s = [], [], []
    chunk = 64
    with torch.no_grad():
        for i in range(0, cand_a.shape[0], chunk):
            xa, xb = cand_a[i : i + chunk], cand_b[i : i + chunk]
            inner = torch.cat(
                [
                    screen.unsqueeze(0).expand(xa.shape[0], T, d),
                    xa.unsqueeze(1),
                    xb.unsqueeze(1),
                ],
                dim=1,
            )
            pair = cache.pair_moments(xa, xb)
            dm = delta_moments(utility, pair)
            nu = torch.sqrt(dm.var + 2.0 * noise * noise)
            p_one = torch.special.ndtr(dm.mu / nu)
            mean_1, var_1 = fantasy_comp_mean_var(cache, xa, xb, 1, utility, inner)
            mean_0, var_0 = fantasy_comp_mean_var(cache, xa, xb, 0, utility, inner)
            eu1 = expected_utility(utility, mean_1, var_1)
            eu0 = expected_utility(utility, mean_0, var_0)
            objs.append(
                p_one * eu1.max(dim=-1).values
                + (1.0 - p_one) * eu0.max(dim=-1).values
            )
            eu1s.append(eu1)
            eu0s.append(eu0)
    obj = torch.cat(objs)
    eu1 = torch.cat(eu1s)
    eu0 = torch.cat(eu0s)
    top = torch.topk(obj, R).indices
    init_a, init_b = cand_a[top], cand_b[top]
    init_inner = torch.empty((R, K, d), dtype=torch.float64)
    for r, idx in enumerate(top.tolist()):
        pool = torch.cat([screen, cand_a[idx : idx + 1], cand_b[idx : idx + 1]])
        o1 = torch.argsort(eu1[idx], descending=True, stable=True)
        o0 = torch.argsort(eu0[idx], descending=True, stable=True)
        picked = _interleave_unique(o1, o0, K - 1)
        init_inner[r] = torch.cat([anchor, pool[picked]])[:K]
    return init_a, init_b, init_inner, float(obj[top[0]])


def _resolve_dataset_value(cache, utility, config, seed, dataset_value):
    if dataset_value is not None:
        return float(dataset_value[0]), np.asarray(dataset_value[1], dtype=float)
    return dataset_utility(cache, utility, config, seed=seed)


def _tightened_u(cache, utility, u_current, inner):
    """Best u(D) candidate seen, folding in the optimized inner points.

    Every inner fantasy point is a feasible x for u(D) = max_x E[U(f(x))],
    so its current expected utility lower-bounds u(D). Taking the max
    removes the one-sided bias that separate u and VoI optimizations would
    otherwise leave; an uninformative posterior then reports ~zero VoI
    instead of the gap between two Adam runs.
    """
    with torch.no_grad():
        values = posterior_utility(cache, utility, inner)
    return max(u_current, float(values.max()))


def voi_eval(posterior, utility, cost_model, config=None, seed=0, dataset_value=None):
    """One-shot knowledge-gradient VoI for a single evaluation.

    Jointly optimizes the candidate x and K inner fantasy points against
    the Monte-Carlo average (over fixed Matheron draws shared by all
    restarts) of the best inner expected utility. dataset_value can pass a
    precomputed (u, x_hat) to avoid re-optimizing it.
    """
    cache = _as_cache(posterior)
    config = config if config is not None else AcquisitionConfig()
    d, K = cache.n_inputs, config.n_fantasy
    seeds = np.random.SeedSequence(int(seed)).generate_state(4)
    u_current, x_hat = _resolve_dataset_value(
        cache, utility, config, int(seeds[0]), dataset_value
    )
    draws = matheron_draws(cache, config.mc_draws, seed=int(seeds[1]))
    surface = eval_surface(cache, utility, draws)

    init_x, init_inner, screen_best = _screen_eval(
        cache, utility, draws, config, x_hat, int(seeds[3]), int(seeds[2])
    )
    init = torch.cat([init_x, init_inner.reshape(config.restarts, K * d)], dim=1)

    def objective(P):
        return surface(P[:, :d], P[:, d:].reshape(-1, K, d))

    params, values = _optimize_batch(objective, init, config)
    best = int(values.argmax())
    u_final = _tightened_u(cache, utility, u_current, params[:, d:].reshape(-1, K, d))
    if screen_best > float(values[best]):
        value, x_best, fantasy = screen_best, init_x[0], init_inner[0]
    else:
        value = float(values[best])
        x_best = params[best, :d]
        fantasy = params[best, d:].reshape(K, d)
    voi_raw = value - u_final
    voi = max(voi_raw, 0.0)
    action = EvaluateAction(x=x_best.numpy(), cost=cost_model.c_eval)
    return AcquisitionResult(
        action=action,
        voi=voi,
        voi_raw=voi_raw,
        voi_per_cost=voi / cost_model.c_eval,
        fantasy_points=fantasy.numpy(),
        trace=values.numpy(),
    )


def voi_comp(posterior, utility, cost_model, config=None, seed=0, dataset_value=None):
    """Exact two-term VoI for a single pairwise comparison.

    The binary outcome is weighted by its posterior predictive probability;
    each branch scores the best of K inner fantasy points under the
    closed-form fantasy update, so no Monte Carlo is involved.
    """
    cache = _as_cache(posterior)
    config = config if config is not None else AcquisitionConfig()
    d, K = cache.n_inputs, config.n_fantasy
    seeds = np.random.SeedSequence(int(seed)).generate_state(4)
    u_current, x_hat = _resolve_dataset_value(
        cache, utility, config, int(seeds[0]), dataset_value
    )
    surface = comp_surface(cache, utility)

    init_a, init_b, init_inner, screen_best = _screen_comp(
        cache, utility, config, x_hat, int(seeds[2]), int(seeds[1])
    )
    init = torch.cat(
        [init_a, init_b, init_inner.reshape(config.restarts, K * d)], dim=1
    )

    def objective(P):
        return surface(P[:, :d], P[:, d : 2 * d], P[:, 2 * d :].reshape(-1, K, d))

    params, values = _optimize_batch(objective, init, config)
    best = int(values.argmax())
    u_final = _tightened_u(
        cache, utility, u_current, params[:, 2 * d :].reshape(-1, K, d)
    )
    if screen_best > float(values[best]):
        value, a_best, b_best = screen_best, init_a[0], init_b[0]
        fantasy = init_inner[0]
    else:
        value = float(values[best])
        a_best = params[best, :d]
        b_best = params[best, d : 2 * d]
        fantasy = params[best, 2 * d :].reshape(K, d)
    voi_raw = value - u_final
    voi = max(voi_raw, 0.0)
    action = CompareAction(
        x_a=a_best.numpy(), x_b=b_best.numpy(), cost=cost_model.c_comp
    )
    return AcquisitionResult(
        action=action,
        voi=voi,
        voi_raw=voi_raw,
        voi_per_cost=voi / cost_model.c_comp,
        fantasy_points=fantasy.numpy(),
        trace=values.numpy(),
    )


def _random_action(kind, d, cost, rng):
    if kind == "evaluate":
        return EvaluateAction(x=rng.uniform(size=d), cost=cost)
    return CompareAction(
        x_a=rng.uniform(size=d), x_b=rng.uniform(size=d), cost=cost
    )


def select_action_report(
    posterior, utility, cost_model, remaining_budget, config=None, seed=0
):
    """Run both acquisitions and pick the best affordable action.

    Selection maximizes floored VoI per unit cost over affordable sources.
    If every affordable VoI falls below config.epsilon the choice degenerates
    to a uniform-random action of the cheapest affordable source (evaluation
    on cost ties); VoI-per-cost ties within 1e-12 prefer evaluation.
    """
    cache = _as_cache(posterior)
    config = config if config is not None else AcquisitionConfig()
    can_eval = cost_model.c_eval <= remaining_budget
    can_comp = cost_model.c_comp <= remaining_budget
    if not can_eval and not can_comp:
        raise BudgetExhausted(
            f"remaining budget {remaining_budget} affords no action"
        )
    seeds = np.random.SeedSequence(int(seed)).generate_state(4)
    dataset_value = dataset_utility(cache, utility, config, seed=int(seeds[0]))
    eval_result = (
        voi_eval(
            cache, utility, cost_model, config,
            seed=int(seeds[1]), dataset_value=dataset_value,
        )
        if can_eval
        else None
    )
    comp_result = (
        voi_comp(
            cache, utility, cost_model, config,
            seed=int(seeds[2]), dataset_value=dataset_value,
        )
        if can_comp
        else None
    )

    candidates = [r for r in (eval_result, comp_result) if r is not None]
    if max(r.voi for r in candidates) < config.epsilon:
        cheap_kind = "evaluate"
        if can_comp and (
            not can_eval or cost_model.c_comp < cost_model.c_eval
        ):
            cheap_kind = "compare"
        rng = np.random.default_rng(int(seeds[3]))
        action = _random_action(
            cheap_kind, cache.n_inputs, cost_model.cost_of(cheap_kind), rng
        )
        rule = "epsilon-random"
    elif (
        eval_result is not None
        and comp_result is not None
        and abs(eval_result.voi_per_cost - comp_result.voi_per_cost) <= VOI_TIE_TOL
    ):
        action, rule = eval_result.action, "tie-prefers-evaluate"
    else:
        best = max(candidates, key=lambda r: r.voi_per_cost)
        action, rule = best.action, "voi-per-cost"
    return SelectionReport(
        action=action,
        rule=rule,
        u_current=dataset_value[0],
        x_hat=dataset_value[1],
        eval_result=eval_result,
        comp_result=comp_result,
    )


def select_action(posterior, utility, cost_model, remaining_budget, config=None, seed=0):
    """The affordable action with the best VoI per unit cost."""
    return select_action_report(
        posterior, utility, cost_model, remaining_budget, config, seed
    ).action
