"""One-step fantasy posterior updates for both information sources.

Evaluation fantasies use exact Gaussian conditioning on the posterior
kernel. Comparison fantasies use the closed-form half-space identity for
the probit outcome: conditioning f on {Delta + eps > 0} shifts the mean by
mills_ratio(tau) * gamma / nu and shrinks covariance along gamma. Matheron
pathwise sampling draws hypothetical evaluation outcomes with fixed normal
draws so gradients flow through candidate coordinates.

All operations are torch-based, batched over leading dimensions, and
differentiable with respect to query and action coordinates; the underlying
posterior is detached.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateNu
from .surrogate import PosteriorCache
from .utility import delta_moments

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# eigenvalues of a corrected covariance more negative than this trigger a
# warning before being clipped to zero
PSD_CLIP_TOL = 1e-10


def _as_cache(base):
    return base if isinstance(base, PosteriorCache) else PosteriorCache(base)


def _mills(tau):
    """phi(tau) / Phi(tau), computed in log space for stability."""
    log_pdf = -0.5 * tau * tau - _LOG_SQRT_2PI
    return torch.exp(log_pdf - torch.special.log_ndtr(tau))


def fantasy_eval_mean(base, x_cand, y, x):
    """Posterior mean at query rows x after hypothetically observing y.

    Exact per-output Gaussian conditioning on the posterior kernel:
    mu'(x) = mu(x) + K(x, x_cand) [K(x_cand, x_cand) + noise]^{-1} (y - mu(x_cand)).

    Shapes broadcast: x_cand (..., d), y (s..., ..., m), x (..., n, d) give
    (s..., ..., n, m).
    """
    cache = _as_cache(base)
    x_cand = torch.as_tensor(x_cand)
    y = torch.as_tensor(y)
    x = torch.as_tensor(x)
    cand = x_cand.unsqueeze(-2)
    mean_c, var_c = cache.mean_var(cand)
    noise_var = torch.exp(2.0 * cache.state.log_noise_eval.detach())
    gain = (y.unsqueeze(-2) - mean_c) / (var_c + noise_var)
    k_xc = cache.cross_cov(x, cand).squeeze(-2)
    return cache.mean(x) + k_xc * gain


def _comp_pieces(cache, x_a, x_b, utility, x):
    """Delta moments, nu, tau and the query covariance vector gamma."""
    pair = cache.pair_moments(x_a, x_b)
    cross_a = cache.cross_cov(x, x_a.unsqueeze(-2)).squeeze(-2)
    cross_b = cache.cross_cov(x, x_b.unsqueeze(-2)).squeeze(-2)
    dm = delta_moments(utility, pair, cross_a=cross_a, cross_b=cross_b)
    noise = torch.exp(cache.state.log_noise_comp.detach())
    nu_sq = dm.var + 2.0 * noise * noise
    if float(nu_sq.detach().min()) <= 0.0:
        raise DegenerateNu("nu^2 = sigma_Delta^2 + 2 sigma_comp^2 is not positive")
    nu = torch.sqrt(nu_sq)
    tau = dm.mu / nu
    return dm.cov_with_f, nu, tau


def _signed_tau(tau, d):
    if d not in (0, 1):
        raise ValueError(f"comparison outcome must be 0 or 1, got {d!r}")
    return tau if d == 1 else -tau


def fantasy_comp_mean(base, x_a, x_b, d, utility, x):
    """Posterior mean at query rows x after hypothetically observing d.

    Half-space conditioning of the jointly Gaussian (f(x), Delta + eps):
    d=1 adds mills_ratio(tau) * gamma(x) / nu, d=0 flips the sign of both
    tau and the innovation. Exact for linear utilities, moment-matched for
    Chebyshev. Shapes: x_a, x_b (..., d), x (..., n, d) -> (..., n, m).
    """
    cache = _as_cache(base)
    x_a = torch.as_tensor(x_a)
    x_b = torch.as_tensor(x_b)
    x = torch.as_tensor(x)
    gamma, nu, tau = _comp_pieces(cache, x_a, x_b, utility, x)
    signed = _signed_tau(tau, d)
    sign = 1.0 if d == 1 else -1.0
    shift = sign * _mills(signed) / nu
    return cache.mean(x) + shift.unsqueeze(-1).unsqueeze(-1) * gamma


def fantasy_comp_mean_var(base, x_a, x_b, d, utility, x):
    """Fantasy marginal mean and variance at query rows, each (..., n, m).

    The variance shrinks by lambda (lambda + tau) * gamma^2 / nu^2 along the
    conditioned direction; the result is clamped at zero.
    """
    cache = _as_cache(base)
    x_a = torch.as_tensor(x_a)
    x_b = torch.as_tensor(x_b)
    x = torch.as_tensor(x)
    gamma, nu, tau = _comp_pieces(cache, x_a, x_b, utility, x)
    signed = _signed_tau(tau, d)
    lam = _mills(signed)
    sign = 1.0 if d == 1 else -1.0
    shift = sign * lam / nu
    coef = lam * (lam + signed) / (nu * nu)
    mean = cache.mean(x) + shift.unsqueeze(-1).unsqueeze(-1) * gamma
    _, var = cache.mean_var(x)
    var = var - coef.unsqueeze(-1).unsqueeze(-1) * gamma * gamma
    return mean, torch.clamp(var, min=0.0)


def fantasy_comp_covariance(base, x_a, x_b, d, utility, x):
    """Per-output fantasy covariance over query rows, shape (..., n, n, m).

    Applies the half-space identity Sigma - lambda (lambda + tau) gamma
    gamma^T / nu^2 per output, then clips negative eigenvalues (possible
    only through moment-matching error) to zero.
    """
    cache = _as_cache(base)
    x_a = torch.as_tensor(x_a)
    x_b = torch.as_tensor(x_b)
    x = torch.as_tensor(x)
    gamma, nu, tau = _comp_pieces(cache, x_a, x_b, utility, x)
    signed = _signed_tau(tau, d)
    lam = _mills(signed)
    coef = (lam * (lam + signed) / (nu * nu)).unsqueeze(-1).unsqueeze(-1).unsqueeze(-1)
    base_cov = cache.cross_cov(x, x)
    corrected = base_cov - coef * gamma.unsqueeze(-3) * gamma.unsqueeze(-2)

    per_output = corrected.movedim(-1, -3)
    per_output = 0.5 * (per_output + per_output.transpose(-1, -2))
    eigvals, eigvecs = torch.linalg.eigh(per_output)
    if float(eigvals.detach().min()) < -PSD_CLIP_TOL:
        warnings.warn(
            "clipping negative eigenvalues of a fantasy covariance", stacklevel=2
        )
    clipped = torch.clamp(eigvals, min=0.0)
    rebuilt = eigvecs @ torch.diag_embed(clipped) @ eigvecs.transpose(-1, -2)
    return rebuilt.movedim(-3, -1)


# ---------------------------------------------------------------------------
# Matheron pathwise fantasy observations


@dataclass(frozen=True)
class MatheronDraws:
    """Fixed standard-normal draws for reparametrized fantasy observations.

    xi: (count, m, M) inducing-sample draws; eta: (count, m) conditional
    draws; zeta: (count, m) observation-noise draws.
    """

    xi: torch.Tensor
    eta: torch.Tensor
    zeta: torch.Tensor

    @property
    def count(self):
        return self.xi.shape[0]


def matheron_draws(base, count, seed):
    """Deterministic draws for a cache: same seed, same fantasies."""
    cache = _as_cache(base)
    m = cache.n_outputs
    M = cache.z.shape[0]
    rng = np.random.default_rng(seed)
    return MatheronDraws(
        xi=torch.tensor(rng.standard_normal((count, m, M))),
        eta=torch.tensor(rng.standard_normal((count, m))),
        zeta=torch.tensor(rng.standard_normal((count, m))),
    )


def matheron_observations(base, x_cand, draws):
    """Sampled hypothetical outcomes y at x_cand, shape (count, ..., m).

    Pathwise conditioning: sample u from q(u), add the conditional
    prior residual at x_cand, then observation noise. Marginally y follows
    the posterior predictive; gradients flow through x_cand only.
    """
    cache = _as_cache(base)
    x_cand = torch.as_tensor(x_cand)
    state = cache.state
    with torch.no_grad():
        l_v = cache.a_inv @ state.l_u.detach()
        v_s = cache.m_v + (l_v @ draws.xi.unsqueeze(-1)).squeeze(-1)
        sigma_eval = torch.exp(state.log_noise_eval.detach())

    cand = x_cand.unsqueeze(-2)
    kxz = cache._kxz(cand)
    c = torch.einsum("jkl,...nlj->...nkj", cache.a_inv, kxz)
    cond_mean = torch.einsum("...nkj,sjk->s...nj", c, v_s).squeeze(-2)
    prior = torch.exp(cache.kernel.log_outputscales)
    quad = c.square().sum(-2)
    # the 1e-18 floor keeps the sqrt gradient finite where the conditional
    # variance collapses to zero (candidate on top of an inducing point)
    cond_var = torch.clamp(prior - quad.squeeze(-2), min=0.0) + 1e-18
    cond_sd = torch.sqrt(cond_var)

    extra = cond_mean.ndim - 2
    eta = draws.eta.reshape(draws.count, *([1] * extra), -1)
    zeta = draws.zeta.reshape(draws.count, *([1] * extra), -1)
    return cond_mean + cond_sd * eta + sigma_eval * zeta


def matheron_fantasy_sample(base, x_cand, seed, queries):
    """Fantasy mean at query rows under one pathwise-sampled outcome.

    Draws y ~ posterior predictive at x_cand (deterministic per seed) and
    returns fantasy_eval_mean under that y, shape (n, m).
    """
    cache = _as_cache(base)
    draws = matheron_draws(cache, 1, seed)
    y = matheron_observations(cache, torch.as_tensor(x_cand), draws)[0]
    return fantasy_eval_mean(cache, x_cand, y, queries)


# ---------------------------------------------------------------------------
# tagged fantasy wrapper


@dataclass(frozen=True)
class FantasyPosterior:
    """A posterior conditioned on one hypothetical outcome.

    outcome is ("eval", x_cand, y), ("comp", x_a, x_b, d) with a utility,
    or ("null",) for the base posterior unchanged.
    """

    base: PosteriorCache
    outcome: tuple = ("null",)
    utility: object | None = None

    def mean(self, x):
        kind = self.outcome[0]
        if kind == "null":
            return self.base.mean(torch.as_tensor(x))
        if kind == "eval":
            _, x_cand, y = self.outcome
            return fantasy_eval_mean(self.base, x_cand, y, x)
        if kind == "comp":
            _, x_a, x_b, d = self.outcome
            return fantasy_comp_mean(self.base, x_a, x_b, d, self.utility, x)
        raise ValueError(f"unknown fantasy outcome tag: {kind!r}")
