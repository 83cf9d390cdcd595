"""Tests for one-step fantasy posterior updates."""

import math

import numpy as np
import pytest
import torch
from scipy.special import log_ndtr, ndtr

from eabo.errors import DegenerateNu
from eabo.fantasy import (
    FantasyPosterior,
    fantasy_comp_covariance,
    fantasy_comp_mean,
    fantasy_comp_mean_var,
    fantasy_eval_mean,
    matheron_draws,
    matheron_fantasy_sample,
    matheron_observations,
)
from eabo.kernels import KernelHyperparams
from eabo.numerics import finite_difference_check
from eabo.surrogate import (
    PosteriorCache,
    SurrogateConfig,
    VariationalState,
    initial_state,
    predict,
)
from eabo.utility import ChebyshevUtility, LinearUtility

from helpers import random_small_instance


def make_cache(seed, **kw):
    state, _, _ = random_small_instance(seed, **kw)
    return PosteriorCache(state)


def narrow_state(lengthscale=0.05):
    """Single-output state whose kernel support is much smaller than the box."""
    kernel = KernelHyperparams(
        log_lengthscales=torch.full((1, 1), math.log(lengthscale)),
        log_outputscales=torch.zeros(1),
    )
    return VariationalState(
        z=torch.tensor([[0.1], [0.2]]),
        m_u=torch.tensor([[0.4, -0.3]]),
        l_u=0.5 * torch.eye(2).unsqueeze(0),
        kernel=kernel,
        log_noise_eval=torch.tensor([math.log(0.1)]),
        log_noise_comp=torch.tensor(math.log(0.1)),
    )


class TestFantasyEvalMean:
    def test_zero_innovation_leaves_mean_unchanged(self):
        cache = make_cache(0, d=2, m=2)
        rng = np.random.default_rng(1)
        xc = torch.tensor(rng.uniform(0.1, 0.9, 2))
        X = torch.tensor(rng.uniform(0.1, 0.9, (5, 2)))
        mean_c, _ = cache.mean_var(xc.unsqueeze(0))
        out = fantasy_eval_mean(cache, xc, mean_c[0], X)
        assert float((out - cache.mean(X)).abs().max()) < 1e-12

    def test_distant_query_is_unchanged(self):
        cache = PosteriorCache(narrow_state())
        xc = torch.tensor([0.15])
        X = torch.tensor([[0.95]])
        out = fantasy_eval_mean(cache, xc, torch.tensor([5.0]), X)
        assert float((out - cache.mean(X)).abs().max()) < 1e-10

    def test_scalar_conditioning_oracle(self):
        # prior GP, outputscale 1, lengthscale 0.2, noise 0.1, observe y=1
        config = SurrogateConfig(
            n_outputs=1, n_inputs=1, inducing_count=4, init_lengthscale=0.2
        )
        cache = PosteriorCache(initial_state(config, seed=0))
        out = fantasy_eval_mean(
            cache, torch.tensor([0.5]), torch.tensor([1.0]), torch.tensor([[0.5]])
        )
        assert float(out[0, 0]) == pytest.approx(1.0 / 1.01, abs=1e-12)

    def test_matches_formula_from_predictive_moments(self):
        state, _, _ = random_small_instance(3, d=1, m=2)
        cache = PosteriorCache(state)
        rng = np.random.default_rng(4)
        xc = rng.uniform(0.1, 0.9, 1)
        X = rng.uniform(0.1, 0.9, (4, 1))
        y = rng.standard_normal(2)
        mom = predict(state, np.vstack([X, xc.reshape(1, -1)]))
        noise_var = np.exp(2.0 * state.log_noise_eval.numpy())
        expected = mom.mean[:4] + np.stack(
            [
                mom.cov[j][:4, 4]
                * (y[j] - mom.mean[4, j])
                / (mom.cov[j][4, 4] + noise_var[j])
                for j in range(2)
            ],
            axis=1,
        )
        out = fantasy_eval_mean(cache, torch.tensor(xc), torch.tensor(y), torch.tensor(X))
        assert np.max(np.abs(out.numpy() - expected)) < 1e-10

    def test_batched_outcomes_broadcast(self):
        cache = make_cache(5, d=2, m=1)
        rng = np.random.default_rng(6)
        xc = torch.tensor(rng.uniform(0.1, 0.9, 2))
        X = torch.tensor(rng.uniform(0.1, 0.9, (3, 2)))
        ys = torch.tensor(rng.standard_normal((7, 1)))
        out = fantasy_eval_mean(cache, xc, ys, X)
        assert out.shape == (7, 3, 1)
        single = fantasy_eval_mean(cache, xc, ys[2], X)
        assert torch.allclose(out[2], single, atol=1e-12)


class TestFantasyCompMean:
    def test_uncorrelated_query_is_unchanged(self):
        cache = PosteriorCache(narrow_state())
        xa, xb = torch.tensor([0.1]), torch.tensor([0.2])
        X = torch.tensor([[0.95]])
        out = fantasy_comp_mean(cache, xa, xb, 1, LinearUtility(torch.ones(1)), X)
        assert float((out - cache.mean(X)).abs().max()) < 1e-10

    @pytest.mark.parametrize("kind", ["linear", "chebyshev"])
    def test_martingale_identity(self, kind):
        cache = make_cache(7, d=2, m=2)
        rng = np.random.default_rng(8)
        xa = torch.tensor(rng.uniform(0.1, 0.9, 2))
        xb = torch.tensor(rng.uniform(0.1, 0.9, 2))
        X = torch.tensor(rng.uniform(0.1, 0.9, (10, 2)))
        w = torch.tensor([0.6, 0.4])
        utility = LinearUtility(w) if kind == "linear" else ChebyshevUtility(w)
        from eabo.fantasy import _comp_pieces

        _, _, tau = _comp_pieces(cache, xa, xb, utility, X)
        p1 = float(ndtr(float(tau)))
        blend = p1 * fantasy_comp_mean(cache, xa, xb, 1, utility, X) + (
            1.0 - p1
        ) * fantasy_comp_mean(cache, xa, xb, 0, utility, X)
        assert float((blend - cache.mean(X)).abs().max()) < 1e-10

    @pytest.mark.parametrize("d", [0, 1])
    def test_scalar_reduction(self, d):
        # m=1, identity utility, 2 sigma_comp^2 = 1: the update must equal an
        # independently coded scalar formula applied to the same moments
        for seed in range(10):
            state, _, _ = random_small_instance(seed, d=1, m=1)
            state = VariationalState(
                z=state.z,
                m_u=state.m_u,
                l_u=state.l_u,
                kernel=state.kernel,
                log_noise_eval=state.log_noise_eval,
                log_noise_comp=torch.tensor(-0.5 * math.log(2.0)),
            )
            cache = PosteriorCache(state)
            rng = np.random.default_rng(100 + seed)
            xa = torch.tensor(rng.uniform(0.1, 0.9, 1))
            xb = torch.tensor(rng.uniform(0.1, 0.9, 1))
            X = torch.tensor(rng.uniform(0.05, 0.95, (6, 1)))
            pair = cache.pair_moments(xa, xb)
            ka = cache.cross_cov(X, xa.unsqueeze(0))[:, 0, 0].numpy()
            kb = cache.cross_cov(X, xb.unsqueeze(0))[:, 0, 0].numpy()
            mu_delta = float(pair.mean_a - pair.mean_b)
            var_delta = float(pair.var_a + pair.var_b - 2.0 * pair.cov_ab)
            nu = math.sqrt(var_delta + 1.0)
            sign = 1.0 if d == 1 else -1.0
            tau = sign * mu_delta / nu
            lam = math.exp(
                -0.5 * tau * tau - 0.5 * math.log(2.0 * math.pi) - log_ndtr(tau)
            )
            oracle = cache.mean(X)[:, 0].numpy() + sign * lam * (ka - kb) / nu
            got = fantasy_comp_mean(
                cache, xa, xb, d, LinearUtility(torch.ones(1)), X
            )
            assert np.max(np.abs(got.numpy()[:, 0] - oracle)) < 1e-12

    def test_matches_rejection_sampling_oracle(self):
        state, _, _ = random_small_instance(9, d=1, m=1)
        cache = PosteriorCache(state)
        rng = np.random.default_rng(10)
        xa, xb = rng.uniform(0.1, 0.9, 1), rng.uniform(0.1, 0.9, 1)
        xq = rng.uniform(0.1, 0.9, 1)
        mom = predict(state, np.vstack([xq, xa, xb]).reshape(3, 1))
        K = mom.cov[0]
        L = np.linalg.cholesky(K + 1e-12 * np.eye(3))
        samples = mom.mean[:, 0] + (L @ rng.standard_normal((3, 1_000_000))).T
        noise = rng.normal(
            0.0, math.sqrt(2.0) * float(state.noise_comp_std), 1_000_000
        )
        keep = samples[:, 1] - samples[:, 2] + noise > 0
        mc = samples[keep, 0].mean()
        se = samples[keep, 0].std() / math.sqrt(keep.sum())
        got = float(
            fantasy_comp_mean(
                cache,
                torch.tensor(xa),
                torch.tensor(xb),
                1,
                LinearUtility(torch.ones(1)),
                torch.tensor(xq.reshape(1, 1)),
            )[0, 0]
        )
        assert abs(got - mc) < 3.0 * se

    @pytest.mark.parametrize("kind", ["linear", "chebyshev"])
    def test_differentiable_in_all_coordinates(self, kind):
        cache = make_cache(11, d=2, m=2)
        w = torch.tensor([0.55, 0.45])
        utility = LinearUtility(w) if kind == "linear" else ChebyshevUtility(w)
        x0 = np.array([0.3, 0.6, 0.7, 0.2, 0.5, 0.45])

        def fun(vec):
            v = torch.tensor(vec, requires_grad=True)
            out = fantasy_comp_mean(
                cache, v[0:2], v[2:4], 1, utility, v[4:6].unsqueeze(0)
            ).sum()
            out.backward()
            return float(out.detach()), v.grad.numpy().copy()

        assert finite_difference_check(fun, x0) < 1e-4

    def test_degenerate_nu_raises(self):
        state, _, _ = random_small_instance(12, d=1, m=1)
        state = VariationalState(
            z=state.z,
            m_u=state.m_u,
            l_u=state.l_u,
            kernel=state.kernel,
            log_noise_eval=state.log_noise_eval,
            log_noise_comp=torch.tensor(float("-inf")),
        )
        cache = PosteriorCache(state)
        with pytest.raises(DegenerateNu):
            fantasy_comp_mean(
                cache,
                torch.tensor([0.3]),
                torch.tensor([0.7]),
                1,
                LinearUtility(torch.zeros(1)),
                torch.tensor([[0.5]]),
            )

    def test_invalid_outcome_raises(self):
        cache = make_cache(13, d=1, m=1)
        with pytest.raises(ValueError):
            fantasy_comp_mean(
                cache,
                torch.tensor([0.3]),
                torch.tensor([0.7]),
                2,
                LinearUtility(torch.ones(1)),
                torch.tensor([[0.5]]),
            )


class TestFantasyCompCovariance:
    def test_uncorrelated_query_is_unchanged(self):
        cache = PosteriorCache(narrow_state())
        xa, xb = torch.tensor([0.1]), torch.tensor([0.2])
        X = torch.tensor([[0.95]])
        out = fantasy_comp_covariance(cache, xa, xb, 1, LinearUtility(torch.ones(1)), X)
        base = cache.cross_cov(X, X)
        assert float((out - base).abs().max()) < 1e-10

    @pytest.mark.parametrize("d", [0, 1])
    def test_delta_variance_shrinks(self, d):
        cache = make_cache(14, d=2, m=2)
        rng = np.random.default_rng(15)
        xa = torch.tensor(rng.uniform(0.1, 0.9, 2))
        xb = torch.tensor(rng.uniform(0.1, 0.9, 2))
        w = torch.tensor([0.5, 0.5])
        utility = LinearUtility(w)
        X = torch.stack([xa, xb])
        new = fantasy_comp_covariance(cache, xa, xb, d, utility, X)
        old = cache.cross_cov(X, X)

        def delta_var(cov):
            return float(
                sum(
                    w[j] ** 2 * (cov[0, 0, j] + cov[1, 1, j] - 2.0 * cov[0, 1, j])
                    for j in range(2)
                )
            )

        assert delta_var(new) < delta_var(old)

    def test_result_is_psd(self):
        for seed in range(4):
            cache = make_cache(20 + seed, d=2, m=2)
            rng = np.random.default_rng(seed)
            xa = torch.tensor(rng.uniform(0.1, 0.9, 2))
            xb = torch.tensor(rng.uniform(0.1, 0.9, 2))
            X = torch.tensor(rng.uniform(0.1, 0.9, (5, 2)))
            out = fantasy_comp_covariance(
                cache, xa, xb, 1, ChebyshevUtility(torch.tensor([0.6, 0.4])), X
            )
            for j in range(2):
                eig = torch.linalg.eigvalsh(out[..., j])
                assert float(eig.min()) >= -1e-12

    def test_diagonal_matches_marginal_variance_path(self):
        cache = make_cache(16, d=2, m=2)
        rng = np.random.default_rng(17)
        xa = torch.tensor(rng.uniform(0.1, 0.9, 2))
        xb = torch.tensor(rng.uniform(0.1, 0.9, 2))
        X = torch.tensor(rng.uniform(0.1, 0.9, (4, 2)))
        utility = LinearUtility(torch.tensor([0.7, 0.3]))
        _, var = fantasy_comp_mean_var(cache, xa, xb, 1, utility, X)
        cov = fantasy_comp_covariance(cache, xa, xb, 1, utility, X)
        diag = torch.diagonal(cov.movedim(-1, 0), dim1=-2, dim2=-1).movedim(0, -1)
        assert float((var - diag).abs().max()) < 1e-10

    def test_matches_rejection_sampling_covariance(self):
        state, _, _ = random_small_instance(18, d=1, m=1)
        cache = PosteriorCache(state)
        rng = np.random.default_rng(19)
        xa, xb = rng.uniform(0.1, 0.9, 1), rng.uniform(0.1, 0.9, 1)
        Xq = rng.uniform(0.1, 0.9, (2, 1))
        mom = predict(state, np.vstack([Xq, xa.reshape(1, -1), xb.reshape(1, -1)]))
        K = mom.cov[0]
        L = np.linalg.cholesky(K + 1e-12 * np.eye(4))
        samples = mom.mean[:, 0] + (L @ rng.standard_normal((4, 1_000_000))).T
        noise = rng.normal(
            0.0, math.sqrt(2.0) * float(state.noise_comp_std), 1_000_000
        )
        keep = samples[:, 2] - samples[:, 3] + noise > 0
        kept = samples[keep][:, :2]
        centered = kept - kept.mean(axis=0)
        prods = centered[:, 0] * centered[:, 1]
        mc_cov = prods.mean()
        se = prods.std() / math.sqrt(len(prods))
        got = fantasy_comp_covariance(
            cache,
            torch.tensor(xa),
            torch.tensor(xb),
            1,
            LinearUtility(torch.ones(1)),
            torch.tensor(Xq),
        )
        assert abs(float(got[0, 1, 0]) - mc_cov) < 3.0 * se
        for i in range(2):
            vprods = centered[:, i] ** 2
            vse = vprods.std() / math.sqrt(len(vprods))
            assert abs(float(got[i, i, 0]) - vprods.mean()) < 3.0 * vse


class TestMatheron:
    def test_deterministic_per_seed(self):
        cache = make_cache(30, d=2, m=2)
        xc = torch.tensor([0.4, 0.6])
        X = torch.tensor([[0.2, 0.3], [0.8, 0.7]])
        a = matheron_fantasy_sample(cache, xc, 5, X)
        b = matheron_fantasy_sample(cache, xc, 5, X)
        c = matheron_fantasy_sample(cache, xc, 6, X)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)

    def test_tower_property(self):
        cache = make_cache(31, d=2, m=2)
        rng = np.random.default_rng(32)
        xc = torch.tensor(rng.uniform(0.1, 0.9, 2))
        X = torch.tensor(rng.uniform(0.1, 0.9, (10, 2)))
        draws = matheron_draws(cache, 10_000, seed=0)
        ys = matheron_observations(cache, xc, draws)
        means = fantasy_eval_mean(cache, xc, ys, X)
        avg = means.mean(0)
        se = means.std(0) / math.sqrt(draws.count)
        dev = (avg - cache.mean(X)).abs() / torch.clamp(se, min=1e-12)
        assert float(dev.max()) < 3.0

    def test_observations_follow_the_posterior_predictive(self):
        cache = make_cache(33, d=1, m=1)
        xc = torch.tensor([0.45])
        draws = matheron_draws(cache, 200_000, seed=1)
        ys = matheron_observations(cache, xc, draws)[:, 0].numpy()
        mean_c, var_c = cache.mean_var(xc.unsqueeze(0))
        target_var = float(var_c[0, 0]) + float(cache.state.noise_eval_std[0]) ** 2
        se_mean = ys.std() / math.sqrt(ys.size)
        assert abs(ys.mean() - float(mean_c[0, 0])) < 4.0 * se_mean
        sq = (ys - ys.mean()) ** 2
        se_var = sq.std() / math.sqrt(ys.size)
        assert abs(sq.mean() - target_var) < 4.0 * se_var

    def test_zero_predictive_variance_gives_identical_outcomes(self):
        kernel = KernelHyperparams(
            log_lengthscales=torch.full((1, 1), math.log(1.0 / 3.0)),
            log_outputscales=torch.zeros(1),
        )
        state = VariationalState(
            z=torch.tensor([[0.5]]),
            m_u=torch.tensor([[0.8]]),
            l_u=torch.tensor([[[1e-9]]]),
            kernel=kernel,
            log_noise_eval=torch.tensor([-600.0]),
            log_noise_comp=torch.tensor(math.log(0.1)),
        )
        cache = PosteriorCache(state)
        xc = torch.tensor([0.5])
        X = torch.tensor([[0.3]])
        outs = [matheron_fantasy_sample(cache, xc, s, X) for s in range(4)]
        for o in outs[1:]:
            assert float((o - outs[0]).abs().max()) < 1e-8
        assert float((outs[0] - cache.mean(X)).abs().max()) < 1e-8

    def test_gradients_flow_through_candidate(self):
        cache = make_cache(34, d=2, m=1)
        draws = matheron_draws(cache, 4, seed=2)
        xc = torch.tensor([0.4, 0.5], requires_grad=True)
        ys = matheron_observations(cache, xc, draws)
        ys.sum().backward()
        assert xc.grad is not None and torch.all(torch.isfinite(xc.grad))


class TestFantasyPosterior:
    def test_null_adjustment_is_base_mean(self):
        cache = make_cache(40, d=1, m=1)
        X = torch.tensor([[0.2], [0.7]])
        fp = FantasyPosterior(base=cache)
        assert torch.equal(fp.mean(X), cache.mean(X))

    def test_dispatch_matches_functions(self):
        cache = make_cache(41, d=1, m=1)
        X = torch.tensor([[0.2], [0.7]])
        xc = torch.tensor([0.4])
        y = torch.tensor([0.9])
        ev = FantasyPosterior(base=cache, outcome=("eval", xc, y))
        assert torch.equal(ev.mean(X), fantasy_eval_mean(cache, xc, y, X))
        utility = LinearUtility(torch.ones(1))
        xa, xb = torch.tensor([0.3]), torch.tensor([0.8])
        cp = FantasyPosterior(base=cache, outcome=("comp", xa, xb, 1), utility=utility)
        assert torch.equal(cp.mean(X), fantasy_comp_mean(cache, xa, xb, 1, utility, X))

    def test_unknown_tag_raises(self):
        cache = make_cache(42, d=1, m=1)
        with pytest.raises(ValueError):
            FantasyPosterior(base=cache, outcome=("bogus",)).mean(torch.tensor([[0.5]]))
