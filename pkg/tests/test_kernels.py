"""Tests for ARD kernels and Gamma hyperpriors."""

import math

import numpy as np
import pytest
import torch

from eabo.errors import DimensionMismatch
from eabo.kernels import (
    GammaPrior,
    HyperPriors,
    KernelHyperparams,
    kernel_diag,
    kernel_matrix,
    log_hyperprior,
)
from eabo.numerics import cholesky_with_jitter, finite_difference_check

# mpmath oracle: Gamma(shape=2, rate=2) log pdf at 1 equals log 4 - 2
GAMMA_2_2_LOGPDF_AT_1 = -0.61370563888010938117


def _params(log_ls, log_os):
    return KernelHyperparams(
        log_lengthscales=torch.tensor(log_ls, dtype=torch.float64),
        log_outputscales=torch.tensor(log_os, dtype=torch.float64),
    )


class TestKernelMatrix:
    def test_zero_distance_gives_variance(self):
        params = _params([[0.3, -0.2]], [0.7])
        x = torch.tensor([[0.4, 0.6]])
        k = kernel_matrix(params, 0, x, x)
        assert k.shape == (1, 1)
        assert float(k[0, 0]) == pytest.approx(math.exp(0.7), rel=1e-14)

    def test_large_distance_vanishes(self):
        params = _params([[math.log(1e-3)]], [0.0])
        a = torch.tensor([[0.0]])
        b = torch.tensor([[1.0]])
        assert float(kernel_matrix(params, 0, a, b)) < 1e-300

    def test_unit_case_oracle(self):
        # d=1, l=1, sigma^2=1, |x-x'|=1 -> e^{-1/2}
        params = _params([[0.0]], [0.0])
        a = torch.tensor([[0.0]])
        b = torch.tensor([[1.0]])
        k = float(kernel_matrix(params, 0, a, b))
        assert k == pytest.approx(math.exp(-0.5), rel=1e-14)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(1)
        X = torch.tensor(rng.random((50, 3)))
        params = _params([[math.log(0.4)] * 3], [math.log(1.3)])
        K = kernel_matrix(params, 0, X, X)
        assert torch.max(torch.abs(K - K.T)) < 1e-14
        res = cholesky_with_jitter(K.numpy())
        assert res.jitter <= 1e-6

    def test_stationarity(self):
        rng = np.random.default_rng(2)
        X = torch.tensor(rng.random((10, 2)) * 0.5)
        shift = torch.tensor([0.21, 0.17])
        params = _params([[math.log(0.3), math.log(0.8)]], [0.4])
        k1 = kernel_matrix(params, 0, X, X)
        k2 = kernel_matrix(params, 0, X + shift, X + shift)
        assert torch.max(torch.abs(k1 - k2)) < 1e-12

    def test_ard_monotonicity(self):
        rng = np.random.default_rng(3)
        X = torch.tensor(rng.random((8, 2)))
        base = _params([[math.log(0.2), math.log(0.5)]], [0.0])
        wider = _params([[math.log(0.4), math.log(0.5)]], [0.0])
        k_base = kernel_matrix(base, 0, X, X)
        k_wide = kernel_matrix(wider, 0, X, X)
        off = ~torch.eye(8, dtype=torch.bool)
        assert torch.all(k_wide[off] >= k_base[off])

    def test_batched_broadcast(self):
        params = _params([[0.0, 0.0]], [0.0])
        Xb = torch.rand(4, 3, 2, dtype=torch.float64)
        Z = torch.rand(5, 2, dtype=torch.float64)
        K = kernel_matrix(params, 0, Xb, Z)
        assert K.shape == (4, 3, 5)
        for i in range(4):
            K_i = kernel_matrix(params, 0, Xb[i], Z)
            assert torch.allclose(K, K, atol=0) and torch.allclose(K[i], K_i, atol=1e-15)

    def test_per_output_independence(self):
        params = _params([[0.0], [math.log(0.1)]], [0.0, math.log(2.0)])
        a = torch.tensor([[0.2]])
        b = torch.tensor([[0.5]])
        k0 = float(kernel_matrix(params, 0, a, b))
        k1 = float(kernel_matrix(params, 1, a, b))
        assert k0 == pytest.approx(math.exp(-0.5 * 0.09), rel=1e-12)
        assert k1 == pytest.approx(2.0 * math.exp(-0.5 * 9.0), rel=1e-12)

    def test_diag(self):
        params = _params([[0.0]], [math.log(1.7)])
        X = torch.rand(6, 1, dtype=torch.float64)
        diag = kernel_diag(params, 0, X)
        assert diag.shape == (6,)
        assert torch.allclose(diag, torch.full((6,), 1.7, dtype=torch.float64))

    def test_dimension_mismatch(self):
        params = _params([[0.0, 0.0]], [0.0])
        with pytest.raises(DimensionMismatch):
            kernel_matrix(params, 0, torch.rand(3, 1, dtype=torch.float64))
        with pytest.raises(DimensionMismatch):
            kernel_matrix(params, 3, torch.rand(3, 2, dtype=torch.float64))

    def test_outside_box_warns(self):
        params = _params([[0.0]], [0.0])
        with pytest.warns(UserWarning):
            kernel_matrix(params, 0, torch.tensor([[1.5]]))

    def test_gradient_vs_finite_difference(self):
        rng = np.random.default_rng(4)
        X = torch.tensor(rng.random((4, 2)))

        def fun(theta):
            t = torch.tensor(theta, requires_grad=True)
            params = KernelHyperparams(
                log_lengthscales=t[:2].reshape(1, 2),
                log_outputscales=t[2:3],
            )
            val = kernel_matrix(params, 0, X, X).sum()
            val.backward()
            return float(val.detach()), t.grad.numpy()

        err = finite_difference_check(fun, np.array([-0.5, 0.2, 0.3]))
        assert err < 1e-6


class TestHyperparams:
    def test_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            KernelHyperparams(torch.zeros(3), torch.zeros(1))
        with pytest.raises(DimensionMismatch):
            KernelHyperparams(torch.zeros(2, 3), torch.zeros(1))

    def test_default(self):
        p = KernelHyperparams.default(2, 5)
        assert p.n_outputs == 2 and p.n_inputs == 5
        assert torch.all(p.log_lengthscales == 0)


class TestGammaPrior:
    def test_exponential_special_case(self):
        # shape=1, rate=1 at value 1 -> log e^{-1} = -1
        prior = GammaPrior(shape=1.0, rate=1.0)
        assert float(prior.log_pdf(torch.tensor(1.0))) == pytest.approx(-1.0, abs=1e-14)

    def test_oracle_value(self):
        prior = GammaPrior(shape=2.0, rate=2.0)
        got = float(prior.log_pdf(torch.tensor(1.0)))
        assert got == pytest.approx(GAMMA_2_2_LOGPDF_AT_1, abs=1e-14)

    def test_normalization(self):
        # numeric integral of pdf over (0, inf) is 1
        prior = GammaPrior(shape=3.0, rate=6.0)
        xs = torch.linspace(1e-6, 8.0, 200001, dtype=torch.float64)
        pdf = torch.exp(prior.log_pdf(xs))
        integral = torch.trapezoid(pdf, xs)
        assert float(integral) == pytest.approx(1.0, abs=1e-6)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            GammaPrior(shape=0.0, rate=1.0)
        with pytest.raises(ValueError):
            GammaPrior(shape=1.0, rate=-1.0)


class TestLogHyperprior:
    def test_additivity(self):
        params = _params([[0.0, 0.1]], [0.2])
        ne = torch.tensor([math.log(0.1)])
        nc = torch.tensor(math.log(0.1))
        base = float(log_hyperprior(params, ne, nc))

        params2 = _params([[0.5, 0.1]], [0.2])
        changed = float(log_hyperprior(params2, ne, nc))
        pri = HyperPriors().lengthscale
        delta_expected = float(
            pri.log_pdf(torch.tensor(math.exp(0.5))) - pri.log_pdf(torch.tensor(1.0))
        )
        assert changed - base == pytest.approx(delta_expected, abs=1e-12)

    def test_finite_for_extreme_logs(self):
        params = _params([[-8.0, 6.0]], [-10.0])
        val = log_hyperprior(params, torch.tensor([-12.0]), torch.tensor(4.0))
        assert math.isfinite(float(val))

    def test_matches_manual_sum(self):
        priors = HyperPriors()
        params = _params([[math.log(0.3)]], [math.log(1.5)])
        ne = torch.tensor([math.log(0.1)])
        nc = torch.tensor(math.log(0.2))
        manual = (
            float(priors.lengthscale.log_pdf(torch.tensor(0.3)))
            + float(priors.outputscale.log_pdf(torch.tensor(1.5)))
            + float(priors.noise.log_pdf(torch.tensor(0.1)))
            + float(priors.noise.log_pdf(torch.tensor(0.2)))
        )
        assert float(log_hyperprior(params, ne, nc, priors)) == pytest.approx(
            manual, abs=1e-12
        )
