"""Shared oracles and instance builders for the test suite."""

import math

import numpy as np
import torch

from eabo.kernels import HyperPriors, KernelHyperparams, kernel_matrix
from eabo.numerics import finite_difference_check, sobol_points
from eabo.surrogate import (
    CompRecord,
    EvalRecord,
    MixedDataset,
    VariationalState,
    _elbo_whitened,
    _kzz_chol,
    _l_from_raw,
    _raw_from_l,
    _whitened_pieces,
)
from eabo.utility import ChebyshevUtility, LinearUtility


def gpr_moments(kernel, j, X, y, noise_std, Xq):
    """Exact GP-regression posterior mean and variance for output j."""
    X_t = torch.tensor(np.asarray(X, dtype=float))
    Xq_t = torch.tensor(np.asarray(Xq, dtype=float))
    K = kernel_matrix(kernel, j, X_t).numpy()
    Ks = kernel_matrix(kernel, j, Xq_t, X_t).numpy()
    prior = float(torch.exp(kernel.log_outputscales[j]))
    A = K + (noise_std**2) * np.eye(K.shape[0])
    mean = Ks @ np.linalg.solve(A, np.asarray(y, dtype=float))
    var = prior - np.einsum("ij,ji->i", Ks, np.linalg.solve(A, Ks.T))
    return mean, var


def moment_state(mu_delta, sd_delta, noise_comp):
    """One-output state realizing exact delta moments, plus its record.

    Inducing points sit at the two comparison endpoints and the lengthscale
    is tiny, so K_ZZ is diagonal and the predictive moments at the endpoints
    are read directly from (m_u, S_u): the utility difference at the returned
    (x_a, x_b) is N(mu_delta, sd_delta^2) exactly.
    """
    xa, xb = np.array([0.25]), np.array([0.75])
    kernel = KernelHyperparams(
        log_lengthscales=torch.full((1, 1), math.log(0.01)),
        log_outputscales=torch.zeros(1),
    )
    sd = max(float(sd_delta), 1e-9)
    state = VariationalState(
        z=torch.tensor(np.stack([xa, xb])),
        m_u=torch.tensor([[float(mu_delta), 0.0]]),
        l_u=(sd / math.sqrt(2.0)) * torch.eye(2).unsqueeze(0),
        kernel=kernel,
        log_noise_eval=torch.tensor([math.log(0.1)]),
        log_noise_comp=torch.tensor(math.log(float(noise_comp))),
    )
    return state, xa, xb


def trapezoid_comp_oracle(mu, sd, noise_comp, d, half_width=8.0, count=800001):
    """Dense trapezoidal E[log Phi((2d-1) Delta / (sqrt2 s))], Delta Gaussian."""
    from scipy.special import log_ndtr

    sign = 2 * d - 1
    scale = math.sqrt(2.0) * noise_comp
    if sd < 1e-12:
        return float(log_ndtr(sign * mu / scale))
    grid = np.linspace(mu - half_width * sd, mu + half_width * sd, count)
    dens = np.exp(-0.5 * ((grid - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    return float(np.trapezoid(log_ndtr(sign * grid / scale) * dens, grid))


def random_small_instance(seed, d=None, m=None, M=None, n_eval=None, n_comp=None):
    """Well-conditioned random (state, data, utility) within acceptance caps.

    Variational parameters are drawn in whitened coordinates so posterior
    means stay O(1) even when K_ZZ is poorly conditioned.
    """
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4)) if d is None else d
    m = int(rng.integers(1, 3)) if m is None else m
    M = int(rng.integers(2, 9)) if M is None else M
    n_eval = int(rng.integers(1, 6)) if n_eval is None else n_eval
    n_comp = int(rng.integers(1, 6)) if n_comp is None else n_comp

    z = torch.tensor(0.1 + 0.8 * sobol_points(M, d, seed=seed))
    kernel = KernelHyperparams(
        log_lengthscales=torch.tensor(rng.uniform(math.log(0.3), math.log(0.7), (m, d))),
        log_outputscales=torch.tensor(rng.uniform(-0.5, 0.5, (m,))),
    )
    m_v = torch.tensor(0.7 * rng.standard_normal((m, M)))
    l_v = torch.tensor(
        np.tril(0.2 * rng.standard_normal((m, M, M)), -1)
        + np.eye(M)[None] * np.exp(rng.uniform(-0.7, 0.2, (m, 1, 1)))
    )
    l_zz = _kzz_chol(kernel, z)
    state = VariationalState(
        z=z,
        m_u=(l_zz @ m_v.unsqueeze(-1)).squeeze(-1),
        l_u=l_zz @ l_v,
        kernel=kernel,
        log_noise_eval=torch.tensor(np.log(rng.uniform(0.05, 0.8, m))),
        log_noise_comp=torch.tensor(math.log(rng.uniform(0.05, 0.8))),
    )

    evals = [
        EvalRecord(rng.uniform(0.05, 0.95, d), rng.standard_normal(m))
        for _ in range(n_eval)
    ]
    comps = [
        CompRecord(
            rng.uniform(0.05, 0.95, d),
            rng.uniform(0.05, 0.95, d),
            int(rng.integers(0, 2)),
        )
        for _ in range(n_comp)
    ]
    data = MixedDataset(evals=evals, comps=comps)

    weights = torch.tensor(rng.uniform(0.2, 1.0, m))
    weights = weights / weights.sum()
    utility = ChebyshevUtility(weights) if rng.integers(0, 2) else LinearUtility(weights)
    return state, data, utility


def elbo_fd_max_rel_err(state, data, utility, quad_order=None, step=1e-5):
    """Finite-difference check of the ELBO gradient over every free leaf."""
    from eabo.surrogate import DEFAULT_QUAD_ORDER

    order = DEFAULT_QUAD_ORDER if quad_order is None else quad_order
    with torch.no_grad():
        _, m_v0, l_v0 = _whitened_pieces(state.kernel, state.z, state.m_u, state.l_u)
        l_raw0 = _raw_from_l(l_v0)
    m, d = state.n_outputs, state.n_inputs
    M = state.inducing_count
    pieces = [
        state.z.numpy().ravel(),
        m_v0.numpy().ravel(),
        l_raw0.numpy().ravel(),
        state.kernel.log_lengthscales.numpy().ravel(),
        state.kernel.log_outputscales.numpy().ravel(),
        state.log_noise_eval.numpy().ravel(),
        np.array([float(state.log_noise_comp)]),
    ]
    sizes = [p.size for p in pieces]
    x0 = np.concatenate(pieces)

    def fun(vec):
        x = torch.tensor(vec, requires_grad=True)
        parts = torch.split(x, sizes)
        z = parts[0].reshape(M, d)
        m_v = parts[1].reshape(m, M)
        l_raw = parts[2].reshape(m, M, M)
        kernel = KernelHyperparams(
            log_lengthscales=parts[3].reshape(m, d),
            log_outputscales=parts[4],
        )
        val = _elbo_whitened(
            _kzz_chol(kernel, z),
            m_v,
            _l_from_raw(l_raw),
            kernel,
            z,
            parts[5],
            parts[6].reshape(()),
            data,
            utility,
            order,
            HyperPriors(),
            True,
        )
        val.backward()
        return float(val.detach()), x.grad.numpy().copy()

    return finite_difference_check(fun, x0, step=step)
