"""Mixed-likelihood sparse variational GP over the unit box.

One shared set of inducing locations Z summarizes m independent output GPs.
The variational posterior q(u) = N(m_u, L_u L_u^T) is fit by maximizing a
decomposed ELBO: a closed-form Gaussian term per evaluation, a Gauss-Hermite
probit term per pairwise comparison, minus the KL to the prior, plus the
log-hyperprior as a MAP regularizer.

Fits are full-batch and deterministic for a given seed; records are
canonically ordered before stacking so permuted datasets produce
bit-identical trajectories.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .errors import (
    DimensionMismatch,
    NonFiniteObjective,
    NotPositiveDefinite,
)
from .kernels import HyperPriors, KernelHyperparams, kernel_matrix, log_hyperprior
from .numerics import DEFAULT_JITTER_LADDER, gauss_hermite, sobol_points
from .utility import LinearUtility, PairMoments, delta_moments
from .validation import check_outputs, check_point

STATE_SCHEMA_VERSION = 1

# Gauss-Hermite order for the one-dimensional log-probit expectation. The
# integrand steepens as sigma_delta / sigma_comp grows; order 80 holds the
# dense-quadrature error below 1e-6 up to sigma_delta = 5 sigma_comp, where
# order 20 only reaches ~1e-4.
DEFAULT_QUAD_ORDER = 80

_LOG_2PI = math.log(2.0 * math.pi)

# learned log noise stds are projected into this range after every step so
# likelihood terms cannot blow up
_LOG_NOISE_BOUNDS = (math.log(1e-4), math.log(10.0))


def default_inducing_count(n_inputs):
    """M = min(64, 10 d + 10): O(nM^2 + M^3) fits stay fast at desk scale."""
    return min(64, 10 * n_inputs + 10)


# ---------------------------------------------------------------------------
# records and datasets


@dataclass
class EvalRecord:
    """One direct observation: point x in [0,1]^d, outcome y in R^m."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 1 or self.y.ndim != 1:
            raise DimensionMismatch("EvalRecord fields must be vectors")
        if not np.all(np.isfinite(self.y)):
            raise DimensionMismatch("EvalRecord outcome must be finite")


@dataclass
class CompRecord:
    """One pairwise judgement: d = 1 means x_a was ranked higher."""

    x_a: np.ndarray
    x_b: np.ndarray
    d: int

    def __post_init__(self):
        self.x_a = np.asarray(self.x_a, dtype=float)
        self.x_b = np.asarray(self.x_b, dtype=float)
        if self.x_a.shape != self.x_b.shape or self.x_a.ndim != 1:
            raise DimensionMismatch("CompRecord points must be equal-length vectors")
        if self.d not in (0, 1):
            raise DimensionMismatch(f"comparison outcome must be 0 or 1, got {self.d}")
        self.d = int(self.d)
        if np.array_equal(self.x_a, self.x_b):
            warnings.warn("degenerate comparison: x_a equals x_b", stacklevel=2)


@dataclass
class MixedDataset:
    """All observations: evaluations and comparisons, either possibly empty."""

    evals: list = field(default_factory=list)
    comps: list = field(default_factory=list)

    @property
    def n_eval(self):
        return len(self.evals)

    @property
    def n_comp(self):
        return len(self.comps)

    def canonical(self):
        """Sort records lexicographically so permutations fit identically."""
        evals = sorted(self.evals, key=lambda r: (tuple(r.x), tuple(r.y)))
        comps = sorted(self.comps, key=lambda r: (tuple(r.x_a), tuple(r.x_b), r.d))
        return MixedDataset(evals=evals, comps=comps)

    def eval_tensors(self):
        X = torch.tensor(np.array([r.x for r in self.evals], dtype=float))
        Y = torch.tensor(np.array([r.y for r in self.evals], dtype=float))
        return X, Y

    def comp_tensors(self):
        Xa = torch.tensor(np.array([r.x_a for r in self.comps], dtype=float))
        Xb = torch.tensor(np.array([r.x_b for r in self.comps], dtype=float))
        D = torch.tensor(np.array([r.d for r in self.comps], dtype=float))
        return Xa, Xb, D


# ---------------------------------------------------------------------------
# variational state


@dataclass
class VariationalState:
    """Immutable-by-convention snapshot of the fitted surrogate.

    z: (M, d) inducing locations shared across outputs.
    m_u: (m, M) variational means per output.
    l_u: (m, M, M) lower Cholesky factors of S_u per output.
    kernel: log-scale ARD hyperparameters.
    log_noise_eval: (m,) log evaluation-noise standard deviations.
    log_noise_comp: () log comparison-noise standard deviation.
    """

    z: torch.Tensor
    m_u: torch.Tensor
    l_u: torch.Tensor
    kernel: KernelHyperparams
    log_noise_eval: torch.Tensor
    log_noise_comp: torch.Tensor

    def __post_init__(self):
        M, d = self.z.shape
        m = self.kernel.n_outputs
        if self.m_u.shape != (m, M) or self.l_u.shape != (m, M, M):
            raise DimensionMismatch("variational parameter shapes do not match (m, M)")
        if self.kernel.n_inputs != d:
            raise DimensionMismatch("kernel input dimension does not match Z")
        if self.log_noise_eval.shape != (m,) or self.log_noise_comp.shape != ():
            raise DimensionMismatch("noise parameter shapes do not match")
        diag = torch.diagonal(self.l_u, dim1=-2, dim2=-1)
        if not bool(torch.all(diag > 0)):
            raise NotPositiveDefinite("L_u diagonal must be strictly positive")
        if bool(torch.any(self.z < -1e-9)) or bool(torch.any(self.z > 1 + 1e-9)):
            raise DimensionMismatch("inducing locations must lie in the unit box")

    @property
    def inducing_count(self):
        return self.z.shape[0]

    @property
    def n_inputs(self):
        return self.z.shape[1]

    @property
    def n_outputs(self):
        return self.kernel.n_outputs

    @property
    def noise_eval_std(self):
        return torch.exp(self.log_noise_eval)

    @property
    def noise_comp_std(self):
        return torch.exp(self.log_noise_comp)

    def to_json_dict(self):
        """Versioned JSON form; floats survive round trips loss-free."""
        return {
            "schema_version": STATE_SCHEMA_VERSION,
            "z": self.z.numpy().tolist(),
            "outputs": [
                {
                    "m_u": self.m_u[j].numpy().tolist(),
                    "l_u_packed": _pack_lower(self.l_u[j]),
                }
                for j in range(self.n_outputs)
            ],
            "log_lengthscales": self.kernel.log_lengthscales.numpy().tolist(),
            "log_outputscales": self.kernel.log_outputscales.numpy().tolist(),
            "log_noise_eval": self.log_noise_eval.numpy().tolist(),
            "log_noise_comp": float(self.log_noise_comp),
        }

    @staticmethod
    def from_json_dict(doc):
        version = doc.get("schema_version")
        if version != STATE_SCHEMA_VERSION:
            raise DimensionMismatch(f"unsupported state schema_version: {version!r}")
        z = torch.tensor(doc["z"], dtype=torch.float64)
        M = z.shape[0]
        m_u = torch.stack(
            [torch.tensor(o["m_u"], dtype=torch.float64) for o in doc["outputs"]]
        )
        l_u = torch.stack([_unpack_lower(o["l_u_packed"], M) for o in doc["outputs"]])
        kernel = KernelHyperparams(
            log_lengthscales=torch.tensor(doc["log_lengthscales"], dtype=torch.float64),
            log_outputscales=torch.tensor(doc["log_outputscales"], dtype=torch.float64),
        )
        return VariationalState(
            z=z,
            m_u=m_u,
            l_u=l_u,
            kernel=kernel,
            log_noise_eval=torch.tensor(doc["log_noise_eval"], dtype=torch.float64),
            log_noise_comp=torch.tensor(float(doc["log_noise_comp"])),
        )


def _pack_lower(l):
    """Row-major packed lower triangle including the diagonal."""
    out = []
    for i in range(l.shape[0]):
        out.extend(float(v) for v in l[i, : i + 1])
    return out


def _unpack_lower(packed, M):
    l = torch.zeros(M, M)
    k = 0
    for i in range(M):
        for jj in range(i + 1):
            l[i, jj] = packed[k]
            k += 1
    if k != len(packed):
        raise DimensionMismatch("packed Cholesky length does not match M")
    return l


@dataclass
class PosteriorMoments:
    """Predictive moments at query points: outputs are independent blocks.

    mean: (n, m); var: (n, m) marginal variances; cov: (m, n, n) per output.
    """

    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray


# ---------------------------------------------------------------------------
# low-level posterior algebra (torch, differentiable)


def _chol_batched(mats, ladder=DEFAULT_JITTER_LADDER):
    """Batched lower Cholesky with a shared jitter ladder."""
    eye = torch.eye(mats.shape[-1], dtype=mats.dtype)
    for j in ladder:
        lower, info = torch.linalg.cholesky_ex(mats + j * eye)
        if int(info.max()) == 0 and bool(torch.all(torch.isfinite(lower))):
            return lower
    raise NotPositiveDefinite("batched Cholesky failed for the whole jitter ladder")


def _kzz_chol(kernel, z):
    kzz = torch.stack([kernel_matrix(kernel, j, z) for j in range(kernel.n_outputs)])
    return _chol_batched(kzz)


def _kxz(kernel, z, X):
    """(m, n, M) cross-kernel from query rows to inducing rows."""
    return torch.stack(
        [kernel_matrix(kernel, j, X, z) for j in range(kernel.n_outputs)]
    )


def _paired_kernel(kernel, Xa, Xb):
    """(m, n) kernel between row-aligned point pairs."""
    cols = []
    for j in range(kernel.n_outputs):
        k = kernel_matrix(kernel, j, Xa.unsqueeze(-2), Xb.unsqueeze(-2))
        cols.append(k.squeeze(-1).squeeze(-1))
    return torch.stack(cols)


class _Projected:
    """Whitened projections of query points through the inducing set.

    With whitened variational parameters (m_v, L_v) where u = L_zz v,
    c = L_zz^{-1} K_zx carries everything: mean = c^T m_v and the posterior
    covariance correction is c^T (S_v - I) c.
    """

    def __init__(self, l_zz, l_v, m_v, kernel, z, X):
        kxz = _kxz(kernel, z, X)
        self.c = torch.linalg.solve_triangular(l_zz, kxz.transpose(-1, -2), upper=False)
        self.t = l_v.transpose(-1, -2) @ self.c
        self.m_v = m_v
        self.kernel = kernel
        self.X = X

    def mean(self):
        """(n, m)."""
        return torch.einsum("jkn,jk->nj", self.c, self.m_v)

    def var(self):
        """(n, m) marginal predictive variances."""
        prior = torch.exp(self.kernel.log_outputscales).unsqueeze(-1)
        v = prior - (self.c * self.c).sum(-2) + (self.t * self.t).sum(-2)
        return v.transpose(0, 1)

    def paired_cov(self, other):
        """(n, m) covariance between row-aligned queries of self and other."""
        k = _paired_kernel(self.kernel, self.X, other.X)
        cov = k - (self.c * other.c).sum(-2) + (self.t * other.t).sum(-2)
        return cov.transpose(0, 1)


def _whitened_pieces(kernel, z, m_u, l_u):
    """Whitened (l_zz, m_v, l_v) recovered from a u-space state."""
    l_zz = _kzz_chol(kernel, z)
    m_v = torch.linalg.solve_triangular(l_zz, m_u.unsqueeze(-1), upper=False).squeeze(-1)
    l_v = torch.linalg.solve_triangular(l_zz, l_u, upper=False)
    return l_zz, m_v, l_v


# ---------------------------------------------------------------------------
# ELBO terms


def _quad_nodes(order):
    rule = gauss_hermite(order)
    return torch.tensor(rule.nodes), torch.tensor(rule.weights)


def _eval_term_batch(mean, var, Y, log_noise_eval):
    """Sum of per-record Gaussian expected log densities; all (n, m) inputs."""
    noise_var = torch.exp(2.0 * log_noise_eval)
    m = mean.shape[-1]
    quad = (var + (mean - Y) ** 2) / noise_var
    per_record = -0.5 * (
        m * _LOG_2PI + (2.0 * log_noise_eval).sum() + quad.sum(-1)
    )
    return per_record


def _comp_term_batch(pair, D, utility, log_noise_comp, order):
    """Per-record Gauss-Hermite expectations of log Phi((2d-1) Delta / (sqrt2 s))."""
    dm = delta_moments(utility, pair)
    nodes, weights = _quad_nodes(order)
    sd = torch.sqrt(torch.clamp(dm.var, min=0.0))
    sign = 2.0 * D - 1.0
    scale = math.sqrt(2.0) * torch.exp(log_noise_comp)
    arg = sign.unsqueeze(-1) * (dm.mu.unsqueeze(-1) + sd.unsqueeze(-1) * nodes) / scale
    return (torch.special.log_ndtr(arg) * weights).sum(-1)


def _kl_term_whitened(m_v, l_v):
    """KL(q(u) || p(u)) in whitened coordinates: prior is standard normal."""
    M = l_v.shape[-1]
    tr = (l_v * l_v).sum((-1, -2))
    quad = (m_v * m_v).sum(-1)
    logdet_sv = 2.0 * torch.log(torch.diagonal(l_v, dim1=-2, dim2=-1)).sum(-1)
    return 0.5 * (tr + quad - M - logdet_sv).sum()


def _elbo_whitened(
    l_zz,
    m_v,
    l_v,
    kernel,
    z,
    log_noise_eval,
    log_noise_comp,
    data,
    utility,
    quad_order,
    priors,
    include_hyperprior,
):
    total = -_kl_term_whitened(m_v, l_v)
    if data.n_eval:
        X, Y = data.eval_tensors()
        proj = _Projected(l_zz, l_v, m_v, kernel, z, X)
        total = total + _eval_term_batch(proj.mean(), proj.var(), Y, log_noise_eval).sum()
    if data.n_comp:
        Xa, Xb, D = data.comp_tensors()
        proj_a = _Projected(l_zz, l_v, m_v, kernel, z, Xa)
        proj_b = _Projected(l_zz, l_v, m_v, kernel, z, Xb)
        pair = PairMoments(
            mean_a=proj_a.mean(),
            mean_b=proj_b.mean(),
            var_a=proj_a.var(),
            var_b=proj_b.var(),
            cov_ab=proj_a.paired_cov(proj_b),
        )
        total = total + _comp_term_batch(pair, D, utility, log_noise_comp, quad_order).sum()
    if include_hyperprior:
        total = total + log_hyperprior(kernel, log_noise_eval, log_noise_comp, priors)
    return total


def _default_utility(state, utility):
    if utility is None:
        return LinearUtility(torch.ones(state.n_outputs) / state.n_outputs)
    return utility


def elbo(
    state,
    data,
    utility=None,
    quad_order=DEFAULT_QUAD_ORDER,
    priors=HyperPriors(),
    include_hyperprior=True,
):
    """Evidence lower bound of the dataset under the state, as a float.

    include_hyperprior=False drops the MAP regularizer, leaving the pure
    bound on the marginal likelihood.
    """
    utility = _default_utility(state, utility)
    l_zz, m_v, l_v = _whitened_pieces(state.kernel, state.z, state.m_u, state.l_u)
    val = _elbo_whitened(
        l_zz,
        m_v,
        l_v,
        state.kernel,
        state.z,
        state.log_noise_eval,
        state.log_noise_comp,
        data.canonical(),
        utility,
        quad_order,
        priors,
        include_hyperprior,
    )
    return float(val)


def elbo_eval_term(state, record):
    """Closed-form Gaussian expectation term of one evaluation record."""
    data = MixedDataset(evals=[record])
    X, Y = data.eval_tensors()
    l_zz, m_v, l_v = _whitened_pieces(state.kernel, state.z, state.m_u, state.l_u)
    proj = _Projected(l_zz, l_v, m_v, state.kernel, state.z, X)
    return float(_eval_term_batch(proj.mean(), proj.var(), Y, state.log_noise_eval)[0])


def elbo_comp_term(state, record, utility=None, quad_order=DEFAULT_QUAD_ORDER):
    """Gauss-Hermite expectation term of one comparison record; always <= 0."""
    utility = _default_utility(state, utility)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = MixedDataset(comps=[record])
    Xa, Xb, D = data.comp_tensors()
    l_zz, m_v, l_v = _whitened_pieces(state.kernel, state.z, state.m_u, state.l_u)
    proj_a = _Projected(l_zz, l_v, m_v, state.kernel, state.z, Xa)
    proj_b = _Projected(l_zz, l_v, m_v, state.kernel, state.z, Xb)
    pair = PairMoments(
        mean_a=proj_a.mean(),
        mean_b=proj_b.mean(),
        var_a=proj_a.var(),
        var_b=proj_b.var(),
        cov_ab=proj_a.paired_cov(proj_b),
    )
    val = _comp_term_batch(pair, D, utility, state.log_noise_comp, quad_order)[0]
    return float(val)


def elbo_kl_term(state):
    """KL(q(u) || p(u)) summed over outputs; nonnegative."""
    _, m_v, l_v = _whitened_pieces(state.kernel, state.z, state.m_u, state.l_u)
    return float(_kl_term_whitened(m_v, l_v))


def predict(state, X):
    """Posterior moments at query rows X, as numpy arrays."""
    X_t = torch.as_tensor(np.asarray(X, dtype=float))
    if X_t.ndim != 2 or X_t.shape[1] != state.n_inputs:
        raise DimensionMismatch(
            f"X must be (n, {state.n_inputs}), got {tuple(X_t.shape)}"
        )
    with torch.no_grad():
        l_zz, m_v, l_v = _whitened_pieces(
            state.kernel, state.z, state.m_u, state.l_u
        )
        proj = _Projected(l_zz, l_v, m_v, state.kernel, state.z, X_t)
        mean = proj.mean()
        covs = []
        for j in range(state.n_outputs):
            kxx = kernel_matrix(state.kernel, j, X_t, X_t)
            c = proj.c[j]
            t = proj.t[j]
            covs.append(kxx - c.T @ c + t.T @ t)
        cov = torch.stack(covs)
        var = torch.diagonal(cov, dim1=-2, dim2=-1).transpose(0, 1)
    return PosteriorMoments(
        mean=mean.numpy(), var=var.clamp(min=0.0).numpy(), cov=cov.numpy()
    )


# ---------------------------------------------------------------------------
# posterior cache for acquisition and fantasy work


class PosteriorCache:
    """Detached posterior algebra for gradient-through-inputs consumers.

    Precomputes per-output triangular factors so that predictive moments at
    arbitrary (batched) query points need only kernel products: with
    c(x) = L_zz^{-1} K_zx and t(x) = L_v^T c(x), the posterior is
    mean = c^T m_v and cov = K_xy - c^T c' + t^T t'. Forming c and t through
    the precomputed inverse Cholesky keeps the algebra stable on poorly
    conditioned K_zz, unlike an explicit K^{-1}(K - S)K^{-1} product.
    Gradients flow through query locations, never through the state.
    """

    def __init__(self, state):
        self.state = state
        self.kernel = KernelHyperparams(
            log_lengthscales=state.kernel.log_lengthscales.detach(),
            log_outputscales=state.kernel.log_outputscales.detach(),
        )
        self.z = state.z.detach()
        with torch.no_grad():
            l_zz = _kzz_chol(self.kernel, self.z)
            self.l_zz = l_zz
            eye = torch.eye(l_zz.shape[-1], dtype=l_zz.dtype)
            a_inv = torch.linalg.solve_triangular(l_zz, eye, upper=False)
            self.a_inv = a_inv
            l_v = a_inv @ state.l_u
            self.w_mat = l_v.transpose(-1, -2) @ a_inv
            self.m_v = (a_inv @ state.m_u.unsqueeze(-1)).squeeze(-1)
        self.n_outputs = state.n_outputs
        self.n_inputs = state.n_inputs

    def _kxz(self, X):
        return torch.stack(
            [kernel_matrix(self.kernel, j, X, self.z) for j in range(self.n_outputs)],
            dim=-1,
        )

    def _ct(self, kxz):
        c = torch.einsum("jkl,...nlj->...nkj", self.a_inv, kxz)
        t = torch.einsum("jkl,...nlj->...nkj", self.w_mat, kxz)
        return c, t

    def mean(self, X):
        """(..., n, m) posterior mean at query rows."""
        c = torch.einsum("jkl,...nlj->...nkj", self.a_inv, self._kxz(X))
        return torch.einsum("...nkj,jk->...nj", c, self.m_v)

    def mean_var(self, X):
        """Posterior mean and marginal variance, each (..., n, m)."""
        c, t = self._ct(self._kxz(X))
        mean = torch.einsum("...nkj,jk->...nj", c, self.m_v)
        prior = torch.exp(self.kernel.log_outputscales)
        var = prior - c.square().sum(-2) + t.square().sum(-2)
        return mean, torch.clamp(var, min=0.0)

    def cross_cov(self, X, Y):
        """(..., n, k, m) posterior covariance between two query sets."""
        c_x, t_x = self._ct(self._kxz(X))
        c_y, t_y = self._ct(self._kxz(Y))
        prior = torch.stack(
            [
                kernel_matrix(self.kernel, j, X, Y)
                for j in range(self.n_outputs)
            ],
            dim=-1,
        )
        quad = torch.einsum("...nkj,...mkj->...nmj", c_x, c_y)
        spread = torch.einsum("...nkj,...mkj->...nmj", t_x, t_y)
        return prior - quad + spread

    def pair_moments(self, Xa, Xb):
        """PairMoments for row-aligned single points Xa, Xb of shape (..., d)."""
        both = torch.stack([Xa, Xb], dim=-2)
        mean, var = self.mean_var(both)
        cov = self.cross_cov(Xa.unsqueeze(-2), Xb.unsqueeze(-2))
        return PairMoments(
            mean_a=mean[..., 0, :],
            mean_b=mean[..., 1, :],
            var_a=var[..., 0, :],
            var_b=var[..., 1, :],
            cov_ab=cov[..., 0, 0, :],
        )


# ---------------------------------------------------------------------------
# fitting


@dataclass
class SurrogateConfig:
    """Model and fit settings.

    inducing_count defaults to min(64, 10 d + 10). pin_noise_* freeze the
    noise standard deviations at oracle values; fix_inducing freezes Z
    (init_inducing supplies the locations); fix_hyperparams freezes kernel
    hyperparameters at their initial values.
    """

    n_outputs: int
    n_inputs: int
    inducing_count: int | None = None
    quad_order: int = DEFAULT_QUAD_ORDER
    learning_rate: float = 0.01
    steps_cold: int = 500
    steps_warm: int = 200
    clip_norm: float | None = 10.0
    pin_noise_eval: float | None = None
    pin_noise_comp: float | None = None
    fix_inducing: bool = False
    init_inducing: np.ndarray | None = None
    fix_hyperparams: bool = False
    init_lengthscale: float = 1.0 / 3.0
    init_outputscale: float = 1.0
    init_noise: float = 0.1
    priors: HyperPriors = field(default_factory=HyperPriors)
    include_hyperprior: bool = True

    def resolved_inducing_count(self):
        if self.init_inducing is not None:
            return int(np.asarray(self.init_inducing).shape[0])
        if self.inducing_count is not None:
            return int(self.inducing_count)
        return default_inducing_count(self.n_inputs)


def initial_state(config, seed):
    """Untrained prior-consistent state: m_u = 0 and S_u = K_zz."""
    m, d = config.n_outputs, config.n_inputs
    M = config.resolved_inducing_count()
    if config.init_inducing is not None:
        z0 = torch.tensor(np.asarray(config.init_inducing, dtype=float))
        if z0.shape != (M, d):
            raise DimensionMismatch(f"init_inducing must be ({M}, {d})")
    else:
        z0 = torch.tensor(sobol_points(M, d, seed=seed))
    kernel = KernelHyperparams(
        log_lengthscales=torch.full((m, d), math.log(config.init_lengthscale)),
        log_outputscales=torch.full((m,), math.log(config.init_outputscale)),
    )
    noise_eval = config.pin_noise_eval if config.pin_noise_eval is not None else config.init_noise
    noise_comp = config.pin_noise_comp if config.pin_noise_comp is not None else config.init_noise
    l_u = _chol_batched(torch.stack([kernel_matrix(kernel, j, z0) for j in range(m)]))
    return VariationalState(
        z=z0,
        m_u=torch.zeros(m, M),
        l_u=l_u,
        kernel=kernel,
        log_noise_eval=torch.full((m,), math.log(noise_eval)),
        log_noise_comp=torch.tensor(math.log(noise_comp)),
    )


def _raw_from_l(l_u):
    """Unconstrained form: strict lower part raw, diagonal on log scale."""
    raw = torch.tril(l_u, diagonal=-1)
    diag = torch.log(torch.diagonal(l_u, dim1=-2, dim2=-1))
    return raw + torch.diag_embed(diag)


def _l_from_raw(raw):
    strict = torch.tril(raw, diagonal=-1)
    diag = torch.exp(torch.diagonal(raw, dim1=-2, dim2=-1))
    return strict + torch.diag_embed(diag)


def fit(data, utility=None, config=None, warm_start=None, seed=0):
    """Maximize the ELBO; returns the best state seen along the way.

    Deterministic given (data as a multiset, utility, config, warm_start,
    seed). Warm starts run the shorter schedule mandated by the driver loop.
    """
    if config is None:
        raise ValueError("config is required")
    data = data.canonical()
    if utility is None:
        utility = LinearUtility(torch.ones(config.n_outputs) / config.n_outputs)

    init = warm_start if warm_start is not None else initial_state(config, seed)
    if warm_start is not None:
        if (
            init.n_outputs != config.n_outputs
            or init.n_inputs != config.n_inputs
        ):
            raise DimensionMismatch("warm start does not match config dimensions")

    with torch.no_grad():
        _, m_v0, l_v0 = _whitened_pieces(
            init.kernel, init.z, init.m_u, init.l_u
        )
    z = init.z.detach().clone().requires_grad_(not config.fix_inducing)
    m_v = m_v0.detach().clone().requires_grad_(True)
    l_raw = _raw_from_l(l_v0.detach()).requires_grad_(True)
    log_ls = init.kernel.log_lengthscales.detach().clone().requires_grad_(
        not config.fix_hyperparams
    )
    log_os = init.kernel.log_outputscales.detach().clone().requires_grad_(
        not config.fix_hyperparams
    )
    log_ne = init.log_noise_eval.detach().clone().requires_grad_(
        config.pin_noise_eval is None
    )
    log_nc = init.log_noise_comp.detach().clone().requires_grad_(
        config.pin_noise_comp is None
    )

    leaves = [z, m_v, l_raw, log_ls, log_os, log_ne, log_nc]
    trainable = [p for p in leaves if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.learning_rate)
    steps = config.steps_warm if warm_start is not None else config.steps_cold

    def clean_state():
        with torch.no_grad():
            kernel = KernelHyperparams(
                log_lengthscales=log_ls.detach().clone(),
                log_outputscales=log_os.detach().clone(),
            )
            l_zz = _kzz_chol(kernel, z.detach())
            l_v = _l_from_raw(l_raw.detach())
            return VariationalState(
                z=z.detach().clone(),
                m_u=(l_zz @ m_v.detach().unsqueeze(-1)).squeeze(-1),
                l_u=l_zz @ l_v,
                kernel=kernel,
                log_noise_eval=log_ne.detach().clone(),
                log_noise_comp=log_nc.detach().clone(),
            )

    def loss_fn():
        kernel = KernelHyperparams(log_lengthscales=log_ls, log_outputscales=log_os)
        l_zz = _kzz_chol(kernel, z)
        return -_elbo_whitened(
            l_zz,
            m_v,
            _l_from_raw(l_raw),
            kernel,
            z,
            log_ne,
            log_nc,
            data,
            utility,
            config.quad_order,
            config.priors,
            config.include_hyperprior,
        )

    best_loss = math.inf
    best_state = None
    for _ in range(steps):
        optimizer.zero_grad()
        loss = loss_fn()
        if not torch.isfinite(loss):
            raise NonFiniteObjective("ELBO became non-finite during fitting")
        loss_val = float(loss.detach())
        if loss_val < best_loss:
            best_loss = loss_val
            best_state = clean_state()
        loss.backward()
        if config.clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(trainable, config.clip_norm)
        optimizer.step()
        with torch.no_grad():
            z.clamp_(0.0, 1.0)
            log_ne.clamp_(*_LOG_NOISE_BOUNDS)
            log_nc.clamp_(*_LOG_NOISE_BOUNDS)
    final_loss = loss_fn()
    if not torch.isfinite(final_loss):
        raise NonFiniteObjective("ELBO became non-finite during fitting")
    if float(final_loss.detach()) < best_loss:
        best_state = clean_state()
    return best_state


# ---------------------------------------------------------------------------
# sklearn-style estimator wrapper


class MixedGP(BaseEstimator):
    """Estimator-style facade over the functional surrogate API.

    Follows the scikit-learn conventions: constructor arguments are stored
    verbatim and exposed through get_params/set_params, fit(X, y) handles the
    evaluation-only case and fit_mixed(dataset) the general one.
    """

    def __init__(
        self,
        n_outputs=1,
        inducing_count=None,
        quad_order=DEFAULT_QUAD_ORDER,
        learning_rate=0.01,
        steps_cold=500,
        steps_warm=200,
        clip_norm=10.0,
        pin_noise_eval=None,
        pin_noise_comp=None,
        fix_inducing=False,
        init_inducing=None,
        fix_hyperparams=False,
        random_state=0,
    ):
        self.n_outputs = n_outputs
        self.inducing_count = inducing_count
        self.quad_order = quad_order
        self.learning_rate = learning_rate
        self.steps_cold = steps_cold
        self.steps_warm = steps_warm
        self.clip_norm = clip_norm
        self.pin_noise_eval = pin_noise_eval
        self.pin_noise_comp = pin_noise_comp
        self.fix_inducing = fix_inducing
        self.init_inducing = init_inducing
        self.fix_hyperparams = fix_hyperparams
        self.random_state = random_state

    def _config(self, n_inputs):
        return SurrogateConfig(
            n_outputs=self.n_outputs,
            n_inputs=n_inputs,
            inducing_count=self.inducing_count,
            quad_order=self.quad_order,
            learning_rate=self.learning_rate,
            steps_cold=self.steps_cold,
            steps_warm=self.steps_warm,
            clip_norm=self.clip_norm,
            pin_noise_eval=self.pin_noise_eval,
            pin_noise_comp=self.pin_noise_comp,
            fix_inducing=self.fix_inducing,
            init_inducing=self.init_inducing,
            fix_hyperparams=self.fix_hyperparams,
        )

    def fit(self, X, y):
        """Fit on direct evaluations only."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2:
            raise DimensionMismatch("X must be 2-dimensional")
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if y.shape != (X.shape[0], self.n_outputs):
            raise DimensionMismatch(
                f"y must have shape ({X.shape[0]}, {self.n_outputs}), got {y.shape}"
            )
        records = [
            EvalRecord(
                x=check_point(X[i], X.shape[1]),
                y=check_outputs(y[i], self.n_outputs),
            )
            for i in range(X.shape[0])
        ]
        return self.fit_mixed(MixedDataset(evals=records), n_inputs=X.shape[1])

    def fit_mixed(self, dataset, n_inputs=None, utility=None, warm_start=None):
        """Fit on a mixed dataset of evaluations and comparisons."""
        if n_inputs is None:
            if dataset.n_eval:
                n_inputs = dataset.evals[0].x.shape[0]
            elif dataset.n_comp:
                n_inputs = dataset.comps[0].x_a.shape[0]
            else:
                raise DimensionMismatch("cannot infer input dimension from empty data")
        self.state_ = fit(
            dataset,
            utility=utility,
            config=self._config(n_inputs),
            warm_start=warm_start,
            seed=self.random_state,
        )
        self.n_features_in_ = n_inputs
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise RuntimeError("this MixedGP instance is not fitted yet")

    def predict(self, X, return_std=False):
        self._check_fitted()
        moments = predict(self.state_, X)
        mean = moments.mean
        std = np.sqrt(moments.var)
        if self.n_outputs == 1:
            mean = mean[:, 0]
            std = std[:, 0]
        return (mean, std) if return_std else mean

    def score(self, X, y):
        """Coefficient of determination averaged over outputs."""
        self._check_fitted()
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        pred = predict(self.state_, X).mean
        ss_res = ((y - pred) ** 2).sum(axis=0)
        ss_tot = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
        return float(np.mean(1.0 - ss_res / np.maximum(ss_tot, 1e-300)))
