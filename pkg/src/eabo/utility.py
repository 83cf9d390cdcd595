"""Utility functions over model outputs and Gaussian moment matching.

Two scalarizations are supported: linear U(y) = w^T y and Chebyshev
U(y) = min_j w_j y_j. Expected utilities and the matched moments of the
difference Delta = U(f(x_a)) - U(f(x_b)) are exact for linear U and
tensor-grid Gauss-Hermite approximations for Chebyshev.

Everything is torch-based and batched: moment inputs may carry leading
batch dimensions and gradients flow through all paths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import torch

from .errors import (
    ConfigError,
    DimensionMismatch,
    NegativeVariance,
    UnsupportedDimension,
)
from .numerics import gauss_hermite, tensor_rule

EXPECTED_UTILITY_ORDER = 10
DELTA_ORDER = 8

# variances smaller than this switch the Chebyshev covariance slope to its
# closed-form degenerate limit
_VAR_FLOOR = 1e-12

NEGATIVE_VARIANCE_TOL = 1e-10


@dataclass(frozen=True)
class LinearUtility:
    """U(y) = w^T y."""

    weights: torch.Tensor

    def __post_init__(self):
        if self.weights.ndim != 1:
            raise DimensionMismatch("weights must be a vector")

    @property
    def n_outputs(self):
        return self.weights.shape[0]

    @property
    def is_linear(self):
        return True

    @staticmethod
    def equal(n_outputs):
        return LinearUtility(torch.full((n_outputs,), 1.0 / n_outputs))

    def value(self, y):
        y = torch.as_tensor(y, dtype=torch.float64)
        if y.shape[-1] != self.n_outputs:
            raise DimensionMismatch(
                f"y has {y.shape[-1]} outputs, utility expects {self.n_outputs}"
            )
        return (y * self.weights).sum(-1)


@dataclass(frozen=True)
class ChebyshevUtility:
    """U(y) = min_j w_j y_j with strictly positive weights."""

    weights: torch.Tensor

    def __post_init__(self):
        if self.weights.ndim != 1:
            raise DimensionMismatch("weights must be a vector")
        if not bool(torch.all(self.weights > 0)):
            raise ValueError("Chebyshev weights must be strictly positive")

    @property
    def n_outputs(self):
        return self.weights.shape[0]

    @property
    def is_linear(self):
        # a single-output min is just a scale, which is linear
        return self.n_outputs == 1

    @staticmethod
    def unit(n_outputs):
        return ChebyshevUtility(torch.ones(n_outputs))

    def value(self, y):
        y = torch.as_tensor(y, dtype=torch.float64)
        if y.shape[-1] != self.n_outputs:
            raise DimensionMismatch(
                f"y has {y.shape[-1]} outputs, utility expects {self.n_outputs}"
            )
        return (y * self.weights).min(-1).values


def utility_value(utility, y):
    """Scalar utility of output vectors y of shape (..., m)."""
    return utility.value(y)


def utility_from_config(doc):
    """Parse {"type": "linear"|"chebyshev", "weights": [...]}."""
    if not isinstance(doc, dict):
        raise ConfigError("utility must be an object", field="utility")
    kind = doc.get("type")
    weights = doc.get("weights")
    if kind not in ("linear", "chebyshev"):
        raise ConfigError(
            f"utility type must be 'linear' or 'chebyshev', got {kind!r}",
            field="utility.type",
        )
    if (
        not isinstance(weights, (list, tuple))
        or len(weights) == 0
        or not all(isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights)
    ):
        raise ConfigError("utility weights must be a nonempty number list", field="utility.weights")
    w = torch.tensor([float(v) for v in weights], dtype=torch.float64)
    if kind == "linear":
        return LinearUtility(w)
    if not bool(torch.all(w > 0)):
        raise ConfigError("chebyshev weights must be positive", field="utility.weights")
    return ChebyshevUtility(w)


def utility_to_config(utility):
    kind = "linear" if isinstance(utility, LinearUtility) else "chebyshev"
    return {"type": kind, "weights": [float(w) for w in utility.weights]}


@lru_cache(maxsize=16)
def _torch_tensor_rule(order, dim):
    rule = gauss_hermite(order)
    nodes, weights = tensor_rule(rule, dim)
    return torch.tensor(nodes), torch.tensor(weights)


def expected_utility(utility, mean, var_diag, order=EXPECTED_UTILITY_ORDER):
    """E[U(f)] for f ~ N(mean, diag(var_diag)), batched over leading dims.

    Linear utilities bypass quadrature (w^T mean exactly); Chebyshev uses an
    m-dimensional tensor Gauss-Hermite grid.
    """
    mean = torch.as_tensor(mean, dtype=torch.float64)
    var_diag = torch.as_tensor(var_diag, dtype=torch.float64)
    if utility.is_linear:
        w = _linear_weights(utility)
        return (mean * w).sum(-1)
    m = utility.n_outputs
    if mean.shape[-1] != m or var_diag.shape[-1] != m:
        raise DimensionMismatch("moment shape does not match utility outputs")
    nodes, weights = _torch_tensor_rule(order, m)
    # the 1e-18 floor keeps the sqrt gradient finite at zero variance
    sd = torch.sqrt(torch.clamp(var_diag, min=0.0) + 1e-18)
    # samples: (..., Q, m)
    samples = mean.unsqueeze(-2) + sd.unsqueeze(-2) * nodes
    values = utility.value(samples)
    return (values * weights).sum(-1)


@dataclass
class PairMoments:
    """Joint Gaussian moments of (f(x_a), f(x_b)) per independent output.

    All fields have shape (..., m): means, marginal variances, and the
    cross-covariance Cov[f_j(x_a), f_j(x_b)].
    """

    mean_a: torch.Tensor
    mean_b: torch.Tensor
    var_a: torch.Tensor
    var_b: torch.Tensor
    cov_ab: torch.Tensor


@dataclass
class DeltaMoments:
    """Matched Gaussian moments of Delta = U(f(x_a)) - U(f(x_b)).

    cov_with_f, when requested, holds Cov[f_j(x_k), Delta] with shape
    (..., n_extra, m).
    """

    mu: torch.Tensor
    var: torch.Tensor
    cov_with_f: torch.Tensor | None = None


def _linear_weights(utility):
    return utility.weights


def _check_nonneg_variance(var):
    with torch.no_grad():
        worst = float(var.min()) if var.numel() else 0.0
    if worst < -NEGATIVE_VARIANCE_TOL:
        raise NegativeVariance(f"sigma_Delta^2 = {worst} below -{NEGATIVE_VARIANCE_TOL}")
    if worst < 0.0:
        # coincident pairs produce roundoff-scale negatives constantly during
        # acquisition optimization; only warn above roundoff scale
        if worst < -1e-14:
            warnings.warn("clipping slightly negative sigma_Delta^2 to 0", stacklevel=3)
        return torch.clamp(var, min=0.0)
    return var


def _sqrtm_2x2(a, c, b):
    """Symmetric PSD square root of [[a, c], [c, b]], elementwise batched.

    Returns (s11, s12, s22). Uses the closed form (C + sqrt(det) I) /
    sqrt(tr + 2 sqrt(det)); the symmetric root (unlike Cholesky) makes the
    construction equivariant under swapping the two points, so antisymmetry
    of the Delta moments holds to machine precision.
    """
    det = torch.clamp(a * b - c * c, min=0.0)
    s = torch.sqrt(det)
    t2 = torch.clamp(a + b + 2.0 * s, min=0.0)
    t = torch.sqrt(t2)
    safe_t = torch.where(t > 1e-150, t, torch.ones_like(t))
    scale = torch.where(t > 1e-150, 1.0 / safe_t, torch.zeros_like(t))
    return (a + s) * scale, c * scale, (b + s) * scale


def delta_moments(
    utility,
    pair,
    cross_a=None,
    cross_b=None,
    order=DELTA_ORDER,
):
    """Moments of Delta = U(f(x_a)) - U(f(x_b)) under the joint Gaussian.

    Linear utilities are exact; Chebyshev matches the first two moments on
    a 2m-dimensional tensor Gauss-Hermite grid (supported for m <= 2).

    cross_a / cross_b, of shape (..., n_extra, m), are the per-output
    posterior covariances Cov[f_j(x_k), f_j(x_a)] and Cov[f_j(x_k), f_j(x_b)]
    for extra points x_k; when given, cov_with_f = Cov[f(x_k), Delta] is
    returned alongside.
    """
    if (cross_a is None) != (cross_b is None):
        raise DimensionMismatch("cross_a and cross_b must be given together")
    if utility.is_linear:
        return _delta_moments_linear(utility, pair, cross_a, cross_b)
    return _delta_moments_chebyshev(utility, pair, cross_a, cross_b, order)


def _delta_moments_linear(utility, pair, cross_a, cross_b):
    w = _linear_weights(utility)
    mu = ((pair.mean_a - pair.mean_b) * w).sum(-1)
    var = (w * w * (pair.var_a + pair.var_b - 2.0 * pair.cov_ab)).sum(-1)
    var = _check_nonneg_variance(var)
    cov_with_f = None
    if cross_a is not None:
        cov_with_f = w * (cross_a - cross_b)
    return DeltaMoments(mu=mu, var=var, cov_with_f=cov_with_f)


def _delta_moments_chebyshev(utility, pair, cross_a, cross_b, order):
    m = utility.n_outputs
    if m > 2:
        raise UnsupportedDimension(
            f"Chebyshev moment matching is capped at m=2 outputs, got m={m}"
        )
    w = utility.weights
    nodes, weights = _torch_tensor_rule(order, 2 * m)

    fa_parts, fb_parts = [], []
    for j in range(m):
        s11, s12, s22 = _sqrtm_2x2(pair.var_a[..., j], pair.cov_ab[..., j], pair.var_b[..., j])
        z1 = nodes[:, 2 * j]
        z2 = nodes[:, 2 * j + 1]
        mu_a = pair.mean_a[..., j].unsqueeze(-1)
        mu_b = pair.mean_b[..., j].unsqueeze(-1)
        fa_parts.append(mu_a + s11.unsqueeze(-1) * z1 + s12.unsqueeze(-1) * z2)
        fb_parts.append(mu_b + s12.unsqueeze(-1) * z1 + s22.unsqueeze(-1) * z2)
    fa = torch.stack(fa_parts, dim=-1)
    fb = torch.stack(fb_parts, dim=-1)
    ua = utility.value(fa)
    ub = utility.value(fb)

    e_ua = (ua * weights).sum(-1)
    e_ub = (ub * weights).sum(-1)
    mu = e_ua - e_ub
    delta = (ua - ub) - mu.unsqueeze(-1)
    # discrete variance of Delta on the grid: nonnegative by construction
    var = (delta * delta * weights).sum(-1)
    var = _check_nonneg_variance(var)

    cov_with_f = None
    if cross_a is not None:
        slope_a = _cheb_slope(w, pair.mean_a, pair.var_a, fa, ua, e_ua, weights)
        slope_b = _cheb_slope(w, pair.mean_b, pair.var_b, fb, ub, e_ub, weights)
        cov_with_f = cross_a * slope_a.unsqueeze(-2) - cross_b * slope_b.unsqueeze(-2)
    return DeltaMoments(mu=mu, var=var, cov_with_f=cov_with_f)


def _cheb_slope(w, mean, var, samples, values, e_value, weights):
    """Per-output regression slope Cov[f_j(x_a), U(f(x_a))] / Var[f_j(x_a)].

    Cov[f(x), U(f(x_a))] factors through this slope because only f_j(x_a)
    carries the dependence per output. Computed on the quadrature grid; when
    the endpoint variance degenerates the slope switches to its closed-form
    limit w_j P(j = argmin), a normal orthant probability for m = 2.
    """
    m = mean.shape[-1]
    centered = samples - mean.unsqueeze(-2)
    cov = (centered * (values - e_value.unsqueeze(-1)).unsqueeze(-1) * weights.unsqueeze(-1)).sum(-2)
    safe_var = torch.clamp(var, min=_VAR_FLOOR)
    slope_quad = cov / safe_var

    if m == 1:
        slope_limit = w.expand_as(var)
    else:
        # P(w_j f_j <= w_k f_k) for independent outputs, saturating as
        # variances vanish
        wm = w * mean
        wv = w * w * var
        diff = wm.flip(-1) - wm
        denom = torch.sqrt(torch.clamp(wv + wv.flip(-1), min=_VAR_FLOOR))
        slope_limit = w * torch.special.ndtr(diff / denom)
    return torch.where(var > _VAR_FLOOR, slope_quad, slope_limit)
