"""Deterministic numerical primitives shared by the whole package.

Standard-normal helpers, jittered Cholesky, Gauss-Hermite quadrature in
probabilists' convention (expectations against N(0,1)), Sobol points, a
small Adam optimizer for objective-with-gradient callables, and a central
finite-difference gradient checker.

All routines are pure functions of their arguments; randomized ones take an
explicit seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import qmc

from .errors import (
    NonFiniteObjective,
    NotPositiveDefinite,
    UnsupportedDimension,
    UnsupportedOrder,
)

_SQRT_2PI = math.sqrt(2.0 * math.pi)

DEFAULT_JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)


def std_normal_pdf_cdf(z):
    """Return (pdf, cdf) of the standard normal at ``z``.

    The cdf goes through ``scipy.special.ndtr`` (erf-based), which is
    accurate over the whole double range.
    """
    z = float(z)
    pdf = math.exp(-0.5 * z * z) / _SQRT_2PI
    cdf = float(special.ndtr(z))
    return pdf, cdf


def mills_ratio(tau):
    """phi(tau) / Phi(tau), the innovation weight of half-space conditioning.

    Evaluated in log space, ``exp(log phi - log Phi)``, so the far-left tail
    (tau <= -6, where Phi underflows well before phi does) resolves to the
    asymptotic ~ -tau + 1/|tau| behavior instead of 0/0.
    """
    tau = np.asarray(tau, dtype=float)
    log_pdf = -0.5 * tau * tau - math.log(_SQRT_2PI)
    out = np.exp(log_pdf - special.log_ndtr(tau))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CholeskyResult:
    lower: np.ndarray
    jitter: float


def cholesky_with_jitter(matrix, jitter_ladder=DEFAULT_JITTER_LADDER):
    """Lower Cholesky factor of ``matrix + j*I`` for the smallest workable j.

    Tries the ladder in order and reports the jitter that succeeded.
    Raises NotPositiveDefinite when every rung fails.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {a.shape}")
    eye = np.eye(a.shape[0])
    for j in jitter_ladder:
        try:
            lower = np.linalg.cholesky(a + j * eye)
        except np.linalg.LinAlgError:
            continue
        return CholeskyResult(lower=lower, jitter=float(j))
    raise NotPositiveDefinite(
        f"Cholesky failed for all jitters {tuple(jitter_ladder)}"
    )


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights integrating against the standard normal density."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if self.nodes.shape != (self.order,) or self.weights.shape != (self.order,):
            raise UnsupportedOrder("nodes/weights length must equal order")


MAX_QUAD_ORDER = 128


def gauss_hermite(order):
    """Gauss-Hermite rule in probabilists' form: sum w_i f(z_i) ~ E[f(Z)].

    Nodes and weights are symmetrized after generation so that reflected
    integrands sum to bitwise-negligible differences.
    """
    if not 1 <= order <= MAX_QUAD_ORDER:
        raise UnsupportedOrder(f"order must be in [1, {MAX_QUAD_ORDER}], got {order}")
    x, w = np.polynomial.hermite.hermgauss(order)
    z = x * math.sqrt(2.0)
    w = w / math.sqrt(math.pi)
    # enforce exact +/- node symmetry (eigen-solver output can be off by 1 ulp)
    z = 0.5 * (z - z[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(nodes=z, weights=w, order=order)


MAX_TENSOR_DIM = 4


def tensor_rule(rule, dim):
    """Tensor-product extension of a 1-d rule to ``dim`` dimensions.

    Returns (nodes, weights) with nodes of shape (order**dim, dim).
    """
    if not 1 <= dim <= MAX_TENSOR_DIM:
        raise UnsupportedDimension(
            f"tensor quadrature supports dim in [1, {MAX_TENSOR_DIM}], got {dim}"
        )
    grids = np.meshgrid(*([rule.nodes] * dim), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wgrids = np.meshgrid(*([rule.weights] * dim), indexing="ij")
    weights = np.ones(nodes.shape[0])
    for wg in wgrids:
        weights = weights * wg.reshape(-1)
    return nodes, weights


MAX_SOBOL_DIM = 21


def sobol_points(count, dim, seed):
    """First ``count`` points of a scrambled Sobol sequence in [0, 1)^dim.

    Deterministic for a fixed (count, dim, seed) triple.
    """
    if not 1 <= dim <= MAX_SOBOL_DIM:
        raise UnsupportedDimension(f"dim must be in [1, {MAX_SOBOL_DIM}], got {dim}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    engine = qmc.Sobol(d=dim, scramble=True, seed=int(seed))
    with warnings.catch_warnings():
        # scipy warns when count is not a power of two; balance is not needed here
        warnings.simplefilter("ignore", UserWarning)
        pts = engine.random(count)
    return pts


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.01
    steps: int = 500
    clip_norm: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when given")


@dataclass
class AdamResult:
    point: np.ndarray
    value: float
    trace: list = field(default_factory=list)


def _project(x, projection):
    if projection is None:
        return x
    if callable(projection):
        return projection(x)
    lo, hi = projection
    return np.clip(x, lo, hi)


def adam_minimize(fun, x0, config, projection=None):
    """Minimize ``fun(x) -> (value, gradient)`` with Adam.

    Runs exactly ``config.steps`` updates, each applying gradient clipping
    (global norm), the Adam rule, then the optional projection (a callable or
    a (lo, hi) box). Returns the best iterate seen, including the post-final
    point. Raises NonFiniteObjective if any visited point evaluates non-finite.
    """
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_val = None, np.inf
    trace = []

    def evaluate(pt):
        val, grad = fun(pt)
        val = float(val)
        grad = np.asarray(grad, dtype=float)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            raise NonFiniteObjective(f"objective non-finite at {pt!r}")
        return val, grad

    for t in range(1, config.steps + 1):
        val, grad = evaluate(x)
        trace.append(val)
        if val < best_val:
            best_val, best_x = val, x.copy()
        if config.clip_norm is not None:
            norm = float(np.linalg.norm(grad))
            if norm > config.clip_norm:
                grad = grad * (config.clip_norm / norm)
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        m_hat = m / (1.0 - config.beta1**t)
        v_hat = v / (1.0 - config.beta2**t)
        x = x - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        x = _project(x, projection)

    val, _ = evaluate(x)
    trace.append(val)
    if val < best_val:
        best_val, best_x = val, x.copy()
    return AdamResult(point=best_x, value=best_val, trace=trace)


def finite_difference_check(fun, point, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is |analytic - numeric| / max(1, |numeric|); the
    max over coordinates is returned.
    """
    x = np.array(point, dtype=float)
    _, grad = fun(x)
    grad = np.asarray(grad, dtype=float)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        up, _ = fun(x + e)
        dn, _ = fun(x - e)
        numeric = (float(up) - float(dn)) / (2.0 * step)
        err = abs(grad.flat[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
