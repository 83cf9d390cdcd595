"""Standard test objectives with simulated evaluation and comparison oracles.

Four benchmarks on the unit box: Branin (d=2, m=1), Hartmann6 (d=6, m=1),
BraninCurrin (d=2, m=2), and VLMOP2 (d=2, m=2). The classical formulas are
minimization problems; outputs are negated so every problem is maximization,
then standardized per output to zero mean and unit variance over a frozen
scrambled-Sobol sample. The standardization constants and grid-verified
utility optima ship with the package as versioned JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np
import torch
from scipy.special import ndtr

from .errors import ConfigError, DimensionMismatch, OutOfDomain
from .utility import ChebyshevUtility, LinearUtility

CONSTANTS_RESOURCE = "benchmark_constants.json"
SAMPLE_POINTS = 2**14
SAMPLE_SEED = 0

# ---------------------------------------------------------------------------
# classical formulas (minimization orientation, unit-box inputs)


def _branin_scalar(x):
    """Branin on [-5, 10] x [0, 15], mapped from the unit square."""
    x1 = 15.0 * x[..., 0] - 5.0
    x2 = 15.0 * x[..., 1]
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    t = 1.0 / (8.0 * math.pi)
    return (
        (x2 - b * x1 * x1 + c * x1 - 6.0) ** 2
        + 10.0 * (1.0 - t) * np.cos(x1)
        + 10.0
    )


def _branin_raw(x):
    return _branin_scalar(x)[..., None]


_HARTMANN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HARTMANN6_P = 1e-4 * np.array(
    [
        [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
        [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
        [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
        [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
    ]
)


def _hartmann6_raw(x):
    diff = x[..., None, :] - _HARTMANN6_P
    inner = (_HARTMANN6_A * diff * diff).sum(-1)
    val = -(np.exp(-inner) * _HARTMANN6_ALPHA).sum(-1)
    return val[..., None]


def _currin_scalar(x):
    """Currin exponential; the x2 = 0 boundary takes the limit value 1."""
    x1 = x[..., 0]
    x2 = x[..., 1]
    safe = np.where(x2 > 0.0, x2, 1.0)
    factor = np.where(x2 > 0.0, 1.0 - np.exp(-1.0 / (2.0 * safe)), 1.0)
    num = 2300.0 * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0
    den = 100.0 * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    return factor * num / den


def _branincurrin_raw(x):
    return np.stack([_branin_scalar(x), _currin_scalar(x)], axis=-1)


def _vlmop2_raw(x):
    """VLMOP2 on [-2, 2]^2 mapped from the unit square."""
    t = 4.0 * x - 2.0
    n = t.shape[-1]
    shift = 1.0 / math.sqrt(n)
    f1 = 1.0 - np.exp(-((t - shift) ** 2).sum(-1))
    f2 = 1.0 - np.exp(-((t + shift) ** 2).sum(-1))
    return np.stack([f1, f2], axis=-1)


_REGISTRY: dict[str, tuple[int, int, Callable]] = {
    "branin": (2, 1, _branin_raw),
    "hartmann6": (6, 1, _hartmann6_raw),
    "branincurrin": (2, 2, _branincurrin_raw),
    "vlmop2": (2, 2, _vlmop2_raw),
}


def benchmark_names():
    return sorted(_REGISTRY)


# ---------------------------------------------------------------------------
# standardization constants


def standardization_sample(d):
    """The frozen sample the shipped constants were derived from."""
    eng = torch.quasirandom.SobolEngine(d, scramble=True, seed=SAMPLE_SEED)
    return eng.draw(SAMPLE_POINTS, dtype=torch.float64).numpy()


def derive_standardization(name):
    """Recompute (mean, std) of the negated outputs on the frozen sample."""
    d, _, f_raw = _REGISTRY[name]
    g = -f_raw(standardization_sample(d))
    return g.mean(axis=0), g.std(axis=0)


@dataclass(frozen=True)
class Benchmark:
    """A standardized maximization objective with frozen normalization data.

    f_raw is the classical minimization formula; mean/std standardize the
    negated outputs; optima maps a utility kind ("linear", "chebyshev") to
    the argmax and value of the equal-weight utility of that kind.
    """

    name: str
    d: int
    m: int
    f_raw: Callable
    mean: np.ndarray
    std: np.ndarray
    optima: dict

    def canonical_utility(self, kind):
        if kind == "chebyshev":
            return ChebyshevUtility.unit(self.m)
        return LinearUtility.equal(self.m)


@lru_cache(maxsize=None)
def _load_constants():
    path = resources.files("eabo").joinpath("data", CONSTANTS_RESOURCE)
    return json.loads(path.read_text())


@lru_cache(maxsize=None)
def get_benchmark(name):
    """Benchmark by name; unknown names raise ConfigError."""
    if name not in _REGISTRY:
        known = ", ".join(benchmark_names())
        raise ConfigError(f"unknown benchmark {name!r} (known: {known})", field="benchmark")
    d, m, f_raw = _REGISTRY[name]
    doc = _load_constants()["benchmarks"][name]
    return Benchmark(
        name=name,
        d=d,
        m=m,
        f_raw=f_raw,
        mean=np.asarray(doc["mean"], dtype=float),
        std=np.asarray(doc["std"], dtype=float),
        optima=doc["optima"],
    )


def _check_domain(benchmark, x, name="x"):
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != benchmark.d:
        raise DimensionMismatch(
            f"{name} has dimension {arr.shape[-1]}, benchmark {benchmark.name} expects {benchmark.d}"
        )
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise OutOfDomain(f"{name} must lie inside the unit box")
    return arr


def evaluate_truth(benchmark, x):
    """Standardized maximization-oriented outputs at x, shape (..., m)."""
    arr = _check_domain(benchmark, x)
    g = -benchmark.f_raw(arr)
    return (g - benchmark.mean) / benchmark.std


# ---------------------------------------------------------------------------
# simulated oracles


@dataclass(frozen=True)
class SimulatedOracle:
    """Noisy responses for a benchmark, reproducible per (oracle seed, call seed)."""

    benchmark: Benchmark
    utility: object
    noise_eval: float = 0.1
    noise_comp: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.noise_eval < 0.0 or self.noise_comp < 0.0:
            raise ValueError("noise levels must be nonnegative")
        if self.utility.n_outputs != self.benchmark.m:
            raise DimensionMismatch(
                f"utility expects {self.utility.n_outputs} outputs, benchmark has {self.benchmark.m}"
            )


def _call_rng(oracle, seed, tag):
    return np.random.default_rng(
        np.random.SeedSequence([int(oracle.seed), int(seed), tag])
    )


def noisy_evaluation(oracle, x, seed):
    """Truth plus independent per-output Gaussian noise, shape (m,)."""
    truth = evaluate_truth(oracle.benchmark, x)
    rng = _call_rng(oracle, seed, 0)
    return truth + oracle.noise_eval * rng.standard_normal(oracle.benchmark.m)


def true_utility(benchmark, utility, x):
    """U of the noiseless standardized outputs at x."""
    return float(utility.value(torch.as_tensor(evaluate_truth(benchmark, x))))


def comparison_probability(oracle, x_a, x_b):
    """p(d=1), the probit probability that x_a beats x_b."""
    gap = true_utility(oracle.benchmark, oracle.utility, x_a) - true_utility(
        oracle.benchmark, oracle.utility, x_b
    )
    if oracle.noise_comp == 0.0:
        return 1.0 if gap > 0.0 else (0.0 if gap < 0.0 else 0.5)
    return float(ndtr(gap / (math.sqrt(2.0) * oracle.noise_comp)))


def expert_response(oracle, x_a, x_b, seed):
    """Bernoulli draw of the expert preferring x_a, from noiseless truth."""
    p = comparison_probability(oracle, x_a, x_b)
    rng = _call_rng(oracle, seed, 1)
    return 1 if rng.uniform() < p else 0


# ---------------------------------------------------------------------------
# normalization


def _require_equal_weights(utility):
    w = utility.weights
    if not bool(torch.all(torch.isclose(w, w[0], rtol=1e-9, atol=0.0))):
        raise ValueError(
            "normalization constants cover equal-weight utilities only"
        )


def normalized_utility(benchmark, utility, x_hat):
    """U(f(x_hat)) / U(f(x*)) against the stored utility-kind optimum.

    The ratio is invariant to positive rescaling of equal weights, so any
    uniform weight vector is accepted; the stored argmax only matches
    equal-weight utilities, and anything else is rejected.
    """
    if utility.n_outputs != benchmark.m:
        raise DimensionMismatch(
            f"utility expects {utility.n_outputs} outputs, benchmark has {benchmark.m}"
        )
    _require_equal_weights(utility)
    kind = "chebyshev" if isinstance(utility, ChebyshevUtility) else "linear"
    x_star = np.asarray(benchmark.optima[kind]["x"], dtype=float)
    return true_utility(benchmark, utility, x_hat) / true_utility(
        benchmark, utility, x_star
    )
