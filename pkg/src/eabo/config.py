"""Run configuration: a versioned JSON document validated into RunConfig.

Schema (version 1):

    {
      "schema_version": 1,
      "benchmark": "branin",                                  # or "problem"
      "utility": {"type": "linear", "weights": [1.0]},        # optional
      "costs": {"c_eval": 5.0, "c_comp": 1.0, "budget": 150.0},
      "noise": {"sigma_eval": 0.1, "sigma_comp": 0.1, "pin": true},
      "policy": "ea-bo",
      "seed": 0,
      "surrogate": {"inducing_count": 30, ...},               # optional
      "acquisition": {"restarts": 16, ...}                    # optional
    }

Exactly one of "benchmark" (a named simulated objective) or
"problem": {"d": ..., "m": ...} (a live problem with no oracle, as used by
the elicitation service) must be present. utility defaults to the
equal-weight linear utility over the m outputs; surrogate/acquisition hold
optional overrides of the documented constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .acquisition import AcquisitionConfig, CostModel
from .benchmarks import get_benchmark
from .errors import ConfigError
from .surrogate import SurrogateConfig
from .utility import LinearUtility, utility_from_config, utility_to_config

SCHEMA_VERSION = 1

POLICIES = ("ea-bo", "kg-eval", "kg-comp", "rand-eval", "rand-comp")

SURROGATE_OVERRIDES = {
    "inducing_count": int,
    "quad_order": int,
    "learning_rate": float,
    "steps_cold": int,
    "steps_warm": int,
    "init_lengthscale": float,
    "init_outputscale": float,
}

ACQUISITION_OVERRIDES = {
    "restarts": int,
    "steps": int,
    "learning_rate": float,
    "clip_norm": float,
    "n_fantasy": int,
    "mc_draws": int,
    "epsilon": float,
    "raw_samples": int,
}


def _require(doc, key, kind, field_name, allow_bool=False):
    if key not in doc:
        raise ConfigError(f"missing required field {field_name!r}", field=field_name)
    value = doc[key]
    if isinstance(value, bool) and not allow_bool and kind is not bool:
        raise ConfigError(f"{field_name} must be {kind.__name__}", field=field_name)
    if kind in (int, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{field_name} must be a number", field=field_name)
        return kind(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{field_name} must be {kind.__name__}", field=field_name)
    return value


def _positive(value, field_name):
    if not value > 0.0:
        raise ConfigError(f"{field_name} must be positive", field=field_name)
    return value


def _overrides(doc, key, allowed):
    sub = doc.get(key, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"{key} must be an object", field=key)
    out = {}
    for name, value in sub.items():
        if name not in allowed:
            raise ConfigError(f"unknown {key} override {name!r}", field=f"{key}.{name}")
        kind = allowed[name]
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{key}.{name} must be a number", field=f"{key}.{name}")
        out[name] = kind(value)
    return out


@dataclass(frozen=True)
class RunConfig:
    """A fully validated experiment description.

    benchmark is None for live problems; d and m are always resolved.
    """

    benchmark: str | None
    d: int
    m: int
    utility: object
    c_eval: float
    c_comp: float
    budget: float
    sigma_eval: float
    sigma_comp: float
    pin_noise: bool
    policy: str
    seed: int
    surrogate: dict = field(default_factory=dict)
    acquisition: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(doc, require_affordable=True):
        """Validate a schema document.

        require_affordable=False drops the budget >= cheapest-action check;
        the elicitation service accepts sub-minimal budgets and finishes
        such sessions immediately with the prior recommendation.
        """
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        version = _require(doc, "schema_version", int, "schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {version}, expected {SCHEMA_VERSION}",
                field="schema_version",
            )
        if "benchmark" in doc and "problem" in doc:
            raise ConfigError(
                "give either benchmark or problem, not both", field="problem"
            )
        if "benchmark" in doc:
            name = _require(doc, "benchmark", str, "benchmark")
            bench = get_benchmark(name)
            d, m = bench.d, bench.m
        elif "problem" in doc:
            problem = _require(doc, "problem", dict, "problem")
            name = None
            d = _require(problem, "d", int, "problem.d")
            m = _require(problem, "m", int, "problem.m")
            if d < 1 or m < 1:
                raise ConfigError("problem dimensions must be >= 1", field="problem")
        else:
            raise ConfigError(
                "missing required field 'benchmark' (or 'problem')", field="benchmark"
            )

        if "utility" in doc:
            utility = utility_from_config(doc["utility"])
        else:
            utility = LinearUtility.equal(m)
        if utility.n_outputs != m:
            raise ConfigError(
                f"utility has {utility.n_outputs} weights, problem has m={m}",
                field="utility.weights",
            )

        costs = _require(doc, "costs", dict, "costs")
        c_eval = _positive(_require(costs, "c_eval", float, "costs.c_eval"), "costs.c_eval")
        c_comp = _positive(_require(costs, "c_comp", float, "costs.c_comp"), "costs.c_comp")
        budget = _positive(_require(costs, "budget", float, "costs.budget"), "costs.budget")
        if require_affordable and budget < min(c_eval, c_comp):
            raise ConfigError(
                "budget must afford at least one action", field="costs.budget"
            )

        noise = _require(doc, "noise", dict, "noise")
        sigma_eval = _require(noise, "sigma_eval", float, "noise.sigma_eval")
        sigma_comp = _require(noise, "sigma_comp", float, "noise.sigma_comp")
        if sigma_eval < 0.0 or sigma_comp < 0.0:
            raise ConfigError("noise levels must be nonnegative", field="noise")
        pin = noise.get("pin", True)
        if not isinstance(pin, bool):
            raise ConfigError("noise.pin must be a boolean", field="noise.pin")
        if pin and (sigma_eval <= 0.0 or sigma_comp <= 0.0):
            raise ConfigError("pinned noise levels must be positive", field="noise")

        policy = _require(doc, "policy", str, "policy")
        if policy not in POLICIES:
            raise ConfigError(
                f"policy must be one of {', '.join(POLICIES)}, got {policy!r}",
                field="policy",
            )
        seed = _require(doc, "seed", int, "seed")
        if seed < 0:
            raise ConfigError("seed must be nonnegative", field="seed")

        return RunConfig(
            benchmark=name,
            d=d,
            m=m,
            utility=utility,
            c_eval=c_eval,
            c_comp=c_comp,
            budget=budget,
            sigma_eval=sigma_eval,
            sigma_comp=sigma_comp,
            pin_noise=pin,
            policy=policy,
            seed=seed,
            surrogate=_overrides(doc, "surrogate", SURROGATE_OVERRIDES),
            acquisition=_overrides(doc, "acquisition", ACQUISITION_OVERRIDES),
        )

    @staticmethod
    def from_json(text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return RunConfig.from_dict(doc)

    def to_dict(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "utility": utility_to_config(self.utility),
            "costs": {"c_eval": self.c_eval, "c_comp": self.c_comp, "budget": self.budget},
            "noise": {
                "sigma_eval": self.sigma_eval,
                "sigma_comp": self.sigma_comp,
                "pin": self.pin_noise,
            },
            "policy": self.policy,
            "seed": self.seed,
        }
        if self.benchmark is not None:
            doc["benchmark"] = self.benchmark
        else:
            doc["problem"] = {"d": self.d, "m": self.m}
        if self.surrogate:
            doc["surrogate"] = dict(self.surrogate)
        if self.acquisition:
            doc["acquisition"] = dict(self.acquisition)
        return doc

    def replace(self, **changes):
        """A copy with validated changes applied through the schema."""
        doc = self.to_dict()
        for key, value in changes.items():
            doc[key] = value
        return RunConfig.from_dict(doc)

    def cost_model(self):
        return CostModel(c_eval=self.c_eval, c_comp=self.c_comp, budget=self.budget)

    def surrogate_config(self):
        kwargs = dict(self.surrogate)
        if self.pin_noise:
            kwargs.setdefault("pin_noise_eval", self.sigma_eval)
            kwargs.setdefault("pin_noise_comp", self.sigma_comp)
        else:
            kwargs.setdefault("init_noise", max(self.sigma_eval, 1e-3))
        return SurrogateConfig(n_outputs=self.m, n_inputs=self.d, **kwargs)

    def acquisition_config(self):
        return AcquisitionConfig(**self.acquisition)
