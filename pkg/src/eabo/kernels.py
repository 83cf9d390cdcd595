"""ARD squared-exponential kernels per output and Gamma hyperpriors.

Outputs are modeled as independent GPs that share nothing but inducing
locations, so every kernel quantity here is indexed by a single output j.
Hyperparameters live on the log scale so optimizers work unconstrained;
exponentiation keeps the constrained values strictly positive.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch

from .errors import DimensionMismatch

torch.set_default_dtype(torch.float64)


@dataclass
class KernelHyperparams:
    """Log-scale ARD hyperparameters for m outputs over d inputs.

    log_lengthscales: (m, d) tensor, log of lengthscales in unit-box units.
    log_outputscales: (m,) tensor, log of output variances sigma_j^2.
    """

    log_lengthscales: torch.Tensor
    log_outputscales: torch.Tensor

    def __post_init__(self):
        if self.log_lengthscales.ndim != 2:
            raise DimensionMismatch(
                f"log_lengthscales must be (m, d), got {tuple(self.log_lengthscales.shape)}"
            )
        if self.log_outputscales.ndim != 1:
            raise DimensionMismatch(
                f"log_outputscales must be (m,), got {tuple(self.log_outputscales.shape)}"
            )
        if self.log_lengthscales.shape[0] != self.log_outputscales.shape[0]:
            raise DimensionMismatch(
                "output count mismatch between lengthscales and outputscales"
            )

    @property
    def n_outputs(self):
        return self.log_lengthscales.shape[0]

    @property
    def n_inputs(self):
        return self.log_lengthscales.shape[1]

    @staticmethod
    def default(n_outputs, n_inputs):
        """Unit lengthscales and unit output variances (all logs zero)."""
        return KernelHyperparams(
            log_lengthscales=torch.zeros(n_outputs, n_inputs),
            log_outputscales=torch.zeros(n_outputs),
        )


@dataclass(frozen=True)
class GammaPrior:
    """Gamma distribution in shape/rate form for positive hyperparameters."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("Gamma shape and rate must both be positive")

    def log_pdf(self, value):
        """Log density at ``value`` (tensor of positive entries)."""
        return (
            self.shape * math.log(self.rate)
            + (self.shape - 1.0) * torch.log(value)
            - self.rate * value
            - math.lgamma(self.shape)
        )


@dataclass(frozen=True)
class HyperPriors:
    """Gamma priors per hyperparameter group.

    Defaults concentrate lengthscales in roughly (0.1, 1) for unit-box
    inputs and weakly regularize output and noise scales.
    """

    lengthscale: GammaPrior = GammaPrior(shape=3.0, rate=6.0)
    outputscale: GammaPrior = GammaPrior(shape=2.0, rate=0.15)
    noise: GammaPrior = GammaPrior(shape=1.1, rate=0.05)


def kernel_matrix(params, j, X1, X2=None):
    """Covariance matrix of output j between point sets X1 and X2.

    Entries are sigma_j^2 exp(-1/2 sum_p (x_p - x'_p)^2 / l_{j,p}^2).
    X1, X2 may carry leading batch dimensions; the trailing shape must be
    (n, d). Returns (..., n1, n2), symmetric PSD when X2 is X1.
    """
    if X2 is None:
        X2 = X1
    d = params.n_inputs
    if X1.shape[-1] != d or X2.shape[-1] != d:
        raise DimensionMismatch(
            f"points have input dim {X1.shape[-1]}/{X2.shape[-1]}, kernel expects {d}"
        )
    if not 0 <= j < params.n_outputs:
        raise DimensionMismatch(f"output index {j} out of range for m={params.n_outputs}")
    _warn_outside_box(X1)
    _warn_outside_box(X2)
    ls = torch.exp(params.log_lengthscales[j])
    var = torch.exp(params.log_outputscales[j])
    a = X1 / ls
    b = X2 / ls
    diff = a.unsqueeze(-2) - b.unsqueeze(-3)
    sq = (diff * diff).sum(-1)
    return var * torch.exp(-0.5 * sq)


def kernel_diag(params, j, X):
    """Diagonal of kernel_matrix(params, j, X, X): constant sigma_j^2."""
    var = torch.exp(params.log_outputscales[j])
    return var.expand(X.shape[:-1]).clone()


def _warn_outside_box(X):
    with torch.no_grad():
        if torch.any(X < -1e-9) or torch.any(X > 1.0 + 1e-9):
            warnings.warn("kernel evaluated outside the unit box", stacklevel=3)


def log_hyperprior(params, log_noise_eval, log_noise_comp, priors=HyperPriors()):
    """MAP regularizer: summed Gamma log densities of all positive scales.

    Lengthscale priors act on the lengthscales, output-scale priors on the
    variances sigma_j^2, and noise priors on the noise standard deviations.
    Finite for any finite log-parameters.
    """
    total = priors.lengthscale.log_pdf(torch.exp(params.log_lengthscales)).sum()
    total = total + priors.outputscale.log_pdf(torch.exp(params.log_outputscales)).sum()
    total = total + priors.noise.log_pdf(torch.exp(log_noise_eval)).sum()
    total = total + priors.noise.log_pdf(torch.exp(log_noise_comp)).sum()
    return total
