"""Expert-augmented Bayesian optimization with a mixed-likelihood surrogate.

The package fuses noisy vector-valued evaluations and noisy pairwise expert
comparisons into one sparse variational GP and spends a shared budget by
cost-normalized value of information.
"""

import torch

# all numerics run in double precision on CPU; single-threaded BLAS keeps
# results reproducible across machines
torch.set_default_dtype(torch.float64)
torch.set_num_threads(1)

__version__ = "0.1.0"
