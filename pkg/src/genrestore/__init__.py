"""Signal restoration and separation under known generative models.

MAP estimation with the noise level (and any linear transform coefficients)
eliminated by maximum likelihood, plus importance-sampled MMSE.
"""

from .errors import (AllWeightsZero, BadKernelLength, ConfigError, DegenerateFamily,
                     DimensionMismatch, GenRestoreError, MalformedFile, NonFiniteGradient,
                     NotSpd, VersionMismatch, ZeroResidual)
from .estimators import (Baseline, Mixture, NoiseModel, Problem, RestorationResult,
                         baseline_objective, baseline_separation_objective,
                         map_objective_discrete, map_objective_fixed, map_objective_joint,
                         map_objective_profiled, mmse_estimate, noise_variance_ml,
                         profile_params_sum_constrained, profile_params_unconstrained,
                         separation_objective)
from .generator import LinearGenerator, MlpGenerator, load_model, save_model
from .optim import OptimizerConfig, RestartPolicy, minimize, multi_restart, nmgd_step

__version__ = "0.1.0"
