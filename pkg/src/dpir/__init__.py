"""Modular conditional diffusion sampling with an analytic linear-Gaussian testbed."""

from .costmodel import CostModel, total_cost
from .estimators import EstimatorStack, FusionWeightPolicy, build_stack
from .kernels import (
    MergedTable,
    MergedTransitionCoeffs,
    ddim_step,
    forward_marginal,
    gamma_cap,
    gamma_small,
    mean_from_score,
    merged_coeffs,
    posterior_step,
    score_from_x0,
)
from .metrics import MetricReport, evaluate
from .oracle import GaussianDist, LinearGaussianWorld, make_world
from .sampler import Mode, SampleTrace, SamplerConfig, run_sampler
from .schedule import NoiseSchedule, VarianceParam, build_linear_schedule, schedule_from_betas

__version__ = "0.1.0"
