"""Conditional reverse sampling: full, accelerated, accelerated + DDIM, diffused start.

Every sampler runs a batch of independent chains at once (leading axis of the
state); NFE counters count evaluations per chain.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .schedule import NoiseSchedule, VarianceParam


class Mode(str, enum.Enum):
    FULL = "full"
    ACCELERATED = "accelerated"
    ACCELERATED_DDIM = "accelerated_ddim"
    DIFFUSED_START_BASELINE = "diffused_start"


@dataclass(frozen=True)
class SamplerConfig:
    T: int = 1000
    tau: int = 0
    mode: Mode = Mode.FULL
    stride: int = 1
    eta: float = 0.0
    variance_param: VarianceParam = VarianceParam.BETA
    seed: int = 0
    num_samples: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "variance_param", VarianceParam(self.variance_param))
        if self.T < 1:
            raise ValueError("T must be positive")
        if not 0 <= self.tau <= self.T:
            raise ValueError(f"tau must lie in [0, T], got {self.tau}")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")


@dataclass
class SampleTrace:
    states: list = field(default_factory=list)  # (t, x_t, nfe_denoiser, nfe_fuser)
    nfe_denoiser: int = 0
    nfe_restorer: int = 0
    nfe_fuser: int = 0
    x0_final: np.ndarray | None = None
    restorer_cache: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def nfe_total(self) -> int:
        """Denoise/fuse steps plus the single restorer evaluation."""
        return self.nfe_denoiser + self.nfe_restorer

    @property
    def nfe_steps(self) -> int:
        """Per-step network passes, the N of the TFLOP formula."""
        return self.nfe_denoiser

    def record(self, t: int, x, keep: bool):
        if keep:
            self.states.append((int(t), np.array(x, copy=True), self.nfe_denoiser, self.nfe_fuser))


class _Run:
    """State shared by the sampler variants for one batch of chains."""

    def __init__(self, stack, y, config: SamplerConfig, s: NoiseSchedule, rng, record: bool):
        if s.T != config.T:
            raise ValueError(f"schedule has T={s.T} but config asks for T={config.T}")
        self.stack = stack
        self.s = s.with_variance_param(config.variance_param)
        self.config = config
        self.y = np.asarray(y, dtype=np.float64)
        self.rng = rng
        self.keep = record
        self.trace = SampleTrace()
        self.x_ir = np.asarray(stack.restore(self.y))
        self.trace.nfe_restorer += 1
        self.trace.restorer_cache = self.x_ir.copy()
        self.shape = (config.num_samples,) + self.x_ir.shape[-1:]
        self.sig2 = self.s.reverse_sigma2_array()

    def normal(self):
        return self.rng.standard_normal(self.shape)

    def x0_hat(self, xt, t: int):
        self.trace.nfe_denoiser += 1
        self.trace.nfe_fuser += 1
        return self.stack.estimate_x0(self.x_ir, self.y, xt, t)

    def ancestral(self, x, t_start: int):
        """Fused posterior steps t_start..1; the final step returns its mean."""
        for t in range(t_start, 0, -1):
            x0 = self.x0_hat(x, t)
            noise = self.normal() if t > 1 else None
            x = kernels.posterior_step(self.s, x, x0, t, noise)
            self.trace.record(t - 1, x, self.keep)
        return x

    def jump(self, x_T, target: int):
        """Single merged step T -> target with x0 fixed to the restorer output."""
        c = kernels.merged_coeffs(self.s, self.s.T, self.s.T - target)
        x = c.c_x0 * self.x_ir + c.c_xt * x_T + math.sqrt(c.var) * self.normal()
        self.trace.record(target, x, self.keep)
        return x

    def finish(self, x):
        self.trace.x0_final = x
        return self.trace


def _start(run: _Run):
    x_T = run.normal()
    run.trace.record(run.s.T, x_T, run.keep)
    return x_T


def sample_full(stack, y, config: SamplerConfig, s: NoiseSchedule, rng=None, record: bool = False) -> SampleTrace:
    run = _Run(stack, y, config, s, _rng(config, rng), record)
    x = _start(run)
    return run.finish(run.ancestral(x, run.s.T))


def sample_accelerated(stack, y, config: SamplerConfig, s: NoiseSchedule, rng=None, record: bool = False) -> SampleTrace:
    run = _Run(stack, y, config, s, _rng(config, rng), record)
    x = _start(run)
    if config.tau == run.s.T:
        run.trace.flags.append("tau_equals_T_no_jump")
    else:
        x = run.jump(x, config.tau)
    return run.finish(run.ancestral(x, config.tau))


def ddim_grid(tau: int, stride: int) -> list[int]:
    """Visited timesteps tau, tau - stride, ..., ending at 0 (last segment may be shorter)."""
    grid = list(range(tau, 0, -stride))
    grid.append(0)
    return grid


def sample_accelerated_ddim(stack, y, config: SamplerConfig, s: NoiseSchedule, rng=None, record: bool = False) -> SampleTrace:
    if config.tau > 0 and config.stride > config.tau:
        raise ValueError(f"stride {config.stride} exceeds tau {config.tau}")
    run = _Run(stack, y, config, s, _rng(config, rng), record)
    x = _start(run)
    if config.tau == run.s.T:
        run.trace.flags.append("tau_equals_T_no_jump")
    else:
        x = run.jump(x, config.tau)
    grid = ddim_grid(config.tau, config.stride)
    if config.tau % config.stride:
        run.trace.flags.append("ddim_last_segment_shortened")
    for t, t_next in zip(grid[:-1], grid[1:]):
        x0 = run.x0_hat(x, t)
        noise = run.normal() if config.eta > 0 and t_next > 0 else None
        x = kernels.ddim_step(run.s, x, x0, t, t_next, config.eta, noise)
        run.trace.record(t_next, x, run.keep)
    return run.finish(x)


def sample_diffused_start(stack, y, config: SamplerConfig, s: NoiseSchedule, rng=None, record: bool = False) -> SampleTrace:
    """Baseline: forward-diffuse the restorer output to level tau, then run tau fused steps."""
    run = _Run(stack, y, config, s, _rng(config, rng), record)
    tau = config.tau
    ab = run.s.alpha_bars[tau]
    x = math.sqrt(ab) * run.x_ir + math.sqrt(run.s.one_minus_alpha_bars[tau]) * run.normal()
    run.trace.record(tau, x, run.keep)
    return run.finish(run.ancestral(x, tau))


SAMPLERS = {
    Mode.FULL: sample_full,
    Mode.ACCELERATED: sample_accelerated,
    Mode.ACCELERATED_DDIM: sample_accelerated_ddim,
    Mode.DIFFUSED_START_BASELINE: sample_diffused_start,
}


def run_sampler(stack, y, config: SamplerConfig, s: NoiseSchedule, rng=None, record: bool = False) -> SampleTrace:
    return SAMPLERS[config.mode](stack, y, config, s, rng=rng, record=record)


def expected_nfe(config: SamplerConfig) -> int:
    if config.mode is Mode.FULL:
        return config.T + 1
    if config.mode is Mode.ACCELERATED_DDIM:
        return len(ddim_grid(config.tau, config.stride)) - 1 + 1
    return config.tau + 1


def _rng(config: SamplerConfig, rng):
    if rng is not None:
        return rng
    from .oracle import rng_stream

    return rng_stream(config.seed, 0)


# -- start-point moments ----------------------------------------------------

def proposed_start_moments(s: NoiseSchedule, tau: int, xT_mean_coeff: float = 0.0, xT_var: float = 1.0):
    """x_tau = a * x_IR + noise with variance v when x_T ~ N(xT_mean_coeff * x_IR, xT_var I).

    Returns ``(a, v)``.
    """
    c = kernels.merged_coeffs(s, s.T, s.T - tau)
    return c.c_x0 + c.c_xt * xT_mean_coeff, c.c_xt**2 * xT_var + c.var


def diffused_start_moments(s: NoiseSchedule, tau: int):
    return math.sqrt(s.alpha_bars[tau]), float(s.one_minus_alpha_bars[tau])


# -- experiments -------------------------------------------------------------

@dataclass
class SweepRow:
    tau: int
    mse: float
    nfe: int
    mse_stderr: float


def _mse_runs(stack, world, config, s, x0s, ys, stream_id):
    """Mean per-coordinate squared error over every (pair, sample) chain."""
    from .oracle import rng_stream

    k, n = x0s.shape
    reps = config.num_samples
    y_rep = np.repeat(ys, reps, axis=0)
    x0_rep = np.repeat(x0s, reps, axis=0)
    cfg = _replace(config, num_samples=k * reps)
    rng = rng_stream(config.seed, stream_id)
    trace = run_sampler(stack, y_rep, cfg, s, rng=rng)
    err = np.mean((trace.x0_final - x0_rep) ** 2, axis=-1)
    return float(err.mean()), float(err.std(ddof=1) / math.sqrt(err.size)) if err.size > 1 else 0.0, trace


def _replace(config: SamplerConfig, **kw) -> SamplerConfig:
    d = dict(config.__dict__)
    d.update(kw)
    return SamplerConfig(**d)


def sweep_tau(stack, world, x0s, ys, tau_list, config: SamplerConfig, s: NoiseSchedule) -> list[SweepRow]:
    """Average MSE and NFE per activation step; chains share random streams across tau."""
    if len(tau_list) == 0:
        raise ValueError("tau_list must not be empty")
    rows = []
    for tau in tau_list:
        cfg = _replace(config, tau=int(tau))
        mse, se, trace = _mse_runs(stack, world, cfg, s, x0s, ys, stream_id=1)
        rows.append(SweepRow(int(tau), mse, trace.nfe_total, se))
    return rows


@dataclass
class StartComparison:
    tau: int
    mse_proposed: float
    mse_baseline: float
    mean_paired_diff: float
    paired_diff_stderr: float
    nfe: int


def compare_starts(stack, world, x0s, ys, config: SamplerConfig, s: NoiseSchedule) -> StartComparison:
    """Seed-matched runs of the merged-jump start and the forward-diffused start."""
    a_cfg = _replace(config, mode=Mode.ACCELERATED)
    b_cfg = _replace(config, mode=Mode.DIFFUSED_START_BASELINE)
    _, _, ta = _mse_runs(stack, world, a_cfg, s, x0s, ys, stream_id=2)
    _, _, tb = _mse_runs(stack, world, b_cfg, s, x0s, ys, stream_id=2)
    x0_rep = np.repeat(x0s, config.num_samples, axis=0)
    ea = np.mean((ta.x0_final - x0_rep) ** 2, axis=-1)
    eb = np.mean((tb.x0_final - x0_rep) ** 2, axis=-1)
    d = ea - eb
    se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
    return StartComparison(config.tau, float(ea.mean()), float(eb.mean()), float(d.mean()), se, ta.nfe_total)
