"""Discrete DDPM noise schedules.

Conventions: data is ``x_0``; betas are indexed ``t = 1..T``; ``alpha_bar(0) == 1``.
Arrays inside :class:`NoiseSchedule` are zero-based, so ``betas[t - 1]`` is beta_t
while ``alpha_bars[t]`` is alpha_bar_t (it carries the extra t = 0 entry).
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np


class VarianceParam(str, enum.Enum):
    """Reverse-process variance parametrization."""

    BETA = "beta"  # sigma_t^2 = beta_t
    TILDE_BETA = "tilde_beta"  # sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Immutable noise schedule with every derived scalar precomputed.

    ``alpha_bars`` is the direct running product (so each entry is one rounded
    multiplication away from its predecessor). ``log_alpha_bars`` holds the
    prefix sums of ``ln alpha`` accumulated in extended precision; ratios of
    cumulative products (the Gamma factors of the merged reverse kernel) are
    always taken from these to stay underflow-safe.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    log_alphas: np.ndarray
    alpha_bars: np.ndarray
    log_alpha_bars: np.ndarray
    one_minus_alpha_bars: np.ndarray
    variance_param: VarianceParam = VarianceParam.BETA

    def check_t(self, t: int, lo: int = 1) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t:
            raise TypeError(f"timestep must be an integer, got {t!r}")
        t = int(t)
        if not lo <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_t(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_t(t, lo=0)])

    def tilde_sigma(self, t: int) -> float:
        """Std of ``x_t / sqrt(abar_t)`` around ``x_0``: sqrt((1 - abar_t) / abar_t)."""
        t = self.check_t(t)
        return float(np.sqrt(self.one_minus_alpha_bars[t] / self.alpha_bars[t]))

    def reverse_sigma2(self, t: int, variance_param: VarianceParam | None = None) -> float:
        return float(self.reverse_sigma2_array(variance_param)[self.check_t(t)])

    def reverse_sigma2_array(self, variance_param: VarianceParam | None = None) -> np.ndarray:
        """sigma_t^2 for t = 0..T (entry 0 is a zero placeholder)."""
        vp = VarianceParam(variance_param or self.variance_param)
        out = np.zeros(self.T + 1)
        if vp is VarianceParam.BETA:
            out[1:] = self.betas
        else:
            out[1:] = self.one_minus_alpha_bars[:-1] / self.one_minus_alpha_bars[1:] * self.betas
        return out

    def with_variance_param(self, variance_param: VarianceParam) -> "NoiseSchedule":
        return NoiseSchedule(
            T=self.T,
            betas=self.betas,
            alphas=self.alphas,
            log_alphas=self.log_alphas,
            alpha_bars=self.alpha_bars,
            log_alpha_bars=self.log_alpha_bars,
            one_minus_alpha_bars=self.one_minus_alpha_bars,
            variance_param=VarianceParam(variance_param),
        )

    def to_csv(self) -> str:
        """CSV dump: ``t,beta,alpha,alpha_bar,tilde_sigma,reverse_sigma2``, t = 1..T."""
        buf = io.StringIO()
        buf.write("t,beta,alpha,alpha_bar,tilde_sigma,reverse_sigma2\n")
        sig2 = self.reverse_sigma2_array()
        for t in range(1, self.T + 1):
            row = (
                self.betas[t - 1],
                self.alphas[t - 1],
                self.alpha_bars[t],
                self.tilde_sigma(t),
                sig2[t],
            )
            buf.write(f"{t}," + ",".join(format_float(v) for v in row) + "\n")
        return buf.getvalue()


def format_float(v: float) -> str:
    """Shortest repr that round-trips the double exactly (at most 17 significant digits)."""
    return repr(float(v))


def schedule_from_betas(
    betas,
    variance_param: VarianceParam | str = VarianceParam.BETA,
    *,
    allow_unit_beta: bool = False,
) -> NoiseSchedule:
    """Build a schedule from an explicit beta sequence (beta_1..beta_T).

    ``allow_unit_beta`` admits a final beta of exactly 1 (abar_T = 0), which is
    only meaningful for synthetic checks.
    """
    betas = np.asarray(betas, dtype=np.float64).ravel()
    if betas.size == 0:
        raise ValueError("schedule needs at least one step")
    upper_ok = betas <= 1.0 if allow_unit_beta else betas < 1.0
    if not (np.all(betas > 0.0) and np.all(upper_ok)):
        raise ValueError("betas must lie in (0, 1)")
    if allow_unit_beta and np.any(betas[:-1] >= 1.0):
        raise ValueError("only the final beta may equal 1")
    alphas = 1.0 - betas
    with np.errstate(divide="ignore"):
        log_alphas = np.log1p(-betas)
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    log_ab = np.concatenate([[0.0], np.cumsum(log_alphas.astype(np.longdouble))]).astype(np.float64)
    # 1 - abar via expm1 keeps full relative precision when abar is close to 1
    one_minus = -np.expm1(log_ab)
    return NoiseSchedule(
        T=int(betas.size),
        betas=_frozen(betas),
        alphas=_frozen(alphas),
        log_alphas=_frozen(log_alphas),
        alpha_bars=_frozen(alpha_bars),
        log_alpha_bars=_frozen(log_ab),
        one_minus_alpha_bars=_frozen(one_minus),
        variance_param=VarianceParam(variance_param),
    )


def build_linear_schedule(
    T: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
    variance_param: VarianceParam | str = VarianceParam.BETA,
) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` (t = 1) to ``beta_end`` (t = T)."""
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ValueError("betas must lie in (0, 1)")
    if beta_start > beta_end:
        raise ValueError("beta_start must not exceed beta_end")
    T = int(T)
    if T == 1:
        betas = np.array([beta_start])
    else:
        betas = beta_start + np.arange(T) / (T - 1) * (beta_end - beta_start)
        betas[-1] = beta_end
    return schedule_from_betas(betas, variance_param)
