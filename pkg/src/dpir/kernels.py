"""Forward, reverse, merged multi-step and DDIM transition kernels.

All kernels are isotropic Gaussians. Vectors may carry leading batch
dimensions; every operation acts on the last axis only.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule, VarianceParam, format_float


@dataclass(frozen=True)
class MergedTransitionCoeffs:
    """``x_{t-k} ~ N(c_x0 * x0 + c_xt * x_t, var * I)`` for a fixed x0 estimate."""

    t: int
    k: int
    c_x0: float
    c_xt: float
    var: float

    def mean(self, xt, x0):
        return self.c_x0 * np.asarray(x0) + self.c_xt * np.asarray(xt)


@dataclass(frozen=True)
class GaussianStep:
    mean: np.ndarray
    stddev: float


def _same_shape(a, b, what: str = "vectors"):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1:] != b.shape[-1:]:
        raise ValueError(f"dimension mismatch between {what}: {a.shape} vs {b.shape}")
    return a, b


def gamma_small(s: NoiseSchedule, t: int) -> float:
    """gamma_t = sqrt(abar_{t-1}) * beta_t / (1 - abar_t), the x0 weight of one reverse step."""
    t = s.check_t(t)
    return float(np.sqrt(s.alpha_bars[t - 1]) * s.betas[t - 1] / s.one_minus_alpha_bars[t])


def _gamma_cap_vec(s: NoiseSchedule, i: np.ndarray, j: int) -> np.ndarray:
    """Gamma_i^j for an array of upper indices i and a fixed lower index j."""
    i = np.asarray(i)
    out = np.ones(i.shape)
    m = i >= j
    if np.any(m):
        im = i[m]
        with np.errstate(invalid="ignore"):
            log_prod = s.log_alpha_bars[im] - s.log_alpha_bars[j - 1]
        out[m] = np.exp(0.5 * log_prod) * s.one_minus_alpha_bars[j - 1] / s.one_minus_alpha_bars[im]
    return out


def gamma_cap(s: NoiseSchedule, i: int, j: int) -> float:
    """Gamma_i^j = sqrt(prod_{n=j..i} alpha_n) (1 - abar_{j-1}) / (1 - abar_i); 1 when i < j."""
    if int(i) != i or int(j) != j:
        raise TypeError("indices must be integers")
    i, j = int(i), int(j)
    if j < 1 or i > s.T or (i >= j and i < 1):
        raise ValueError(f"Gamma indices out of range: i={i}, j={j}, T={s.T}")
    if i < j:
        return 1.0
    return float(_gamma_cap_vec(s, np.array([i]), j)[0])


def merged_coeffs(
    s: NoiseSchedule, t: int, k: int, variance_param: VarianceParam | None = None
) -> MergedTransitionCoeffs:
    """Closed-form kernel for ``k`` consecutive reverse steps from ``t`` with fixed x0."""
    t = s.check_t(t)
    if int(k) != k or not 1 <= k <= t:
        raise ValueError(f"need 1 <= k <= t, got k={k}, t={t}")
    k = int(k)
    j = t - k + 1
    src = t - np.arange(k)  # t - i for i = 0..k-1
    caps = _gamma_cap_vec(s, src - 1, j)
    gam = np.sqrt(s.alpha_bars[src - 1]) * s.betas[src - 1] / s.one_minus_alpha_bars[src]
    sig2 = s.reverse_sigma2_array(variance_param)[src]
    c_x0 = float(np.sum(caps * gam))
    c_xt = float(_gamma_cap_vec(s, np.array([t]), j)[0])
    var = float(np.sum(caps**2 * sig2))
    return MergedTransitionCoeffs(t=t, k=k, c_x0=c_x0, c_xt=c_xt, var=var)


class MergedTable:
    """Coefficients for jumping from any source ``t > target`` straight to ``target``.

    Prefix sums over the source index make every lookup O(1) after an O(T) build.
    """

    def __init__(self, s: NoiseSchedule, target: int, variance_param: VarianceParam | None = None):
        if not 0 <= target < s.T:
            raise ValueError(f"target {target} outside [0, {s.T - 1}]")
        self.schedule = s
        self.target = int(target)
        j = self.target + 1
        src = np.arange(j, s.T + 1)
        caps = _gamma_cap_vec(s, src - 1, j)
        gam = np.sqrt(s.alpha_bars[src - 1]) * s.betas[src - 1] / s.one_minus_alpha_bars[src]
        sig2 = s.reverse_sigma2_array(variance_param)[src]
        self._c_x0 = np.cumsum(caps * gam)
        self._var = np.cumsum(caps**2 * sig2)
        self._c_xt = _gamma_cap_vec(s, src, j)

    def __call__(self, t: int) -> MergedTransitionCoeffs:
        t = self.schedule.check_t(t)
        if t <= self.target:
            raise ValueError(f"source {t} must exceed target {self.target}")
        n = t - self.target - 1
        return MergedTransitionCoeffs(
            t=t, k=t - self.target, c_x0=float(self._c_x0[n]), c_xt=float(self._c_xt[n]),
            var=float(self._var[n]),
        )


def forward_marginal(s: NoiseSchedule, x0, t: int) -> GaussianStep:
    t = s.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    return GaussianStep(
        mean=np.sqrt(s.alpha_bars[t]) * x0, stddev=float(np.sqrt(s.one_minus_alpha_bars[t]))
    )


def posterior_step(
    s: NoiseSchedule,
    xt,
    x0_hat,
    t: int,
    noise=None,
    variance_param: VarianceParam | None = None,
) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``; ``noise=None`` returns the mean."""
    t = s.check_t(t)
    xt, x0_hat = _same_shape(xt, x0_hat, "x_t and x0_hat")
    c = merged_coeffs(s, t, 1, variance_param)
    out = c.c_x0 * x0_hat + c.c_xt * xt
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape[-1:] != xt.shape[-1:]:
            raise ValueError(f"noise shape {noise.shape} does not match x_t {xt.shape}")
        out = out + np.sqrt(c.var) * noise
    return out


def score_from_x0(s: NoiseSchedule, x0_hat, xt, t: int) -> np.ndarray:
    """(sqrt(abar_t) * x0_hat - x_t) / (1 - abar_t)."""
    t = s.check_t(t)
    x0_hat, xt = _same_shape(x0_hat, xt, "x0_hat and x_t")
    return (np.sqrt(s.alpha_bars[t]) * x0_hat - xt) / s.one_minus_alpha_bars[t]


def mean_from_score(s: NoiseSchedule, xt, score, t: int) -> np.ndarray:
    """(x_t + (1 - alpha_t) * score) / sqrt(alpha_t)."""
    t = s.check_t(t)
    xt, score = _same_shape(xt, score, "x_t and score")
    return (xt + s.betas[t - 1] * score) / np.sqrt(s.alphas[t - 1])


def ddim_sigma(s: NoiseSchedule, t: int, t_next: int, eta: float) -> float:
    ab_t, ab_n = s.alpha_bars[t], s.alpha_bars[t_next]
    return float(
        eta
        * np.sqrt(s.one_minus_alpha_bars[t_next] / s.one_minus_alpha_bars[t])
        * np.sqrt(1.0 - ab_t / ab_n)
    )


def ddim_step(
    s: NoiseSchedule,
    xt,
    x0_hat,
    t: int,
    t_next: int,
    eta: float = 0.0,
    noise=None,
) -> np.ndarray:
    """Generalized DDIM update from ``t`` to ``t_next < t``; eta = 0 is deterministic."""
    t = s.check_t(t)
    t_next = s.check_t(t_next, lo=0)
    if t_next >= t:
        raise ValueError(f"t_next ({t_next}) must be smaller than t ({t})")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    xt, x0_hat = _same_shape(xt, x0_hat, "x_t and x0_hat")
    sd = ddim_sigma(s, t, t_next, eta)
    resid_var = s.one_minus_alpha_bars[t_next] - sd**2
    if resid_var < -1e-15:
        raise ValueError(f"DDIM parametrization error: negative residual variance {resid_var}")
    eps_dir = (xt - np.sqrt(s.alpha_bars[t]) * x0_hat) / np.sqrt(s.one_minus_alpha_bars[t])
    out = np.sqrt(s.alpha_bars[t_next]) * x0_hat + np.sqrt(max(resid_var, 0.0)) * eps_dir
    if eta > 0.0 and noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape[-1:] != xt.shape[-1:]:
            raise ValueError(f"noise shape {noise.shape} does not match x_t {xt.shape}")
        out = out + sd * noise
    return out


def merged_coeffs_csv(s: NoiseSchedule, pairs, variance_param: VarianceParam | None = None) -> str:
    buf = io.StringIO()
    buf.write("t,k,c_x0,c_xt,var\n")
    for t, k in pairs:
        c = merged_coeffs(s, t, k, variance_param)
        buf.write(f"{c.t},{c.k},{format_float(c.c_x0)},{format_float(c.c_xt)},{format_float(c.var)}\n")
    return buf.getvalue()
