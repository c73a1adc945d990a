"""Denoiser / restorer / fuser contracts with analytic implementations.

The three pieces estimate, respectively, E[x0 | x_t], E[x0 | y] and
E[x0 | y, x_t]. Every implementation here is affine in its input, which is
what the closed-form fusion weight relies on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as la

from .oracle import LinearGaussianWorld, cond_x0_given_y, cond_x0_given_y_xt
from .schedule import NoiseSchedule


def _check_len(v: np.ndarray, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != n:
        raise ValueError(f"{what} has length {v.shape[-1]}, expected {n}")
    return v


# -- denoisers ---------------------------------------------------------------

class IdentityDenoiser:
    name = "identity"

    def __call__(self, x_tilde, sigma_tilde: float) -> np.ndarray:
        if sigma_tilde < 0:
            raise ValueError("sigma_tilde must be nonnegative")
        return np.asarray(x_tilde, dtype=np.float64)

    def affine(self, n: int, sigma_tilde: float):
        return np.eye(n), np.zeros(n)


class GaussianDenoiser:
    """Exact E[x0 | x~] for x~ = x0 + sigma~ * eps under the world prior."""

    name = "gaussian"

    def __init__(self, world: LinearGaussianWorld):
        self.world = world
        self._gain = lru_cache(maxsize=4096)(self._gain_uncached)

    def _gain_uncached(self, sigma_tilde: float) -> np.ndarray:
        S0 = self.world.Sigma0
        if sigma_tilde == 0.0:
            return np.eye(self.world.N)
        # Sigma0 (Sigma0 + s^2 I)^{-1}; symmetric system, so solve from the right via transpose
        return la.solve(S0 + sigma_tilde**2 * np.eye(self.world.N), S0, assume_a="pos").T

    def __call__(self, x_tilde, sigma_tilde: float) -> np.ndarray:
        if sigma_tilde < 0:
            raise ValueError("sigma_tilde must be nonnegative")
        x_tilde = _check_len(x_tilde, self.world.N, "x_tilde")
        if sigma_tilde == 0.0:
            return x_tilde.copy()
        if math.isinf(sigma_tilde):
            return np.broadcast_to(self.world.mu0, x_tilde.shape).copy()
        D = self._gain(float(sigma_tilde))
        mu = self.world.mu0
        return mu + (x_tilde - mu) @ D.T

    def affine(self, n: int, sigma_tilde: float):
        if math.isinf(sigma_tilde):
            return np.zeros((n, n)), self.world.mu0.copy()
        D = self._gain(float(sigma_tilde))
        return D, self.world.mu0 - D @ self.world.mu0


# -- restorers ---------------------------------------------------------------

class BackprojectionRestorer:
    name = "backprojection"

    def __init__(self, world: LinearGaussianWorld):
        self.world = world

    def __call__(self, y) -> np.ndarray:
        y = _check_len(y, self.world.M, "y")
        return y @ self.world.A

    def affine(self):
        return self.world.A.T.copy(), np.zeros(self.world.N)


class MMSERestorer:
    """Exact posterior mean E[x0 | y]."""

    name = "mmse"

    def __init__(self, world: LinearGaussianWorld):
        self.world = world

    def __call__(self, y) -> np.ndarray:
        y = _check_len(y, self.world.M, "y")
        return cond_x0_given_y(self.world, y).mean

    def affine(self):
        w = self.world
        S = w.A @ w.Sigma0 @ w.A.T + w.sigma_y**2 * np.eye(w.M)
        R = la.solve(S, w.A @ w.Sigma0, assume_a="pos").T
        return R, w.mu0 - R @ (w.A @ w.mu0)


# -- fusion ------------------------------------------------------------------

class WeightKind(str, enum.Enum):
    CONSTANT = "constant"
    LOGISTIC = "logistic"
    ORACLE_OPTIMAL = "oracle_optimal"


@dataclass(frozen=True)
class FusionWeightPolicy:
    """Time-dependent scalar weight w(t) in [0, 1] placed on the restorer output."""

    kind: WeightKind
    value: float = 0.5
    midpoint: float = 250.0
    slope: float = 50.0
    optimal: object = None  # callable t -> w for ORACLE_OPTIMAL

    @classmethod
    def constant(cls, w: float) -> "FusionWeightPolicy":
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"constant weight must lie in [0, 1], got {w}")
        return cls(WeightKind.CONSTANT, value=float(w))

    @classmethod
    def logistic(cls, midpoint: float, slope: float | None = None) -> "FusionWeightPolicy":
        slope = midpoint / 5.0 if slope is None else slope
        if slope <= 0:
            raise ValueError("logistic slope must be positive")
        return cls(WeightKind.LOGISTIC, midpoint=float(midpoint), slope=float(slope))

    @classmethod
    def oracle_optimal(cls, world, schedule, denoiser, restorer) -> "FusionWeightPolicy":
        fn = lru_cache(maxsize=None)(
            lambda t: optimal_fusion_weight(world, schedule.tilde_sigma(t), denoiser, restorer)
        )
        return cls(WeightKind.ORACLE_OPTIMAL, optimal=fn)

    def __call__(self, t: int) -> float:
        if self.kind is WeightKind.CONSTANT:
            return self.value
        if self.kind is WeightKind.LOGISTIC:
            z = (t - self.midpoint) / self.slope
            # stable logistic for large |z|
            if z >= 0:
                return 1.0 / (1.0 + math.exp(-z))
            e = math.exp(z)
            return e / (1.0 + e)
        return float(self.optimal(int(t)))


def fusion_error_moments(world: LinearGaussianWorld, sigma_tilde: float, denoiser, restorer):
    """(E||e_IR||^2, E||e_D||^2, E[e_IR . e_D]) averaged over the prior, y noise and x_t noise.

    e_IR = x0 - restorer(y), e_D = x0 - denoiser(x0 + sigma~ eps).
    """
    n = world.N
    I = np.eye(n)
    R, r = restorer.affine()
    D, d = denoiser.affine(n, sigma_tilde)
    P1 = I - R @ world.A
    P2 = I - D
    m1 = P1 @ world.mu0 - r
    m2 = P2 @ world.mu0 - d
    S = world.Sigma0
    a = np.trace(P1 @ S @ P1.T) + world.sigma_y**2 * np.sum(R**2) + m1 @ m1
    if math.isinf(sigma_tilde):
        noise_d = 0.0  # D is zero at infinite noise
    else:
        noise_d = sigma_tilde**2 * np.sum(D**2)
    b = np.trace(P2 @ S @ P2.T) + noise_d + m2 @ m2
    c = np.trace(P1 @ S @ P2.T) + m1 @ m2
    return float(a), float(b), float(c)


def optimal_fusion_weight(world: LinearGaussianWorld, sigma_tilde: float, denoiser, restorer) -> float:
    """argmin over w in [0, 1] of E||x0 - (w x_IR + (1 - w) x_D)||^2."""
    a, b, c = fusion_error_moments(world, sigma_tilde, denoiser, restorer)
    denom = a + b - 2.0 * c
    if denom <= 0.0:
        return 1.0 if a <= b else 0.0
    return float(np.clip((b - c) / denom, 0.0, 1.0))


class ConvexFuser:
    name = "convex"

    def __init__(self, policy: FusionWeightPolicy):
        self.policy = policy

    def weight(self, t: int) -> float:
        return self.policy(t)

    def __call__(self, x0_ir, x0_d, t: int, **_ignored) -> np.ndarray:
        x0_ir = np.asarray(x0_ir, dtype=np.float64)
        x0_d = np.asarray(x0_d, dtype=np.float64)
        if x0_ir.shape[-1] != x0_d.shape[-1]:
            raise ValueError(f"dimension mismatch: {x0_ir.shape} vs {x0_d.shape}")
        w = self.policy(t)
        if w == 1.0:
            return np.broadcast_to(x0_ir, np.broadcast_shapes(x0_ir.shape, x0_d.shape)).copy()
        if w == 0.0:
            return np.broadcast_to(x0_d, np.broadcast_shapes(x0_ir.shape, x0_d.shape)).copy()
        return w * x0_ir + (1.0 - w) * x0_d


class ExactFuser:
    """Analytic E[x0 | y, x_t]; needs the raw ``y`` and ``x_t`` besides the two estimates."""

    name = "exact"

    def __init__(self, world: LinearGaussianWorld, schedule: NoiseSchedule):
        self.world = world
        self.schedule = schedule

    def __call__(self, x0_ir, x0_d, t: int, *, y=None, xt=None) -> np.ndarray:
        if y is None or xt is None:
            raise ValueError("exact fuser needs y and x_t")
        x0_ir = np.asarray(x0_ir)
        x0_d = np.asarray(x0_d)
        if x0_ir.shape[-1] != x0_d.shape[-1]:
            raise ValueError(f"dimension mismatch: {x0_ir.shape} vs {x0_d.shape}")
        return cond_x0_given_y_xt(self.world, self.schedule, y, xt, t).mean


@dataclass
class EstimatorStack:
    denoiser: object
    restorer: object
    fuser: object
    schedule: NoiseSchedule

    def denoise(self, x_tilde, sigma_tilde: float) -> np.ndarray:
        return self.denoiser(x_tilde, sigma_tilde)

    def restore(self, y) -> np.ndarray:
        return self.restorer(y)

    def fuse(self, x0_ir, x0_d, t: int, *, y=None, xt=None) -> np.ndarray:
        return self.fuser(x0_ir, x0_d, t, y=y, xt=xt)

    def estimate_x0(self, x0_ir, y, xt, t: int) -> np.ndarray:
        """Denoise the rescaled state and fuse it with the cached restorer output."""
        s = self.schedule
        x_tilde = np.asarray(xt) / math.sqrt(s.alpha_bars[t])
        x0_d = self.denoise(x_tilde, s.tilde_sigma(t))
        return self.fuse(x0_ir, x0_d, t, y=y, xt=xt)


def build_stack(
    world: LinearGaussianWorld,
    schedule: NoiseSchedule,
    denoiser: str = "gaussian",
    restorer: str = "mmse",
    fuser: str = "exact",
    tau: int | None = None,
) -> EstimatorStack:
    """Assemble a stack from names: denoiser in {identity, gaussian}, restorer in
    {backprojection, mmse}, fuser in {exact, convex:<policy>}.

    Convex policies: ``convex:constant:<w>``, ``convex:logistic[:<t0>[:<slope>]]``
    (t0 defaults to ``tau``) and ``convex:oracle_optimal``.
    """
    dens = {"identity": lambda: IdentityDenoiser(), "gaussian": lambda: GaussianDenoiser(world)}
    rests = {"backprojection": lambda: BackprojectionRestorer(world), "mmse": lambda: MMSERestorer(world)}
    if denoiser not in dens:
        raise ValueError(f"unknown denoiser {denoiser!r}; choose from {sorted(dens)}")
    if restorer not in rests:
        raise ValueError(f"unknown restorer {restorer!r}; choose from {sorted(rests)}")
    den = dens[denoiser]()
    res = rests[restorer]()
    if fuser == "exact":
        fus = ExactFuser(world, schedule)
    elif fuser.startswith("convex:"):
        parts = fuser.split(":")[1:]
        kind = parts[0]
        if kind == "constant" and len(parts) == 2:
            policy = FusionWeightPolicy.constant(float(parts[1]))
        elif kind == "logistic" and len(parts) <= 3:
            if len(parts) > 1:
                mid = float(parts[1])
            elif tau:
                mid = float(tau)
            else:
                raise ValueError("logistic policy needs a midpoint (or a positive tau)")
            slope = float(parts[2]) if len(parts) == 3 else None
            policy = FusionWeightPolicy.logistic(mid, slope)
        elif kind == "oracle_optimal" and len(parts) == 1:
            policy = FusionWeightPolicy.oracle_optimal(world, schedule, den, res)
        else:
            raise ValueError(f"malformed convex fuser name {fuser!r}")
        fus = ConvexFuser(policy)
    else:
        raise ValueError(f"unknown fuser {fuser!r}; use 'exact' or 'convex:<policy>'")
    return EstimatorStack(den, res, fus, schedule)
