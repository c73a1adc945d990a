"""Linear-Gaussian world ``y = A x0 + n`` with every conditional in closed form.

Prior ``x0 ~ N(mu0, Sigma0)``, noise ``n ~ N(0, sigma_y^2 I)`` and the forward
diffusion ``x_t = sqrt(abar_t) x0 + eps`` make all the conditionals of x0
Gaussian, which is what lets the sampler be checked against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .schedule import NoiseSchedule

PSD_FLOOR = -1e-10


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Deterministic standard-normal generator keyed by ``(seed, stream_id)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream_id)])))


@dataclass(frozen=True)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        if cov.size and np.linalg.eigvalsh(cov).min() < PSD_FLOOR:
            raise ValueError("covariance is not positive semi-definite")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        w, v = np.linalg.eigh(self.cov)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        z = rng.standard_normal((size, len(w)))
        return self.mean + z @ root.T


def _sym(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


def _condition(mu, cov, H, R, z):
    """Condition N(mu, cov) on the linear observation ``z = H x + N(0, R)``.

    ``z`` may be batched along leading axes; the returned covariance does not
    depend on it.
    """
    S = H @ cov @ H.T + R
    cf = la.cho_factor(S, lower=True)
    CH = cov @ H.T
    resid = np.asarray(z, dtype=np.float64) - H @ mu
    flat = resid.reshape(-1, resid.shape[-1])
    mean = (mu + (CH @ la.cho_solve(cf, flat.T)).T).reshape(resid.shape[:-1] + mu.shape)
    post = _sym(cov - CH @ la.cho_solve(cf, CH.T))
    return mean, post


@dataclass(frozen=True, eq=False)
class LinearGaussianWorld:
    mu0: np.ndarray
    Sigma0: np.ndarray
    A: np.ndarray
    sigma_y: float
    seed: int | None = None
    allow_violations: bool = field(default=False, compare=False)

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=np.float64).ravel()
        S = np.asarray(self.Sigma0, dtype=np.float64)
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "Sigma0", S)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma_y", float(self.sigma_y))
        n = mu0.size
        if S.shape != (n, n) or A.shape[1] != n:
            raise ValueError(f"inconsistent shapes: mu0 {mu0.shape}, Sigma0 {S.shape}, A {A.shape}")
        if not np.allclose(S, S.T, rtol=0.0, atol=1e-12):
            raise ValueError("Sigma0 must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 0.0:
            raise ValueError("Sigma0 must be positive definite")
        if self.sigma_y < 0.0:
            raise ValueError("sigma_y must be nonnegative")
        if not self.allow_violations:
            if np.linalg.norm(A, 2) > 1.0 + 1e-12:
                raise ValueError("||A||_2 exceeds 1; pass allow_violations=True to override")
            if not 0.0 < self.sigma_y <= 1.0:
                raise ValueError("sigma_y must lie in (0, 1]; pass allow_violations=True to override")

    @property
    def N(self) -> int:
        return self.mu0.size

    @property
    def M(self) -> int:
        return self.A.shape[0]

    def prior(self) -> GaussianDist:
        return GaussianDist(self.mu0, self.Sigma0)

    def observe(self, x0, rng: np.random.Generator) -> np.ndarray:
        x0 = np.asarray(x0, dtype=np.float64)
        n = rng.standard_normal(x0.shape[:-1] + (self.M,))
        return x0 @ self.A.T + self.sigma_y * n

    def draw_pairs(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Ground-truth signals from the prior and their observations."""
        x0 = self.prior().sample(rng, count)
        return x0, self.observe(x0, rng)

    def rotated(self, Q: np.ndarray) -> "LinearGaussianWorld":
        """Same world expressed in the basis ``x -> Q x`` (Q orthogonal)."""
        return LinearGaussianWorld(
            mu0=Q @ self.mu0,
            Sigma0=_sym(Q @ self.Sigma0 @ Q.T),
            A=self.A @ Q.T,
            sigma_y=self.sigma_y,
            seed=self.seed,
            allow_violations=self.allow_violations,
        )

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "M": self.M,
            "mu0": self.mu0.tolist(),
            "Sigma0": self.Sigma0.tolist(),
            "A": self.A.tolist(),
            "sigma_y": self.sigma_y,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict, allow_violations: bool = False) -> "LinearGaussianWorld":
        expected = {"N", "M", "mu0", "Sigma0", "A", "sigma_y", "seed"}
        unknown = set(d) - expected
        if unknown:
            raise KeyError(f"unknown world key(s): {sorted(unknown)}")
        missing = expected - {"seed"} - set(d)
        if missing:
            raise KeyError(f"missing world key(s): {sorted(missing)}")
        w = cls(
            mu0=np.array(d["mu0"], dtype=np.float64),
            Sigma0=np.array(d["Sigma0"], dtype=np.float64),
            A=np.array(d["A"], dtype=np.float64).reshape(d["M"], d["N"]),
            sigma_y=d["sigma_y"],
            seed=d.get("seed"),
            allow_violations=allow_violations,
        )
        if (w.N, w.M) != (d["N"], d["M"]):
            raise ValueError("N/M fields disagree with array shapes")
        return w

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str, allow_violations: bool = False) -> "LinearGaussianWorld":
        return cls.from_dict(json.loads(text), allow_violations)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path, allow_violations: bool = False) -> "LinearGaussianWorld":
        return cls.from_json(Path(path).read_text(), allow_violations)


def make_world(
    N: int,
    M: int,
    seed: int,
    spectral_cap: float = 1.0,
    sigma_y: float = 0.5,
    *,
    identity: bool = False,
    allow_violations: bool = False,
) -> LinearGaussianWorld:
    """Random world: A rescaled so that ||A||_2 == spectral_cap, Sigma0 eigenvalues in [0.1, 2]."""
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    if spectral_cap > 1.0 and not allow_violations:
        raise ValueError("spectral_cap > 1 violates ||A||_2 <= 1; pass allow_violations=True")
    rng = rng_stream(seed, 0)
    if identity:
        if N != M:
            raise ValueError("identity observation needs N == M")
        A = np.eye(N)
    else:
        A = rng.standard_normal((M, N))
        A *= spectral_cap / np.linalg.norm(A, 2)
    Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
    eig = rng.uniform(0.1, 2.0, N)
    Sigma0 = _sym((Q * eig) @ Q.T)
    mu0 = rng.standard_normal(N)
    return LinearGaussianWorld(mu0, Sigma0, A, sigma_y, seed=seed, allow_violations=allow_violations)


# -- analytic conditionals ---------------------------------------------------

def cond_x0_given_y(world: LinearGaussianWorld, y) -> GaussianDist:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != world.M:
        raise ValueError(f"y has length {y.shape[-1]}, world expects {world.M}")
    R = world.sigma_y**2 * np.eye(world.M)
    mean, cov = _condition(world.mu0, world.Sigma0, world.A, R, y)
    return _dist(mean, cov)


def cond_x0_given_xt(world: LinearGaussianWorld, s: NoiseSchedule, xt, t: int) -> GaussianDist:
    t = s.check_t(t, lo=0)
    xt = np.asarray(xt, dtype=np.float64)
    if xt.shape[-1] != world.N:
        raise ValueError(f"x_t has length {xt.shape[-1]}, world expects {world.N}")
    ab, one_m = s.alpha_bars[t], s.one_minus_alpha_bars[t]
    H = np.sqrt(ab) * np.eye(world.N)
    mean, cov = _condition(world.mu0, world.Sigma0, H, one_m * np.eye(world.N), xt)
    return _dist(mean, cov)


def cond_x0_given_y_xt(world: LinearGaussianWorld, s: NoiseSchedule, y, xt, t: int) -> GaussianDist:
    t = s.check_t(t, lo=0)
    y = np.asarray(y, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if y.shape[-1] != world.M or xt.shape[-1] != world.N:
        raise ValueError("y / x_t dimensions do not match the world")
    batch = np.broadcast_shapes(y.shape[:-1], xt.shape[:-1])
    z = np.concatenate(
        [np.broadcast_to(y, batch + y.shape[-1:]), np.broadcast_to(xt, batch + xt.shape[-1:])], axis=-1
    )
    ab, one_m = s.alpha_bars[t], s.one_minus_alpha_bars[t]
    H = np.vstack([world.A, np.sqrt(ab) * np.eye(world.N)])
    R = np.diag(np.concatenate([np.full(world.M, world.sigma_y**2), np.full(world.N, one_m)]))
    mean, cov = _condition(world.mu0, world.Sigma0, H, R, z)
    return _dist(mean, cov)


def _dist(mean, cov) -> GaussianDist:
    # batched means are allowed; covariance checks still apply
    d = GaussianDist.__new__(GaussianDist)
    object.__setattr__(d, "mean", mean)
    object.__setattr__(d, "cov", cov)
    GaussianDist.__post_init__(d)
    return d


def xt_given_y(world: LinearGaussianWorld, s: NoiseSchedule, y, t: int) -> GaussianDist:
    """p(x_t | y) = N(sqrt(abar) m, abar C + (1 - abar) I) with (m, C) the x0|y posterior."""
    t = s.check_t(t, lo=0)
    post = cond_x0_given_y(world, y)
    ab = s.alpha_bars[t]
    return _dist(np.sqrt(ab) * post.mean, _sym(ab * post.cov + s.one_minus_alpha_bars[t] * np.eye(world.N)))


def analytic_score_xt_given_y(world: LinearGaussianWorld, s: NoiseSchedule, y, xt, t: int) -> np.ndarray:
    """grad_{x_t} log p(x_t | y), computed directly from the Gaussian marginal."""
    d = xt_given_y(world, s, y, t)
    xt = np.asarray(xt, dtype=np.float64)
    cf = la.cho_factor(d.cov, lower=True)
    r = xt - d.mean
    flat = r.reshape(-1, world.N)
    return -la.cho_solve(cf, flat.T).T.reshape(r.shape)


# -- fixed-x0 error analysis ------------------------------------------------

def restorer_fixed_x0_error(world: LinearGaussianWorld, x0) -> float:
    """E_{y|x0} ||x0 - A^T y||^2 = ||(I - A^T A) x0||^2 + sigma_y^2 ||A||_F^2."""
    x0 = np.asarray(x0, dtype=np.float64)
    r = x0 - world.A.T @ (world.A @ x0)
    return float(r @ r + world.sigma_y**2 * np.sum(world.A**2))


def fused_fixed_x0_error(world: LinearGaussianWorld, s: NoiseSchedule, x0, w: float, t: int) -> float:
    """E ||x0 - (w A^T y + (1 - w) x~_t)||^2 with x~_t = x_t / sqrt(abar_t)."""
    if not 0.0 < w < 1.0:
        raise ValueError(f"w must lie in (0, 1), got {w}")
    t = s.check_t(t)
    s2 = s.one_minus_alpha_bars[t] / s.alpha_bars[t]
    return float(w**2 * restorer_fixed_x0_error(world, x0) + (1.0 - w) ** 2 * s2 * world.N)


def fusion_margin(world: LinearGaussianWorld, s: NoiseSchedule, x0, w: float) -> np.ndarray:
    """rhs - lhs for t = 1..T (index t - 1)."""
    if not 0.0 < w < 1.0:
        raise ValueError(f"w must lie in (0, 1), got {w}")
    lhs = restorer_fixed_x0_error(world, x0)
    s2 = s.one_minus_alpha_bars[1:] / s.alpha_bars[1:]
    return w**2 * lhs + (1.0 - w) ** 2 * s2 * world.N - lhs


def find_tau(world: LinearGaussianWorld, s: NoiseSchedule, x0, w: float) -> int | None:
    """Smallest tau with lhs <= rhs for every t in (tau, T].

    Returns 0 when the inequality already holds at t = 1, and ``None`` when it
    fails even at t = T (no activation step exists inside this schedule).
    Binary search is valid because (1 - abar_t) / abar_t increases with t.
    """
    if not 0.0 < w < 1.0:
        raise ValueError(f"w must lie in (0, 1), got {w}")
    lhs = restorer_fixed_x0_error(world, x0)
    need = (1.0 - w**2) * lhs / ((1.0 - w) ** 2 * world.N)

    def ok(t):
        return s.one_minus_alpha_bars[t] / s.alpha_bars[t] >= need

    if not ok(s.T):
        return None
    lo, hi = 1, s.T  # first satisfying t lies in [lo, hi]
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo - 1


def trace_quadratic(sigma, B) -> float:
    """E[x^T B x] for x ~ N(0, diag(sigma^2)), i.e. tr(diag(sigma^2) B)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.shape != (sigma.size, sigma.size):
        raise ValueError(f"B must be {sigma.size}x{sigma.size}, got {B.shape}")
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    return float(np.sum(sigma**2 * np.diag(B)))
