"""Fidelity metrics (MSE and PSNR)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr_db: float  # math.inf when the inputs are identical
    n_samples: int

    @property
    def exact_match(self) -> bool:
        return math.isinf(self.psnr_db)


def psnr(mse: float, peak: float = 1.0) -> float:
    if mse < 0:
        raise ValueError("mse must be nonnegative")
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def evaluate(reference, estimate, peak: float = 1.0) -> MetricReport:
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {estimate.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference - estimate) ** 2))
    return MetricReport(mse=mse, psnr_db=psnr(mse, peak), n_samples=int(reference.size))
