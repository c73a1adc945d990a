"""Abstract TFLOP tallies: ``total = per_nfe_tflop * N + fixed_tflop``."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CostModel:
    per_nfe_tflop: float
    fixed_tflop: float = 0.0

    def __post_init__(self):
        if self.per_nfe_tflop < 0 or self.fixed_tflop < 0:
            raise ValueError("TFLOP costs must be nonnegative")


def total_cost(m: CostModel, nfe: int) -> float:
    if nfe < 0:
        raise ValueError("nfe must be nonnegative")
    return m.per_nfe_tflop * nfe + m.fixed_tflop


# 720p dynamic-scene deblurring rows: (method, per-NFE TFLOP, fixed TFLOP, NFE)
REFERENCE_ROWS = (
    ("DvSR", 1.2, 4.8, 500),
    ("icDPM", 4.8, 5.2, 500),
    ("InDI", 4.8, 0.0, 10),
    ("Ours", 4.3, 1.9, 5),
)


def cost_table(rows=REFERENCE_ROWS) -> list[dict]:
    out = []
    for name, x, y, nfe in rows:
        out.append(
            {
                "method": name,
                "per_nfe_tflop": x,
                "fixed_tflop": y,
                "nfe": nfe,
                "total_tflop": total_cost(CostModel(x, y), nfe),
            }
        )
    return out
