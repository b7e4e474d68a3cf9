"""Training objectives: content/TV terms and the two adversarial losses.

The expectation in every term is the mean over batch and pixels.
Probabilities are clamped to ``[PROB_EPS, 1 - PROB_EPS]`` before any
logarithm, so a saturated discriminator cannot produce infinities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import IO

from .tensor import ConfigError, Tensor, clamp, log, mean, square, subtract, tv_norm

__all__ = [
    "PROB_EPS",
    "ContentTerms",
    "LossReport",
    "LossWeights",
    "content_loss",
    "disc_loss",
    "gen_adv_loss",
    "generator_total",
    "mse",
]

PROB_EPS = 1e-7

ADV_MODES = ("saturating", "non_saturating")


@dataclass(frozen=True)
class LossWeights:
    """alpha scales the TV term; beta balances infrared vs visible MSE."""

    alpha: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared elementwise difference over all elements."""
    return mean(square(subtract(a, b)))


@dataclass
class ContentTerms:
    """Content loss and its constituents, still attached to the graph."""

    total: Tensor
    mse_ir: Tensor
    mse_vis: Tensor
    tv: Tensor


def content_loss(fused: Tensor, visible: Tensor, infrared: Tensor,
                 weights: LossWeights) -> ContentTerms:
    """beta*E[(F-I)^2] + (1-beta)*E[(F-V)^2] + alpha*TV(F-V)."""
    mse_ir = mse(fused, infrared)
    mse_vis = mse(fused, visible)
    tv = tv_norm(subtract(fused, visible))
    total = weights.beta * mse_ir + (1.0 - weights.beta) * mse_vis + weights.alpha * tv
    return ContentTerms(total=total, mse_ir=mse_ir, mse_vis=mse_vis, tv=tv)


def _clamped_log(p: Tensor) -> Tensor:
    return log(clamp(p, PROB_EPS, 1.0 - PROB_EPS))


def disc_loss(d_fused: Tensor, d_visible: Tensor) -> Tensor:
    """-E[log(1 - D(F))] - E[log(D(V))]."""
    return -(mean(_clamped_log(1.0 - d_fused)) + mean(_clamped_log(d_visible)))


def gen_adv_loss(d_fused: Tensor, mode: str = "saturating") -> Tensor:
    """Adversarial term of the generator objective.

    ``saturating`` is the literal E[log(1 - D(F))]; ``non_saturating`` is
    the -E[log D(F)] alternative, exposed because the literal form stalls
    when the discriminator wins early.
    """
    if mode == "saturating":
        return mean(_clamped_log(1.0 - d_fused))
    if mode == "non_saturating":
        return -mean(_clamped_log(d_fused))
    raise ConfigError(f"adversarial mode must be one of {ADV_MODES}, got {mode!r}")


def generator_total(content: Tensor, gen_adv: Tensor) -> Tensor:
    """Generator objective: content term plus adversarial regularizer."""
    return content + gen_adv


@dataclass
class LossReport:
    """One training step's loss values, as plain floats for logging."""

    step: int
    disc: float
    content: float
    mse_ir: float
    mse_vis: float
    tv: float
    gen_adv: float
    generator_total: float

    CSV_FIELDS = ("step", "disc", "content", "mse_ir", "mse_vis", "tv",
                  "gen_adv", "generator_total")

    def as_row(self) -> list:
        return [getattr(self, name) for name in self.CSV_FIELDS]

    def terms(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "step"}


def write_loss_log(path: str | Path, reports: list[LossReport]) -> None:
    with open(path, "w", newline="") as fh:
        _write_loss_rows(fh, reports)


def _write_loss_rows(fh: IO[str], reports: list[LossReport]) -> None:
    writer = csv.writer(fh)
    writer.writerow(LossReport.CSV_FIELDS)
    for report in reports:
        writer.writerow(report.as_row())
