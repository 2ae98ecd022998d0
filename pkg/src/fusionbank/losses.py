"""Training objective: multi-level BCE plus edge-aware smoothness and dice.

Every level's map is supervised against the ground truth at full input
resolution with binary cross-entropy; the level weights default to
(1.0, 0.8, 0.6, 0.5) from the final map down to the coarsest. The smoothness
term penalizes prediction gradients away from image edges (first-order
forward differences, weighted by exp(-|luminance gradient|)) and the dice
term keeps the predicted region consistent with the mask; both apply to the
final map only and enter the total with unit weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .network import SaliencyOutputs
from .tensor import (
    Tensor,
    absolute,
    clamp_min,
    div,
    log,
    mul,
    spatial_diff,
    tmean,
    tsum,
)

__all__ = ["LossWeights", "LossReport", "bce", "smoothness", "dice", "total_loss", "LUMA_WEIGHTS"]

LOG_FLOOR = 1e-12
DICE_EPS = 1.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # Rec. 601


@dataclass
class LossWeights:
    """Per-level BCE weights plus switches for the two auxiliary terms."""

    lambda2: float = 1.0
    lambda3: float = 0.8
    lambda4: float = 0.6
    lambda5: float = 0.5
    use_smooth: bool = True
    use_dice: bool = True

    def __post_init__(self):
        for name in ("lambda2", "lambda3", "lambda4", "lambda5"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")

    @property
    def lambdas(self) -> tuple[float, float, float, float]:
        return (self.lambda2, self.lambda3, self.lambda4, self.lambda5)


@dataclass
class LossReport:
    """Scalar values of every term plus the weighted total."""

    l2: float
    l3: float
    l4: float
    l5: float
    l_smooth: float
    l_dice: float
    total: float

    CSV_FIELDS = ("l2", "l3", "l4", "l5", "smooth", "dice", "total")

    def csv_values(self) -> tuple[float, ...]:
        return (self.l2, self.l3, self.l4, self.l5, self.l_smooth, self.l_dice, self.total)


def _check_pair(s: Tensor, g: Tensor, op: str) -> None:
    if s.shape != g.shape:
        raise DimensionError(f"{op}: prediction {s.shape} and target {g.shape} differ")


def bce(s: Tensor, g: Tensor) -> Tensor:
    """Mean binary cross-entropy with logs clamped at a 1e-12 floor."""
    _check_pair(s, g, "bce")
    pos = mul(g, log(clamp_min(s, LOG_FLOOR)))
    neg = mul(1.0 - g, log(clamp_min(1.0 - s, LOG_FLOOR)))
    return -tmean(pos + neg)


def smoothness(s: Tensor, rgb: Tensor) -> Tensor:
    """Edge-aware first-order smoothness of the map against the RGB image.

    Both axes' forward-difference maps are pooled into one mean; the exp
    weight is computed from the image luminance and treated as a constant.
    """
    if s.ndim != 4 or rgb.ndim != 4:
        raise DimensionError("smoothness expects rank-4 tensors")
    if s.shape[2:] != rgb.shape[2:] or s.shape[0] != rgb.shape[0]:
        raise DimensionError(
            f"smoothness: map {s.shape} and image {rgb.shape} are spatially incompatible"
        )
    r, gch, b = LUMA_WEIGHTS
    luma = (r * rgb.data[:, 0:1] + gch * rgb.data[:, 1:2] + b * rgb.data[:, 2:3])
    w_x = np.exp(-np.abs(luma[:, :, :, 1:] - luma[:, :, :, :-1]))
    w_y = np.exp(-np.abs(luma[:, :, 1:, :] - luma[:, :, :-1, :]))
    term_x = tsum(mul(absolute(spatial_diff(s, 3)), Tensor(w_x)))
    term_y = tsum(mul(absolute(spatial_diff(s, 2)), Tensor(w_y)))
    n = w_x.size + w_y.size
    return (term_x + term_y) / n


def dice(s: Tensor, g: Tensor) -> Tensor:
    """Soft dice loss, 1 - (2*overlap + eps) / (sum(s) + sum(g) + eps)."""
    _check_pair(s, g, "dice")
    overlap = tsum(mul(s, g))
    denom = tsum(s) + tsum(g) + DICE_EPS
    return 1.0 - div(2.0 * overlap + DICE_EPS, denom)


def total_loss(outputs: SaliencyOutputs, g: Tensor, rgb: Tensor,
               w: LossWeights) -> tuple[Tensor, LossReport]:
    """Weighted sum of the per-level BCE terms plus the enabled extras.

    Returns the differentiable total and a plain-float report of every term.
    Disabled terms are reported as 0 and excluded from the total.
    """
    maps = outputs.as_dict()
    level_losses = {i: bce(maps[i], g) for i in (2, 3, 4, 5)}
    total = None
    for lam, i in zip(w.lambdas, (2, 3, 4, 5)):
        term = lam * level_losses[i]
        total = term if total is None else total + term
    l_smooth = smoothness(outputs.s2, rgb) if w.use_smooth else None
    l_dice = dice(outputs.s2, g) if w.use_dice else None
    if l_smooth is not None:
        total = total + l_smooth
    if l_dice is not None:
        total = total + l_dice
    report = LossReport(
        l2=level_losses[2].item(),
        l3=level_losses[3].item(),
        l4=level_losses[4].item(),
        l5=level_losses[5].item(),
        l_smooth=l_smooth.item() if l_smooth is not None else 0.0,
        l_dice=l_dice.item() if l_dice is not None else 0.0,
        total=total.item(),
    )
    return total, report
