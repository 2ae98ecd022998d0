"""Indirect interactive guidance across triples of adjacent feature levels.

Three successive bank outputs (low, mid, high) interact through the middle
level: the mid and high features are upsampled to the low level's size,
passed through per-source 3x3 convs, summed, and squashed into a gate that
amplifies the low level; symmetrically, the low and mid features are
downsampled to the high level's size to gate the high level. Each gated level
keeps its original features through a residual, so the gate can only amplify.

With four levels (2..5), the (2,3,4) group produces the guided levels 2 and 4
and the (3,4,5) group produces 3 and 5, covering every level exactly once.
The convs fold in the cross-level channel-width change and carry no
activation; the sigmoid is applied after the sum.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError, ContractError
from .modules import Conv2d, Module
from .tensor import Tensor, add, bilinear_resize, mul, sigmoid

__all__ = ["GuidanceWeights", "GuidedPyramid", "iigm_group", "GuidanceGroup", "Guidance"]


@dataclass
class GuidanceWeights:
    """The two sigmoid gates of one level triple."""

    w_high: Tensor  # shaped like the low level, gates it with high-level context
    w_low: Tensor   # shaped like the high level, gates it with low-level context


@dataclass
class GuidedPyramid:
    """Guided features per level, shaped exactly like the bank outputs."""

    levels: dict[int, Tensor]


def iigm_group(fb_lo: Tensor, fb_mid: Tensor, fb_hi: Tensor,
               conv_mid_to_lo: Conv2d, conv_hi_to_lo: Conv2d,
               conv_lo_to_hi: Conv2d, conv_mid_to_hi: Conv2d,
               ) -> tuple[Tensor, Tensor, GuidanceWeights]:
    """Guide one (low, mid, high) triple; returns (guided_low, guided_high, gates)."""
    for conv, src, dst, name in (
        (conv_mid_to_lo, fb_mid, fb_lo, "mid->low"),
        (conv_hi_to_lo, fb_hi, fb_lo, "high->low"),
        (conv_lo_to_hi, fb_lo, fb_hi, "low->high"),
        (conv_mid_to_hi, fb_mid, fb_hi, "mid->high"),
    ):
        if conv.weights.shape[1] != src.shape[1] or conv.weights.shape[0] != dst.shape[1]:
            raise ConfigurationError(
                f"guidance conv {name} maps {conv.weights.shape[1]} -> "
                f"{conv.weights.shape[0]} channels but features are "
                f"{src.shape[1]} -> {dst.shape[1]}"
            )
    lo_h, lo_w = fb_lo.shape[2:]
    hi_h, hi_w = fb_hi.shape[2:]
    w_high = sigmoid(add(
        conv_mid_to_lo(bilinear_resize(fb_mid, lo_h, lo_w)),
        conv_hi_to_lo(bilinear_resize(fb_hi, lo_h, lo_w)),
    ))
    w_low = sigmoid(add(
        conv_lo_to_hi(bilinear_resize(fb_lo, hi_h, hi_w)),
        conv_mid_to_hi(bilinear_resize(fb_mid, hi_h, hi_w)),
    ))
    guided_lo = add(fb_lo, mul(fb_lo, w_high))
    guided_hi = add(fb_hi, mul(fb_hi, w_low))
    return guided_lo, guided_hi, GuidanceWeights(w_high=w_high, w_low=w_low)


class GuidanceGroup(Module):
    """The four cross-level convs of one level triple."""

    def __init__(self, c_lo: int, c_mid: int, c_hi: int, rng):
        self.mid_to_lo = Conv2d(c_mid, c_lo, 3, rng, padding=1)
        self.hi_to_lo = Conv2d(c_hi, c_lo, 3, rng, padding=1)
        self.lo_to_hi = Conv2d(c_lo, c_hi, 3, rng, padding=1)
        self.mid_to_hi = Conv2d(c_mid, c_hi, 3, rng, padding=1)

    def __call__(self, fb_lo: Tensor, fb_mid: Tensor, fb_hi: Tensor):
        return iigm_group(fb_lo, fb_mid, fb_hi, self.mid_to_lo, self.hi_to_lo,
                          self.lo_to_hi, self.mid_to_hi)


class Guidance(Module):
    """Applies the two level-triple groups to the four bank outputs.

    ``widths`` maps level -> channel width of the bank output at that level.
    """

    def __init__(self, widths: dict[int, int], rng):
        if sorted(widths) != [2, 3, 4, 5]:
            raise ContractError(f"guidance needs levels 2..5, got {sorted(widths)}")
        self.group_234 = GuidanceGroup(widths[2], widths[3], widths[4], rng)
        self.group_345 = GuidanceGroup(widths[3], widths[4], widths[5], rng)

    def __call__(self, fbs: dict[int, Tensor]) -> GuidedPyramid:
        missing = [i for i in (2, 3, 4, 5) if i not in fbs]
        if missing:
            raise ContractError(f"guidance is missing bank outputs for levels {missing}")
        i2, i4, _ = self.group_234(fbs[2], fbs[3], fbs[4])
        i3, i5, _ = self.group_345(fbs[3], fbs[4], fbs[5])
        return GuidedPyramid(levels={2: i2, 3: i3, 4: i4, 5: i5})
