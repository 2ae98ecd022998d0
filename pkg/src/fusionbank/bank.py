"""Adaptive fusion bank: five challenge-specific fusion schemes plus the
channel-weighting ensemble that adaptively blends them.

Each scheme consumes the per-level modal feature pair and emits C channels, so
the concatenated bank output carries 5C channels in the fixed order
(cb, sv, ic, li, td):

* cb - plain 3x3 conv block on the concatenated features (center bias),
* sv - dilation-2 3x3 conv block, widening the receptive field (scale
  variation),
* ic - two consecutive conv blocks with a residual tap of the concatenated
  input between them (image clutter),
* li - the auxiliary stream gates the RGB stream: sigma(conv(aux)) * rgb + rgb
  (low illumination),
* td - mirror of li with the roles swapped (thermal crossover / depth
  ambiguity).

The ensemble pools the concatenation globally (average and max), pushes each
pooled vector through its own 1x1 conv, sums, and squashes with a sigmoid to
get a per-channel weight vector in (0,1) that rescales the concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .modules import Conv2d, ConvBlock, Module
from .tensor import (
    Tensor,
    add,
    concat_channels,
    global_pool,
    mul,
    scale_channels,
    sigmoid,
)

SCHEME_ORDER = ("cb", "sv", "ic", "li", "td")

__all__ = [
    "SCHEME_ORDER",
    "ModalFeatures",
    "SchemeOutputs",
    "EnsembleWeights",
    "ModalityWeight",
    "BankOutput",
    "fuse_cb",
    "fuse_sv",
    "fuse_ic",
    "fuse_li",
    "fuse_td",
    "aem",
    "FusionBank",
]


@dataclass
class ModalFeatures:
    """One encoder level's paired features and their channel concatenation."""

    level: int
    f_r: Tensor
    f_aux: Tensor
    f_cat: Tensor = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.f_r.shape != self.f_aux.shape:
            raise DimensionError(
                f"level {self.level}: rgb features {self.f_r.shape} and auxiliary "
                f"features {self.f_aux.shape} must match"
            )
        if self.f_cat is None:
            self.f_cat = concat_channels([self.f_r, self.f_aux])

    @property
    def channels(self) -> int:
        return self.f_r.shape[1]


@dataclass
class SchemeOutputs:
    """The five scheme outputs and their concatenation in bank order."""

    f_cb: Tensor
    f_sv: Tensor
    f_ic: Tensor
    f_li: Tensor
    f_td: Tensor
    f_cat5: Tensor

    def by_name(self, name: str) -> Tensor:
        return getattr(self, f"f_{name}")


@dataclass
class EnsembleWeights:
    """Channel weight vector [B,kC,1,1] and its per-scheme block means."""

    v: Tensor
    per_scheme_mean: dict[str, float]


@dataclass
class ModalityWeight:
    """Sigmoid gate produced by one modality to guide the other."""

    w: Tensor
    role: str  # "thermal-guides-rgb" or "rgb-guides-aux"


@dataclass
class BankOutput:
    """Weighted concatenation FB emitted toward the decoder."""

    fb: Tensor


def _check_fusion_conv(m: ModalFeatures, conv: Conv2d, in_mult: int, name: str) -> None:
    want = in_mult * m.channels
    if conv.weights.shape[1] != want:
        raise DimensionError(
            f"{name}: conv expects {conv.weights.shape[1]} input channels, "
            f"level {m.level} provides {want}"
        )


def fuse_cb(m: ModalFeatures, block: ConvBlock) -> Tensor:
    """Center-bias scheme: one 3x3 conv block on the concatenated features."""
    _check_fusion_conv(m, block.conv, 2, "fuse_cb")
    return block(m.f_cat)


def fuse_sv(m: ModalFeatures, block: ConvBlock) -> Tensor:
    """Scale-variation scheme: dilation-2 conv block (5x5 receptive field)."""
    _check_fusion_conv(m, block.conv, 2, "fuse_sv")
    return block(m.f_cat)


def fuse_ic(m: ModalFeatures, inner: ConvBlock, outer: ConvBlock) -> Tensor:
    """Image-clutter scheme: conv block, residual tap of the input, conv block."""
    if inner.conv.weights.shape[0] != 2 * m.channels:
        raise ConfigurationError(
            f"fuse_ic: inner block must emit {2 * m.channels} channels to allow the "
            f"residual addition, got {inner.conv.weights.shape[0]}"
        )
    _check_fusion_conv(m, inner.conv, 2, "fuse_ic")
    _check_fusion_conv(m, outer.conv, 2, "fuse_ic")
    return outer(add(inner(m.f_cat), m.f_cat))


def fuse_li(m: ModalFeatures, gate: Conv2d) -> tuple[ModalityWeight, Tensor]:
    """Low-illumination scheme: auxiliary features gate the RGB features."""
    _check_fusion_conv(m, gate, 1, "fuse_li")
    w = sigmoid(gate(m.f_aux))
    out = add(mul(w, m.f_r), m.f_r)
    return ModalityWeight(w, "thermal-guides-rgb"), out


def fuse_td(m: ModalFeatures, gate: Conv2d) -> tuple[ModalityWeight, Tensor]:
    """Thermal-crossover / depth-ambiguity scheme: RGB gates the auxiliary."""
    _check_fusion_conv(m, gate, 1, "fuse_td")
    w = sigmoid(gate(m.f_r))
    out = add(mul(w, m.f_aux), m.f_aux)
    return ModalityWeight(w, "rgb-guides-aux"), out


def _scheme_means(v: np.ndarray, schemes: tuple[str, ...], width: int) -> dict[str, float]:
    means = {}
    for k, name in enumerate(schemes):
        means[name] = float(v[:, k * width:(k + 1) * width].mean())
    return means


def aem(s: SchemeOutputs, conv_avg: Conv2d, conv_max: Conv2d,
        schemes: tuple[str, ...] = SCHEME_ORDER) -> tuple[EnsembleWeights, BankOutput]:
    """Adaptive ensemble: V = sigma(conv(GAP(fC)) + conv(GMP(fC))), FB = V * fC."""
    f_cat = s.f_cat5
    c_total = f_cat.shape[1]
    for conv, name in ((conv_avg, "avg"), (conv_max, "max")):
        if conv.weights.shape[1] != c_total or conv.weights.shape[0] != c_total:
            raise DimensionError(
                f"aem: {name}-branch conv maps {conv.weights.shape[1]} -> "
                f"{conv.weights.shape[0]} channels, bank provides {c_total}"
            )
    pooled = add(conv_avg(global_pool(f_cat, "avg")), conv_max(global_pool(f_cat, "max")))
    v = sigmoid(pooled)
    fb = scale_channels(f_cat, v)
    width = c_total // len(schemes)
    weights = EnsembleWeights(v, _scheme_means(v.data, schemes, width))
    return weights, BankOutput(fb)


class FusionBank(Module):
    """One encoder level's bank of fusion schemes plus the ensemble convs.

    ``schemes`` selects a subset (in canonical order) for the scheme-combination
    ablations; ``use_aem=False`` replaces the ensemble with plain channel-wise
    concatenation (the weight vector is effectively frozen at one).
    """

    def __init__(self, channels: int, rng, schemes=SCHEME_ORDER, use_aem: bool = True):
        schemes = tuple(schemes)
        if not schemes:
            raise ConfigurationError("fusion bank needs a non-empty scheme subset")
        unknown = [s for s in schemes if s not in SCHEME_ORDER]
        if unknown:
            raise ConfigurationError(f"unknown fusion schemes: {unknown}")
        # canonical order regardless of how the subset was listed
        self.schemes = tuple(s for s in SCHEME_ORDER if s in schemes)
        self.channels = channels
        self.use_aem = use_aem
        c = channels
        if "cb" in self.schemes:
            self.cb = ConvBlock(2 * c, c, 3, rng, padding=1)
        if "sv" in self.schemes:
            self.sv = ConvBlock(2 * c, c, 3, rng, padding=2, dilation=2)
        if "ic" in self.schemes:
            self.ic_inner = ConvBlock(2 * c, 2 * c, 3, rng, padding=1)
            self.ic_outer = ConvBlock(2 * c, c, 3, rng, padding=1)
        if "li" in self.schemes:
            self.li_gate = Conv2d(c, c, 3, rng, padding=1)
        if "td" in self.schemes:
            self.td_gate = Conv2d(c, c, 3, rng, padding=1)
        if use_aem:
            total = len(self.schemes) * c
            self.aem_avg = Conv2d(total, total, 1, rng)
            self.aem_max = Conv2d(total, total, 1, rng)

    @property
    def out_channels(self) -> int:
        return len(self.schemes) * self.channels

    def scheme_outputs(self, m: ModalFeatures) -> SchemeOutputs:
        outs = {}
        if "cb" in self.schemes:
            outs["cb"] = fuse_cb(m, self.cb)
        if "sv" in self.schemes:
            outs["sv"] = fuse_sv(m, self.sv)
        if "ic" in self.schemes:
            outs["ic"] = fuse_ic(m, self.ic_inner, self.ic_outer)
        if "li" in self.schemes:
            outs["li"] = fuse_li(m, self.li_gate)[1]
        if "td" in self.schemes:
            outs["td"] = fuse_td(m, self.td_gate)[1]
        ordered = [outs[name] for name in self.schemes]
        cat = concat_channels(ordered) if len(ordered) > 1 else ordered[0]
        zero = Tensor(np.zeros_like(m.f_r.data))
        return SchemeOutputs(
            f_cb=outs.get("cb", zero),
            f_sv=outs.get("sv", zero),
            f_ic=outs.get("ic", zero),
            f_li=outs.get("li", zero),
            f_td=outs.get("td", zero),
            f_cat5=cat,
        )

    def __call__(self, m: ModalFeatures) -> tuple[BankOutput, EnsembleWeights | None]:
        s = self.scheme_outputs(m)
        if not self.use_aem:
            return BankOutput(s.f_cat5), None
        weights, out = aem(s, self.aem_avg, self.aem_max, self.schemes)
        return out, weights
