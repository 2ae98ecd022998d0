"""End-to-end saliency model and checkpoint I/O.

The encoder is a pair of identical-architecture five-stage strided conv
stacks with independent parameters, one per modality; each stage halves the
spatial extent, and the first stage's output is produced but not used beyond
feeding stage two (levels 2..5 are the working pyramid). Each level feeds a
fusion bank, the bank outputs pass through the guidance module, a simplified
receptive-field block widens each level's view, and a top-down decoder emits
one sigmoid saliency map per level upsampled to the input size. The level-2
map is the final prediction.

Ablation switches reproduce the standard component-removal experiments:
``no_afb`` feeds the plain channel concatenation of the two streams forward
(no bank parameters exist at all), ``no_aem`` keeps the schemes but drops the
ensemble weighting, ``no_iigm`` feeds bank outputs straight to the decoder,
and ``schemes`` restricts the bank to a subset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .bank import SCHEME_ORDER, EnsembleWeights, FusionBank, ModalFeatures
from .errors import ConfigurationError, ContractError, DimensionError
from .guidance import Guidance
from .modules import Conv2d, ConvBlock, Module
from .tensor import Tensor, add, bilinear_resize, concat_channels, relu, sigmoid

__all__ = [
    "EncoderConfig",
    "AblationFlags",
    "SaliencyOutputs",
    "EncoderStream",
    "Encoder",
    "ReceptiveFieldBlock",
    "Decoder",
    "SaliencyModel",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"FBNKCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    """Geometry of the two-stream encoder.

    ``channels`` are the widths of levels 2..5; the discarded level 1 uses
    half the level-2 width. Levels sit at strides 4, 8, 16, 32 relative to
    the input, so the input extent must be divisible by 32.
    """

    input_size: int = 64
    channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    decoder_width: int = 32

    def __post_init__(self):
        if self.input_size % 32 != 0:
            raise ConfigurationError(
                f"input_size must be divisible by 32, got {self.input_size}"
            )
        if len(self.channels) != 4:
            raise ConfigurationError("channels must list the widths of levels 2..5")

    @property
    def level1_channels(self) -> int:
        return max(1, self.channels[0] // 2)

    @property
    def strides(self) -> tuple[int, int, int, int]:
        return (4, 8, 16, 32)

    def level_extent(self, level: int) -> int:
        return self.input_size // self.strides[level - 2]


@dataclass
class SaliencyOutputs:
    """Per-level saliency maps at input resolution; s2 is the final one."""

    s2: Tensor
    s3: Tensor
    s4: Tensor
    s5: Tensor

    def as_dict(self) -> dict[int, Tensor]:
        return {2: self.s2, 3: self.s3, 4: self.s4, 5: self.s5}


class EncoderStream(Module):
    """Five strided conv-block stages for one modality."""

    def __init__(self, cfg: EncoderConfig, rng):
        widths = [cfg.level1_channels, *cfg.channels]
        stages = []
        in_c = 3
        for out_c in widths:
            stages.append(ConvBlock(in_c, out_c, 3, rng, stride=2, padding=1))
            in_c = out_c
        self.stages = stages

    def __call__(self, x: Tensor) -> dict[int, Tensor]:
        feats = {}
        cur = x
        for level, stage in enumerate(self.stages, start=1):
            cur = stage(cur)
            feats[level] = cur
        feats.pop(1)  # level-1 features are computed but not consumed downstream
        return feats


class Encoder(Module):
    """Two identical-architecture streams with independent parameters."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        self.rgb = EncoderStream(cfg, rng)
        self.aux = EncoderStream(cfg, rng)

    def __call__(self, rgb: Tensor, aux: Tensor) -> dict[int, ModalFeatures]:
        size = self.cfg.input_size
        for name, t in (("rgb", rgb), ("aux", aux)):
            if t.ndim != 4 or t.shape[1] != 3:
                raise DimensionError(f"{name} input must be [B,3,H,W], got {t.shape}")
            if t.shape[2] != size or t.shape[3] != size:
                raise DimensionError(
                    f"{name} input is {t.shape[2]}x{t.shape[3]}, encoder expects {size}x{size}"
                )
        fr = self.rgb(rgb)
        fa = self.aux(aux)
        return {i: ModalFeatures(level=i, f_r=fr[i], f_aux=fa[i]) for i in (2, 3, 4, 5)}


class ReceptiveFieldBlock(Module):
    """Simplified receptive-field block.

    Four parallel branches (1x1 conv block; 3x3 conv blocks at dilations 1, 3
    and 5) are concatenated and projected back to the decoder width with a
    1x1 conv; a 1x1 conv shortcut of the input is added and the sum passes
    through a final ReLU.
    """

    def __init__(self, in_channels: int, out_channels: int, rng):
        self.branch1 = ConvBlock(in_channels, out_channels, 1, rng)
        self.branch3_1 = ConvBlock(in_channels, out_channels, 3, rng, padding=1)
        self.branch3_3 = ConvBlock(in_channels, out_channels, 3, rng, padding=3, dilation=3)
        self.branch3_5 = ConvBlock(in_channels, out_channels, 3, rng, padding=5, dilation=5)
        self.project = Conv2d(4 * out_channels, out_channels, 1, rng)
        self.shortcut = Conv2d(in_channels, out_channels, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        branches = concat_channels([
            self.branch1(x),
            self.branch3_1(x),
            self.branch3_3(x),
            self.branch3_5(x),
        ])
        return relu(add(self.project(branches), self.shortcut(x)))


class Decoder(Module):
    """Receptive-field blocks per level plus top-down fusion and map heads."""

    def __init__(self, widths: dict[int, int], out_size: int, decoder_width: int, rng):
        d = decoder_width
        self.out_size = out_size
        self.rfb = {i: ReceptiveFieldBlock(widths[i], d, rng) for i in (2, 3, 4, 5)}
        self.fuse = {i: ConvBlock(2 * d, d, 3, rng, padding=1) for i in (2, 3, 4)}
        self.heads = {i: Conv2d(d, 1, 1, rng) for i in (2, 3, 4, 5)}

    def __call__(self, guided: dict[int, Tensor]) -> SaliencyOutputs:
        missing = [i for i in (2, 3, 4, 5) if i not in guided]
        if missing:
            raise ContractError(f"decoder is missing guided levels {missing}")
        d = {5: self.rfb[5](guided[5])}
        for i in (4, 3, 2):
            up = bilinear_resize(d[i + 1], guided[i].shape[2], guided[i].shape[3])
            d[i] = self.fuse[i](concat_channels([self.rfb[i](guided[i]), up]))
        maps = {}
        for i in (2, 3, 4, 5):
            maps[i] = bilinear_resize(sigmoid(self.heads[i](d[i])), self.out_size, self.out_size)
        return SaliencyOutputs(s2=maps[2], s3=maps[3], s4=maps[4], s5=maps[5])


@dataclass
class AblationFlags:
    no_afb: bool = False
    no_aem: bool = False
    no_iigm: bool = False
    schemes: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.schemes is not None:
            self.schemes = tuple(self.schemes)
            if not self.schemes:
                raise ConfigurationError("scheme subset must be non-empty")
        if self.no_afb and (self.no_aem or self.schemes is not None):
            raise ConfigurationError(
                "no_afb removes the fusion bank entirely; combining it with "
                "no_aem or a scheme subset is contradictory"
            )


class SaliencyModel(Module):
    """Encoder + fusion banks + guidance + decoder with ablation switches."""

    def __init__(self, cfg: EncoderConfig, rng, flags: AblationFlags | None = None):
        flags = flags or AblationFlags()
        self.cfg = cfg
        self.flags = flags
        self.encoder = Encoder(cfg, rng)
        if flags.no_afb:
            widths = {i: 2 * c for i, c in zip((2, 3, 4, 5), cfg.channels)}
        else:
            schemes = flags.schemes or SCHEME_ORDER
            self.banks = {
                i: FusionBank(c, rng, schemes=schemes, use_aem=not flags.no_aem)
                for i, c in zip((2, 3, 4, 5), cfg.channels)
            }
            widths = {i: self.banks[i].out_channels for i in (2, 3, 4, 5)}
        self.bank_widths = widths
        if not flags.no_iigm:
            self.guidance = Guidance(widths, rng)
        self.decoder = Decoder(widths, cfg.input_size, cfg.decoder_width, rng)

    def bank_outputs(self, rgb: Tensor, aux: Tensor
                     ) -> tuple[dict[int, Tensor], dict[int, EnsembleWeights]]:
        feats = self.encoder(rgb, aux)
        fbs: dict[int, Tensor] = {}
        weights: dict[int, EnsembleWeights] = {}
        for i in (2, 3, 4, 5):
            if self.flags.no_afb:
                fbs[i] = feats[i].f_cat
            else:
                out, w = self.banks[i](feats[i])
                fbs[i] = out.fb
                if w is not None:
                    weights[i] = w
        return fbs, weights

    def forward(self, rgb: Tensor, aux: Tensor
                ) -> tuple[SaliencyOutputs, dict[int, EnsembleWeights]]:
        fbs, weights = self.bank_outputs(rgb, aux)
        if self.flags.no_iigm:
            guided = fbs
        else:
            guided = self.guidance(fbs).levels
        return self.decoder(guided), weights

    def __call__(self, rgb: Tensor, aux: Tensor) -> SaliencyOutputs:
        return self.forward(rgb, aux)[0]

    def module_parameter_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for name, p in self.named_parameters():
            top = name.split(".")[0]
            counts[top] = counts.get(top, 0) + p.data.size
        for expected in ("banks", "guidance"):
            counts.setdefault(expected, 0)
        return counts


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: dict[str, np.ndarray], manifest: dict[str, str]) -> None:
    """Write a versioned binary container of named float64 tensors.

    The sidecar ``<path>.manifest.txt`` records the configuration and the
    per-module parameter counts in plain text.
    """
    path = str(path)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    with open(path + ".manifest.txt", "w") as f:
        for key, value in manifest.items():
            f.write(f"{key} = {value}\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = str(path)
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file (bad magic)")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape)
            params[name] = data.copy()
    manifest: dict[str, str] = {}
    try:
        with open(path + ".manifest.txt") as f:
            for line in f:
                line = line.strip()
                if line and "=" in line:
                    key, _, value = line.partition("=")
                    manifest[key.strip()] = value.strip()
    except FileNotFoundError:
        pass
    return params, manifest
