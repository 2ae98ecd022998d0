"""Desk-scale multi-modal salient object detection.

The package implements an adaptive bank of challenge-specific fusion schemes
with an ensemble weighting module, indirect cross-level guidance, a toy
two-stream encoder with a top-down decoder, the composite training loss, a
deterministic synthetic challenge dataset, and the standard saliency
evaluation measures, all on a from-scratch float64 autodiff engine.
"""

from .bank import (
    SCHEME_ORDER,
    BankOutput,
    EnsembleWeights,
    FusionBank,
    ModalFeatures,
    ModalityWeight,
    SchemeOutputs,
    aem,
    fuse_cb,
    fuse_ic,
    fuse_li,
    fuse_sv,
    fuse_td,
)
from .dataset import CHALLENGES, DatasetIndex, Sample, generate, load_index, load_sample
from .errors import (
    ConfigurationError,
    ContractError,
    DatasetError,
    DimensionError,
    FusionBankError,
)
from .guidance import Guidance, GuidanceGroup, GuidedPyramid, iigm_group
from .losses import LossReport, LossWeights, bce, dice, smoothness, total_loss
from .metrics import MetricReport, e_measure, evaluate_samples, f_measure, mae, weighted_f
from .modules import Conv2d, ConvBlock, Module
from .network import (
    AblationFlags,
    EncoderConfig,
    SaliencyModel,
    SaliencyOutputs,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import ConvParams, Tensor, bilinear_resize, conv2d, global_pool, gradcheck, no_grad
from .training import Adam, RunConfig, evaluate_model, predict, train

__version__ = "0.1.0"
