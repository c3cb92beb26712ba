"""Diverse image colourisation from a colour-field VAE and a mixture density network.

Typical flow: :func:`train_vae` learns a low-dimensional embedding of ab
colour fields, :func:`train_mdn` learns a Gaussian mixture over those
embeddings conditioned on lightness, and :func:`sample_topk` plus
:func:`decode` turn the heaviest mixture modes back into colour fields.
"""

from .autograd import Tensor, no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .colorspace import AbHistogram, build_histogram, lab_to_rgb, pixel_weights, quantize, rgb_to_lab
from .corpus import CorpusManifest, ingest, load_split
from .errors import (
    CorruptCheckpointError,
    DataError,
    DimensionError,
    DivColorError,
    EmptyCorpusError,
    NumericalError,
    RankError,
    UsageError,
    VersionMismatchError,
)
from .gradcheck import check_gradients, run_suites
from .losses import LossWeights, loss_dec, loss_grad, loss_hist, loss_kl, loss_mah
from .mdn import GmmParams, MdnConfig, mdn_forward, mdn_loss_exact, mdn_loss_min, predict, sample_topk, train_mdn
from .metrics import EvalReport, diversity_variance, error_of_best, mae, weighted_mae
from .pca import PcaBasis, project, reconstruct
from .pca import fit as fit_pca
from .vae import ColorVae, VaeConfig, cvae_infer, decode, encode, train_vae

__all__ = [
    "AbHistogram", "Checkpoint", "ColorVae", "CorpusManifest", "CorruptCheckpointError", "DataError",
    "DimensionError", "DivColorError", "EmptyCorpusError", "EvalReport", "GmmParams", "LossWeights",
    "MdnConfig", "NumericalError", "PcaBasis", "RankError", "Tensor", "UsageError", "VaeConfig",
    "VersionMismatchError", "build_histogram", "check_gradients", "cvae_infer", "decode", "diversity_variance",
    "encode", "error_of_best", "fit_pca", "ingest", "lab_to_rgb", "load_checkpoint", "load_split", "loss_dec",
    "loss_grad", "loss_hist", "loss_kl", "loss_mah", "mae", "mdn_forward", "mdn_loss_exact", "mdn_loss_min",
    "no_grad", "pixel_weights", "predict", "project", "quantize", "reconstruct", "rgb_to_lab", "run_suites",
    "sample_topk", "save_checkpoint", "train_mdn", "train_vae", "weighted_mae",
]
