"""Colour-field VAE, its conditional (CVAE) variant and the training loop.

Layer pattern at field size S (full scale S = 64):

* encoder: four conv blocks (kernels 5, 5, 5, 4; stride 2 while the map is
  larger than 1x1) followed by two fully connected heads for mu and logvar;
* decoder: five stages of bilinear up-sampling and stride-1 convolution
  (kernels 4, 5, 5, 5, 5), the last one with tanh and two output channels.

Channel widths default to (128, 256, 512, 1024) * S / 64.  With a grey
encoder attached (``variant="cvae"`` or ``skip=True``), its intermediate
maps are concatenated into the decoder at matching resolutions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .autograd import Tensor, as_tensor, concat, first_nonfinite, no_grad
from .colorspace import AbHistogram, build_histogram
from .errors import DimensionError, NumericalError, RankError, UsageError
from .kmeans import kmeans
from .layers import ConvBlock, Conv2d, Linear, Module
from .losses import LossWeights, decoder_loss_terms, loss_kl, loss_l2
from .optim import Adam
from .pca import DEFAULT_K, PcaBasis
from .pca import fit as fit_pca

log = logging.getLogger(__name__)

ENCODER_KERNELS = (5, 5, 5, 4)
DECODER_KERNELS = (4, 5, 5, 5, 5)
FULL_WIDTHS = (128, 256, 512, 1024)


@dataclass
class VaeConfig:
    field_size: int = 16
    d: int = 8
    channel_widths: tuple | None = None
    variant: str = "plain"
    skip: bool = False
    lr: float = 2e-4
    batch_size: int = 32
    pca_k: int = DEFAULT_K

    def __post_init__(self):
        s = self.field_size
        if s < 8 or s & (s - 1):
            raise UsageError(f"field_size must be a power of two >= 8, got {s}")
        if self.d < 1:
            raise UsageError("d must be at least 1")
        if self.variant not in ("plain", "cvae"):
            raise UsageError(f"unknown variant {self.variant!r}")
        if self.channel_widths is None:
            self.channel_widths = tuple(max(1, w * s // 64) for w in FULL_WIDTHS)
        self.channel_widths = tuple(int(w) for w in self.channel_widths)
        if len(self.channel_widths) != 4:
            raise UsageError("channel_widths needs four entries")
        if self.batch_size < 2:
            raise UsageError("batch_size must be at least 2 (batch normalisation)")

    @property
    def uses_grey(self) -> bool:
        return self.variant == "cvae" or self.skip

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channel_widths"] = list(self.channel_widths)
        return out


def encoder_strides(field_size: int) -> list[int]:
    strides, size = [], field_size
    for _ in ENCODER_KERNELS:
        strides.append(2 if size > 1 else 1)
        size = -(-size // strides[-1])
    return strides


def encoder_extents(field_size: int) -> list[int]:
    """Spatial extent after each encoder conv block."""
    sizes, size = [], field_size
    for k, s in zip(ENCODER_KERNELS, encoder_strides(field_size)):
        size = F.conv_output_size(size, k, s, F.same_padding(size, k, s))
        sizes.append(size)
    return sizes


def decoder_factors(field_size: int) -> list[int]:
    """Up-sampling factor per decoder stage; trailing stages double."""
    factors, remaining = [1] * len(DECODER_KERNELS), field_size
    for i in range(len(factors) - 1, 0, -1):
        if remaining > 1:
            factors[i] = 2
            remaining //= 2
    factors[0] = remaining
    return factors


def decoder_extents(field_size: int) -> list[int]:
    sizes, size = [1], 1
    for f in decoder_factors(field_size):
        size *= f
        sizes.append(size)
    return sizes


class Encoder(Module):
    def __init__(self, in_channels: int, config: VaeConfig, rng: np.random.Generator):
        blocks, size, channels = [], config.field_size, in_channels
        for k, s, w in zip(ENCODER_KERNELS, encoder_strides(config.field_size), config.channel_widths):
            pad = F.same_padding(size, k, s)
            blocks.append(ConvBlock(channels, w, k, s, pad, rng))
            size, channels = F.conv_output_size(size, k, s, pad), w
        self.blocks = blocks
        flat = channels * size * size
        self.fc_mu = Linear(flat, config.d, rng)
        self.fc_logvar = Linear(flat, config.d, rng)

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        h = x
        for block in self.blocks:
            h = block(h)
        h = h.reshape(h.shape[0], -1)
        return self.fc_mu(h), self.fc_logvar(h)


class GreyEncoder(Module):
    """Three conv blocks then a plain ReLU conv down to ``d`` channels."""

    def __init__(self, config: VaeConfig, rng: np.random.Generator):
        widths = list(config.channel_widths[:3]) + [config.d]
        blocks, size, channels = [], config.field_size, 1
        for i, (k, s, w) in enumerate(zip(ENCODER_KERNELS, encoder_strides(config.field_size), widths)):
            pad = F.same_padding(size, k, s)
            blocks.append(ConvBlock(channels, w, k, s, pad, rng, norm=i < 3))
            size, channels = F.conv_output_size(size, k, s, pad), w
        self.blocks = blocks

    def __call__(self, grey) -> list[Tensor]:
        """Every block's output, finest first."""
        outs, h = [], grey
        for block in self.blocks:
            h = block(h)
            outs.append(h)
        return outs


class Decoder(Module):
    def __init__(self, config: VaeConfig, rng: np.random.Generator):
        self.config = config
        self.factors = decoder_factors(config.field_size)
        widths = list(reversed(config.channel_widths)) + [2]
        grey_extents = encoder_extents(config.field_size)
        grey_widths = list(config.channel_widths[:3])
        stages, channels, size = [], config.d, 1
        self.skip_sources: list[int | None] = []
        for i, (f, k, w) in enumerate(zip(self.factors, DECODER_KERNELS, widths)):
            size *= f
            src = None
            if config.skip and i > 0 and size in grey_extents[:3]:
                src = grey_extents.index(size)
                channels += grey_widths[src]
            self.skip_sources.append(src)
            pad = F.same_padding(size, k, 1)
            last = i == len(self.factors) - 1
            stages.append(Conv2d(channels, w, k, 1, pad, rng) if last else ConvBlock(channels, w, k, 1, pad, rng))
            channels = w
        self.stages = stages

    def __call__(self, z, grey_maps: list[Tensor] | None = None) -> Tensor:
        """Decode (N, d) embeddings to (N, H, W, 2) colour fields.

        ``grey_maps`` are the grey encoder outputs; the coarsest one scales
        the spatially replicated embedding, the others feed skip links.
        """
        z = as_tensor(z)
        n, d = z.shape
        if grey_maps is not None and self.config.variant == "cvae":
            coarse = grey_maps[-1]
            h = F.replicate_spatial(z, coarse.shape[2], coarse.shape[3]) * coarse
        else:
            h = F.bilinear_upsample(z.reshape(n, d, 1, 1), self.factors[0])
        for i, stage in enumerate(self.stages):
            if i > 0:
                h = F.bilinear_upsample(h, self.factors[i])
            src = self.skip_sources[i]
            if src is not None:
                if grey_maps is None:
                    raise UsageError("this decoder has skip connections and needs grey input")
                h = concat([h, grey_maps[src]], axis=1)
            h = stage(h)
        return F.tanh(h).transpose(0, 2, 3, 1)


class ColorVae(Module):
    def __init__(self, config: VaeConfig, rng: np.random.Generator):
        self.config = config
        self.encoder = Encoder(3 if config.variant == "cvae" else 2, config, rng)
        self.decoder = Decoder(config, rng)
        self.grey_encoder = GreyEncoder(config, rng) if config.uses_grey else None

    def _check(self, fields: np.ndarray) -> None:
        s = self.config.field_size
        if fields.ndim != 4 or fields.shape[1:] != (s, s, 2):
            raise DimensionError(f"colour fields {fields.shape} do not match geometry ({s}, {s}, 2)")

    def grey_maps(self, grey) -> list[Tensor] | None:
        if self.grey_encoder is None:
            return None
        if grey is None:
            raise UsageError(f"variant {self.config.variant!r} (skip={self.config.skip}) needs grey input")
        g = np.asarray(grey, dtype=np.float64)
        return self.grey_encoder(g.reshape(g.shape[0], 1, g.shape[1], g.shape[2]))

    def encode(self, fields, grey=None) -> tuple[Tensor, Tensor]:
        fields = np.asarray(fields, dtype=np.float64)
        self._check(fields)
        x = fields.transpose(0, 3, 1, 2)
        if self.config.variant == "cvae":
            if grey is None:
                raise UsageError("the cvae encoder needs grey input")
            x = np.concatenate([x, np.asarray(grey, dtype=np.float64)[:, None]], axis=1)
        return self.encoder(x)

    def decode(self, z, grey=None, grey_maps=None) -> Tensor:
        if grey_maps is None:
            grey_maps = self.grey_maps(grey)
        return self.decoder(z, grey_maps)


def reparameterize(mu, logvar, rng: np.random.Generator) -> Tensor:
    """Draw z = mu + exp(logvar / 2) * eps with eps from ``rng``."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    eps = rng.standard_normal(mu.shape)
    return mu + (logvar * 0.5).exp() * eps


def encode(model: ColorVae, fields, grey=None) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode (mu, logvar) for a batch or a single field."""
    fields = np.asarray(fields, dtype=np.float64)
    single = fields.ndim == 3
    if single:
        fields = fields[None]
        grey = None if grey is None else np.asarray(grey)[None]
    model.eval()
    with no_grad():
        mu, logvar = model.encode(fields, grey)
    if single:
        return mu.data[0], logvar.data[0]
    return mu.data, logvar.data


def decode(model: ColorVae, z, grey=None) -> np.ndarray:
    """Inference-mode colour fields for a batch or a single embedding."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None]
        grey = None if grey is None else np.asarray(grey)[None]
    model.eval()
    with no_grad():
        out = model.decode(z, grey).data
    return out[0] if single else out


# -- training -----------------------------------------------------------------


@dataclass
class VaeHistory:
    initial: dict = field(default_factory=dict)
    epochs: list = field(default_factory=list)


@dataclass
class VaeRun:
    """Outcome of :func:`train_vae`: the final model and the best epoch's state."""

    model: ColorVae
    config: VaeConfig
    weights: LossWeights
    basis: PcaBasis
    hist: AbHistogram
    history: VaeHistory
    best_state: dict
    best_epoch: int
    seed: int
    objective: str = "dec"


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    parts = max(1, math.ceil(n / batch_size))
    return [p for p in np.array_split(order, parts) if len(p)]


def _step_terms(model: ColorVae, fields: np.ndarray, grey, basis, hist, weights, objective, rng):
    mu, logvar = model.encode(fields, grey)
    z = reparameterize(mu, logvar, rng)
    pred = model.decode(z, grey)
    terms = decoder_loss_terms(pred, fields, basis, hist, weights)
    terms["KL"] = loss_kl(mu, logvar)
    if objective == "l2":
        terms["L_l2"] = loss_l2(pred, fields)
        rec = terms["L_l2"]
    else:
        rec = terms["L_dec"]
    terms["total"] = rec + weights.kl_weight * terms["KL"]
    return terms


def _fit_basis(fields: np.ndarray, k: int) -> PcaBasis:
    if len(fields) < 2:
        raise RankError("a PCA basis needs at least two fields; pass one fitted elsewhere", 0)
    k = min(k, len(fields) - 1, fields[0].size)
    try:
        return fit_pca(fields, k)
    except RankError as exc:
        if exc.attainable < 1:
            raise
        log.warning("PCA rank deficient; using k=%d instead of %d", exc.attainable, k)
        return fit_pca(fields, exc.attainable)


def _log_record(epoch, record: dict) -> None:
    keys = [k for k in ("L_hist", "L_mah", "L_grad", "L_dec", "KL", "total") if k in record]
    log.info("epoch=%d %s", epoch, " ".join(f"{k}={record[k]:.6g}" for k in keys))


def train_vae(fields: np.ndarray, config: VaeConfig, weights: LossWeights | None = None,
              epochs: int = 10, seed: int = 0, basis: PcaBasis | None = None,
              hist: AbHistogram | None = None, grey: np.ndarray | None = None,
              objective: str = "dec") -> VaeRun:
    """Minimise decoder loss plus weighted KL over ``fields`` (N, H, W, 2).

    ``objective="l2"`` swaps the decoder loss for plain squared error (the
    baseline); the decoder-loss terms are still logged.  When ``basis`` or
    ``hist`` are omitted they are fitted on ``fields``.
    """
    weights = weights or LossWeights()
    if objective not in ("dec", "l2"):
        raise UsageError(f"unknown objective {objective!r}")
    fields = np.asarray(fields, dtype=np.float64)
    if len(fields) == 0:
        raise UsageError("empty training corpus")
    if config.uses_grey and grey is None:
        raise UsageError("this configuration needs grey inputs for training")
    # one example carries no batch statistics: keep batch norm at its
    # initial identity transform so training and inference agree
    batch_stats = len(fields) > 1
    grey = None if grey is None else np.asarray(grey, dtype=np.float64)
    if basis is None:
        basis = _fit_basis(fields, config.pca_k)
    if hist is None:
        hist = build_histogram(fields)

    rng = np.random.default_rng(seed)
    model = ColorVae(config, rng)
    opt = Adam(model.parameters(), lr=config.lr)
    history = VaeHistory()
    n = len(fields)

    model.train(batch_stats)
    saved = model.state_dict()
    initial = {}
    for idx in _batches(n, config.batch_size, np.random.default_rng(seed + 1)):
        with no_grad():
            terms = _step_terms(model, fields[idx], None if grey is None else grey[idx], basis, hist,
                                weights, objective, np.random.default_rng(seed + 2))
        for k, v in terms.items():
            initial[k] = initial.get(k, 0.0) + v.item() * len(idx) / n
    model.load_state_dict(saved)
    history.initial = initial

    best_total, best_state, best_epoch = np.inf, model.state_dict(), 0
    for epoch in range(1, epochs + 1):
        record: dict[str, float] = {}
        for idx in _batches(n, config.batch_size, rng):
            terms = _step_terms(model, fields[idx], None if grey is None else grey[idx], basis, hist,
                                weights, objective, rng)
            total = terms["total"]
            if not np.isfinite(total.data):
                bad = first_nonfinite(total)
                raise NumericalError(
                    f"non-finite loss in epoch {epoch}; first produced by {bad.op if bad else 'unknown'} node"
                )
            opt.zero_grad()
            total.backward()
            opt.step()
            for k, v in terms.items():
                record[k] = record.get(k, 0.0) + v.item() * len(idx) / n
        history.epochs.append(record)
        _log_record(epoch, record)
        if record["total"] < best_total:
            best_total, best_state, best_epoch = record["total"], model.state_dict(), epoch
    model.eval()
    return VaeRun(model, config, weights, basis, hist, history, best_state, best_epoch, seed, objective)


# -- conditional sampling -----------------------------------------------------------


def cvae_infer(model: ColorVae, grey: np.ndarray, n_samples: int = 256, n_clusters: int = 5,
               rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Decode random embeddings for one grey input and cluster the results.

    Returns the cluster centres as colour fields, largest cluster first
    (ties broken by the earliest sample in the cluster).
    """
    if not model.config.uses_grey:
        raise UsageError("cvae_infer needs a model with a grey encoder")
    if not 1 <= n_clusters <= n_samples:
        raise UsageError("need 1 <= n_clusters <= n_samples")
    rng = rng if rng is not None else np.random.default_rng(0)
    grey = np.asarray(grey, dtype=np.float64)
    z = rng.standard_normal((n_samples, model.config.d))
    fields = decode(model, z, np.broadcast_to(grey, (n_samples,) + grey.shape))
    return cluster_fields(fields, n_clusters, rng)


def cluster_fields(fields: np.ndarray, n_clusters: int, rng: np.random.Generator) -> list[np.ndarray]:
    centers, labels = kmeans(fields, n_clusters, rng)
    sizes = np.bincount(labels, minlength=n_clusters)
    first = [int(np.flatnonzero(labels == j)[0]) if sizes[j] else len(labels) for j in range(n_clusters)]
    order = sorted(range(n_clusters), key=lambda j: (-sizes[j], first[j]))
    return [centers[j] for j in order]
