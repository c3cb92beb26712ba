"""Mixture density network mapping grey-level inputs to embedding mixtures.

The network is a small trainable grey encoder over the lightness channel
followed by a fully connected head emitting ``M * d`` component means and
``M`` mixture logits.  All components share one fixed spherical variance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .autograd import Tensor, as_tensor, first_nonfinite, no_grad
from .errors import DimensionError, NumericalError, UsageError
from .kmeans import kmeans_plus_plus
from .layers import ConvBlock, Linear, Module
from .optim import Adam

log = logging.getLogger(__name__)

DEFAULT_SIGMA_SQ = 0.1


@dataclass
class GmmParams:
    """Mixture weights ``pi`` (N, M), means ``mu`` (N, M, d), shared variance.

    A single (unbatched) mixture uses shapes (M,) and (M, d).
    """

    pi: Tensor
    mu: Tensor
    sigma_sq: float = DEFAULT_SIGMA_SQ
    log_pi: Tensor | None = None

    def __post_init__(self):
        self.pi, self.mu = as_tensor(self.pi), as_tensor(self.mu)
        if self.sigma_sq <= 0:
            raise ValueError("sigma_sq must be positive")
        if self.log_pi is None:
            self.log_pi = self.pi.log()

    @property
    def n_components(self) -> int:
        return self.pi.shape[-1]

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def batched(self) -> "GmmParams":
        if self.pi.ndim == 2:
            return self
        return GmmParams(self.pi.reshape(1, -1), self.mu.reshape((1,) + self.mu.shape),
                         self.sigma_sq, self.log_pi.reshape(1, -1))

    def item(self, i: int) -> "GmmParams":
        """Unbatched mixture for the i-th input, detached from the graph."""
        b = self.batched()
        return GmmParams(Tensor(b.pi.data[i]), Tensor(b.mu.data[i]), self.sigma_sq, Tensor(b.log_pi.data[i]))


def _prepare(params: GmmParams, z) -> tuple[GmmParams, Tensor]:
    params = params.batched()
    z = as_tensor(z)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    if z.shape[0] != params.mu.shape[0] or z.shape[1] != params.dim:
        raise DimensionError(f"embeddings {z.shape} do not match mixture means {params.mu.shape}")
    return params, z


def _sq_dist(params: GmmParams, z: Tensor) -> Tensor:
    n, d = z.shape
    diff = params.mu - z.reshape(n, 1, d)
    return diff.square().sum(axis=2)


def mdn_loss_exact(params: GmmParams, z) -> Tensor:
    """Negative log-likelihood of ``z`` under the mixture, via log-sum-exp."""
    params, z = _prepare(params, z)
    d = params.dim
    s2 = params.sigma_sq
    log_comp = params.log_pi - 0.5 * d * math.log(2.0 * math.pi * s2) - _sq_dist(params, z) / (2.0 * s2)
    return -F.logsumexp(log_comp, axis=1).sum() / z.shape[0]


def nearest_component(params: GmmParams, z) -> np.ndarray:
    """Index of the closest mean per input; ties go to the lowest index."""
    params, z = _prepare(params, z)
    return np.argmin(((params.mu.data - z.data[:, None, :]) ** 2).sum(axis=2), axis=1)


def mdn_loss_min(params: GmmParams, z) -> Tensor:
    """Loss of the single component whose mean is nearest ``z``.

    The selection is a constant of the graph, so only the chosen component's
    mean and the mixture logits receive gradient.
    """
    params, z = _prepare(params, z)
    n = z.shape[0]
    m = nearest_component(params, z)
    rows = np.arange(n)
    sq = _sq_dist(params, z)[rows, m]
    return (-params.log_pi[rows, m] + sq / (2.0 * params.sigma_sq)).sum() / n


def sample_topk(params: GmmParams, k: int = 5) -> list[np.ndarray]:
    """The ``k`` component means with the largest weights, heaviest first."""
    pi = np.asarray(as_tensor(params.pi).data)
    mu = np.asarray(as_tensor(params.mu).data)
    if pi.ndim != 1:
        raise DimensionError("sample_topk expects an unbatched mixture; use GmmParams.item(i)")
    if not 1 <= k <= len(pi):
        raise UsageError(f"k={k} must lie in [1, {len(pi)}]")
    order = np.argsort(-pi, kind="stable")[:k]
    return [mu[i].copy() for i in order]


# -- network ---------------------------------------------------------------


@dataclass
class MdnConfig:
    field_size: int = 16
    d: int = 8
    components: int = 8
    sigma_sq: float = DEFAULT_SIGMA_SQ
    grey_widths: tuple = (16, 32, 64)
    hidden: int = 128
    lr: float = 2e-4
    batch_size: int = 32
    init_means: str = "kmeans++"

    def __post_init__(self):
        self.grey_widths = tuple(self.grey_widths)
        if self.components < 1 or self.d < 1:
            raise UsageError("components and d must be positive")
        if self.sigma_sq <= 0:
            raise UsageError("sigma_sq must be positive")
        if self.init_means not in ("kmeans++", "random"):
            raise UsageError(f"unknown init_means {self.init_means!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grey_widths"] = list(self.grey_widths)
        return out


def normalise_lightness(lightness: np.ndarray) -> np.ndarray:
    """Map Lab lightness [0, 100] to [-1, 1]."""
    return np.asarray(lightness, dtype=np.float64) / 50.0 - 1.0


class MixtureDensityNetwork(Module):
    """Grey encoder (three stride-2 conv blocks) plus a two-layer head."""

    def __init__(self, config: MdnConfig, rng: np.random.Generator):
        self.config = config
        blocks = []
        size, channels = config.field_size, 1
        for width in config.grey_widths:
            blocks.append(ConvBlock(channels, width, 5, 2, F.same_padding(size, 5, 2), rng))
            size, channels = -(-size // 2), width
        self.blocks = blocks
        self.feature_dim = channels * size * size
        self.hidden = Linear(self.feature_dim, config.hidden, rng)
        self.head = Linear(config.hidden, config.components * config.d + config.components, rng)

    def features(self, grey) -> Tensor:
        h = as_tensor(grey)
        if h.ndim == 3:
            h = h.reshape(h.shape[0], 1, h.shape[1], h.shape[2])
        s = self.config.field_size
        if h.ndim != 4 or h.shape[1:] != (1, s, s):
            raise DimensionError(f"grey input must be (N, {s}, {s}), got {h.shape}")
        for block in self.blocks:
            h = block(h)
        return h.reshape(h.shape[0], -1)

    def __call__(self, grey) -> GmmParams:
        return mdn_forward(self, grey)


def mdn_forward(net: MixtureDensityNetwork, grey) -> GmmParams:
    """GMM parameters for a batch of normalised grey inputs (N, H, W)."""
    cfg = net.config
    h = F.relu(net.hidden(net.features(grey)))
    out = net.head(h)
    n, md = out.shape[0], cfg.components * cfg.d
    mu = out[:, :md].reshape(n, cfg.components, cfg.d)
    logits = out[:, md:]
    return GmmParams(F.softmax(logits, axis=1), mu, cfg.sigma_sq, F.log_softmax(logits, axis=1))


def init_means_from_targets(net: MixtureDensityNetwork, targets: np.ndarray, rng: np.random.Generator) -> None:
    """Seed the head's mean biases with k-means++ picks among the targets."""
    cfg = net.config
    targets = np.asarray(targets, dtype=np.float64)
    centers = kmeans_plus_plus(targets, min(cfg.components, len(targets)), rng)
    bias = net.head.bias.data.copy()
    bias[: centers.size] = centers.reshape(-1)
    net.head.bias.data = bias


@dataclass
class MdnHistory:
    losses: list = field(default_factory=list)
    usage: list = field(default_factory=list)
    dead: list = field(default_factory=list)


def train_mdn(grey: np.ndarray, targets: np.ndarray, config: MdnConfig, epochs: int | None = None,
              seed: int = 0, net: MixtureDensityNetwork | None = None,
              steps: int | None = None) -> tuple[MixtureDensityNetwork, MdnHistory]:
    """Fit the network with the nearest-component loss.

    ``grey`` holds normalised lightness maps (N, H, W) and ``targets`` the
    matching embeddings (N, d).  One step is one mini-batch; an epoch is one
    pass over the shuffled pairs.  Give either ``epochs`` or ``steps``.
    """
    grey = np.asarray(grey, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(grey) != len(targets):
        raise DimensionError("grey inputs and targets differ in count")
    if len(grey) == 0:
        raise UsageError("MDN training needs at least one pair")
    if (epochs is None) == (steps is None):
        raise UsageError("give exactly one of epochs and steps")
    if steps is None:
        steps = epochs * math.ceil(len(grey) / min(config.batch_size, len(grey)))
    rng = np.random.default_rng(seed)
    if net is None:
        net = MixtureDensityNetwork(config, rng)
        if config.init_means == "kmeans++":
            init_means_from_targets(net, targets, rng)
    # with a single pair, batch statistics are degenerate, so batch
    # normalisation stays at its initial identity transform
    batch_stats = len(grey) > 1
    net.train(batch_stats)
    opt = Adam(net.parameters(), lr=config.lr)
    history = MdnHistory()
    n = len(grey)
    batch = min(config.batch_size, n)
    step = 0
    epoch = 0
    while step < steps:
        order = rng.permutation(n)
        usage = np.zeros(config.components, dtype=np.int64)
        total, count = 0.0, 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            if batch_stats and len(idx) < 2:
                continue
            params = mdn_forward(net, grey[idx])
            loss = mdn_loss_min(params, targets[idx])
            if not np.isfinite(loss.data):
                bad = first_nonfinite(loss)
                raise NumericalError(f"non-finite MDN loss; first produced by {bad.op if bad else 'unknown'}")
            usage += np.bincount(nearest_component(params, targets[idx]), minlength=config.components)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
            step += 1
            if step >= steps:
                break
        epoch += 1
        mean_loss = total / max(count, 1)
        dead = [int(i) for i in np.flatnonzero(usage == 0)]
        history.losses.append(mean_loss)
        history.usage.append(usage.tolist())
        history.dead.append(dead)
        log.info("epoch=%d step=%d L_mdn=%.6g usage=%s", epoch, step, mean_loss, ",".join(map(str, usage)))
        if dead and config.components > 1:
            log.warning("epoch %d: components never selected: %s", epoch, dead)
    net.eval()
    return net, history


def predict(net: MixtureDensityNetwork, grey: np.ndarray) -> GmmParams:
    net.eval()
    with no_grad():
        return mdn_forward(net, np.asarray(grey, dtype=np.float64))
