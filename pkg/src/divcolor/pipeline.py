"""Glue between trained models, checkpoints and the test-time flow.

Grey inputs to every network are lightness maps scaled to [-1, 1] by
:func:`divcolor.mdn.normalise_lightness`.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .checkpoint import Checkpoint
from .colorspace import AbHistogram
from .errors import DataError, UsageError
from .losses import LossWeights
from .mdn import MdnConfig, MdnHistory, MixtureDensityNetwork, normalise_lightness, predict, sample_topk
from .metrics import EvalReport, score_image
from .pca import PcaBasis
from .vae import ColorVae, VaeConfig, VaeRun, cvae_infer, decode, encode


def vae_checkpoint(run: VaeRun) -> Checkpoint:
    ckpt = Checkpoint(
        kind="cvae" if run.config.variant == "cvae" else "vae",
        config={"model": run.config.to_dict(), "weights": asdict(run.weights), "objective": run.objective},
        seed=run.seed,
        meta={"initial": run.history.initial, "epochs": run.history.epochs, "best_epoch": run.best_epoch},
    )
    ckpt.put_group("final", run.model.state_dict())
    ckpt.put_group("best", run.best_state)
    ckpt.put_basis(run.basis)
    ckpt.put_histogram(run.hist)
    return ckpt


def load_vae(ckpt: Checkpoint, which: str = "final") -> tuple[ColorVae, PcaBasis, AbHistogram]:
    if ckpt.kind not in ("vae", "cvae"):
        raise DataError(f"expected a vae or cvae checkpoint, got {ckpt.kind!r}")
    if which not in ("final", "best"):
        raise UsageError("which must be 'final' or 'best'")
    config = VaeConfig(**ckpt.config["model"])
    model = ColorVae(config, np.random.default_rng(0))
    try:
        model.load_state_dict(ckpt.group(which))
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint does not match its config: {exc}") from None
    model.eval()
    return model, ckpt.basis(), ckpt.histogram()


def vae_weights(ckpt: Checkpoint) -> LossWeights:
    return LossWeights(**ckpt.config["weights"])


def mdn_checkpoint(net: MixtureDensityNetwork, history: MdnHistory, seed: int) -> Checkpoint:
    ckpt = Checkpoint(kind="mdn", config={"model": net.config.to_dict()}, seed=seed, meta=asdict(history))
    ckpt.put_group("final", net.state_dict())
    return ckpt


def load_mdn(ckpt: Checkpoint) -> MixtureDensityNetwork:
    if ckpt.kind != "mdn":
        raise DataError(f"expected an mdn checkpoint, got {ckpt.kind!r}")
    net = MixtureDensityNetwork(MdnConfig(**ckpt.config["model"]), np.random.default_rng(0))
    try:
        net.load_state_dict(ckpt.group("final"))
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint does not match its config: {exc}") from None
    net.eval()
    return net


def vae_grey(model: ColorVae, lightness: np.ndarray) -> np.ndarray | None:
    return normalise_lightness(lightness) if model.config.uses_grey else None


def mdn_targets(model: ColorVae, fields: np.ndarray, lightness: np.ndarray) -> np.ndarray:
    """Encoder means used as regression targets for the MDN."""
    mu, _ = encode(model, fields, vae_grey(model, lightness))
    return mu


def check_compatible(model: ColorVae, net: MixtureDensityNetwork | None) -> None:
    if net is None:
        return
    if net.config.d != model.config.d:
        raise UsageError(f"MDN embeds d={net.config.d} but the VAE uses d={model.config.d}")
    if net.config.field_size != model.config.field_size:
        raise UsageError("MDN and VAE were trained at different field sizes")


def diverse_fields(model: ColorVae, net: MixtureDensityNetwork | None, lightness: np.ndarray, k: int,
                   seed: int = 0) -> list[np.ndarray]:
    """``k`` colour fields for one lightness map (S, S), most probable first.

    A conditional VAE samples and clusters its prior; otherwise the MDN's
    top-``k`` means are decoded.
    """
    grey = normalise_lightness(lightness)
    if model.config.variant == "cvae":
        return cvae_infer(model, grey, n_clusters=k, rng=np.random.default_rng(seed))
    if net is None:
        raise UsageError("a plain VAE needs an MDN to colourise")
    check_compatible(model, net)
    if k > net.config.components:
        raise UsageError(f"k={k} exceeds the MDN's {net.config.components} components")
    gmm = predict(net, grey[None]).item(0)
    z = np.stack(sample_topk(gmm, k))
    g = None if not model.config.uses_grey else np.broadcast_to(grey, (k,) + grey.shape)
    return list(decode(model, z, g))


def evaluate(model: ColorVae, net: MixtureDensityNetwork | None, hist: AbHistogram, names: list[str],
             lightness: np.ndarray, fields: np.ndarray, k: int = 5, seed: int = 0) -> EvalReport:
    """Reconstruction and diversity scores for every (lightness, field) pair."""
    grey = vae_grey(model, lightness)
    mu, _ = encode(model, fields, grey)
    recon = decode(model, mu, grey)
    images = []
    for i, name in enumerate(names):
        diverse = diverse_fields(model, net, lightness[i], k, seed)
        images.append(score_image(name, recon[i], diverse, fields[i], hist))
    return EvalReport.from_images(images)
