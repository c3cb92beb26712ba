"""Command line entry point: ``divcolor <subcommand> ...``.

Option values resolve as: command line flag, then the ``--config`` JSON file
(keys are the long flag names with dashes or underscores), then built-in
defaults.  Exit codes: 2 usage, 3 data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import MANIFEST_NAME, ingest, load_split
from .errors import DataError, DivColorError, UsageError
from .gradcheck import TOLERANCE, run_suites
from .imageio import center_crop, read_rgb, resize, resize_float, write_image
from .colorspace import grey_to_rgb, lab_to_rgb, rgb_to_lab
from .losses import LossWeights
from .mdn import MdnConfig, normalise_lightness, train_mdn
from .pipeline import (diverse_fields, evaluate, load_mdn, load_vae, mdn_checkpoint, mdn_targets,
                       vae_checkpoint, check_compatible)
from .vae import VaeConfig, train_vae

log = logging.getLogger("divcolor")

DEFAULTS = {
    "ingest": {"size": 16, "seed": 0, "test_frac": 0.2, "manifest": None},
    "train": {"d": 8, "epochs": 10, "lambda_mah": 0.1, "lambda_grad": 1e-3, "kl_weight": 1e-2, "seed": 0,
              "lr": 2e-4, "batch_size": 32, "pca_k": 20, "widths": None, "objective": "dec", "skip": False},
    "train-mdn": {"components": 8, "sigma_sq": 0.1, "epochs": 10, "seed": 0, "lr": 2e-4, "batch_size": 32,
                  "hidden": 128},
    "colorize": {"k": 5, "seed": 0},
    "eval": {"k": 5, "seed": 0},
    "gradcheck": {"module": "all", "trials": 100, "seed": 0},
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divcolor", description="Diverse colourisation: VAE embeddings plus an MDN.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of option defaults")
    sub = p.add_subparsers(dest="command", required=True)
    add = functools.partial(sub.add_parser, parents=[common])

    s = add("ingest", help="decode a directory of images into a manifest and field cache")
    s.add_argument("--dir", type=Path, required=True)
    s.add_argument("--size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--test-frac", type=float)
    s.add_argument("--manifest", type=Path, help=f"output path (default DIR/{MANIFEST_NAME})")

    for name in ("train-vae", "train-cvae"):
        s = add(name, help=f"train the {'conditional ' if name == 'train-cvae' else ''}colour-field VAE")
        s.add_argument("--corpus", type=Path, required=True, help="manifest written by ingest")
        s.add_argument("--d", type=int)
        s.add_argument("--epochs", type=int)
        s.add_argument("--lambda-mah", type=float)
        s.add_argument("--lambda-grad", type=float)
        s.add_argument("--kl-weight", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--pca-k", type=int)
        s.add_argument("--widths", type=str, help="four comma-separated encoder channel widths")
        s.add_argument("--objective", choices=("dec", "l2"))
        s.add_argument("--skip", action=argparse.BooleanOptionalAction, default=None,
                       help="grey-encoder skip connections into the decoder")
        s.add_argument("--out", type=Path, required=True)

    s = add("train-mdn", help="fit the mixture density network on frozen VAE embeddings")
    s.add_argument("--corpus", type=Path, required=True)
    s.add_argument("--vae", type=Path, required=True)
    s.add_argument("--components", type=int)
    s.add_argument("--sigma-sq", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--out", type=Path, required=True)

    s = add("colorize", help="write k diverse colourisations of one image plus a grid")
    s.add_argument("--vae", type=Path, required=True)
    s.add_argument("--mdn", type=Path, help="required unless the VAE checkpoint is a cvae")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", type=Path, required=True)

    s = add("eval", help="score the test split and write a per-image CSV")
    s.add_argument("--vae", type=Path, required=True)
    s.add_argument("--mdn", type=Path)
    s.add_argument("--corpus", type=Path, required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", type=Path, required=True)

    s = add("gradcheck", help="finite-difference checks of every gradient")
    s.add_argument("--module", choices=("all", "conv", "losses", "mdn"))
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    return p


def resolve(args: argparse.Namespace, defaults: dict, config: dict) -> dict:
    """Flags over config file over defaults."""
    out = dict(defaults)
    for key in defaults:
        for spelling in (key, key.replace("_", "-")):
            if spelling in config:
                out[key] = config[spelling]
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _read_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


def _positive(opts: dict, *keys: str) -> None:
    for key in keys:
        if opts[key] is None or opts[key] <= 0:
            raise UsageError(f"--{key.replace('_', '-')} must be positive")


def _widths(text) -> tuple | None:
    if text is None or isinstance(text, (list, tuple)):
        return text
    try:
        return tuple(int(w) for w in str(text).split(","))
    except ValueError:
        raise UsageError(f"--widths expects integers, got {text!r}") from None


def _load(path: Path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"no such checkpoint: {path}") from None


# -- subcommands ---------------------------------------------------------------


def cmd_ingest(args, opts) -> int:
    _positive(opts, "size")
    manifest, stats = ingest(args.dir, opts["size"], opts["seed"], opts["test_frac"], opts["manifest"])
    n_test = len(manifest.names("test"))
    print(f"images={len(manifest.files)} train={len(manifest.files) - n_test} test={n_test} "
          f"decoded={stats.decoded} cached={stats.cached} skipped={len(stats.skipped)}")
    return 0


def cmd_train_vae(args, opts, variant: str) -> int:
    _positive(opts, "d", "epochs", "lr", "batch_size", "pca_k")
    if opts["objective"] not in ("dec", "l2"):
        raise UsageError("--objective must be dec or l2")
    weights = LossWeights(opts["lambda_mah"], opts["lambda_grad"], opts["kl_weight"])
    names, lightness, fields = load_split(args.corpus, "train")
    config = VaeConfig(field_size=fields.shape[1], d=opts["d"], channel_widths=_widths(opts["widths"]),
                       variant=variant, skip=bool(opts["skip"]), lr=opts["lr"], batch_size=opts["batch_size"],
                       pca_k=opts["pca_k"])
    grey = normalise_lightness(lightness) if config.uses_grey else None
    run = train_vae(fields, config, weights, opts["epochs"], opts["seed"], grey=grey, objective=opts["objective"])
    save_checkpoint(vae_checkpoint(run), args.out)
    print(f"saved {run.config.variant} checkpoint to {args.out} (best epoch {run.best_epoch})")
    return 0


def cmd_train_mdn(args, opts) -> int:
    _positive(opts, "components", "sigma_sq", "epochs", "lr", "batch_size", "hidden")
    vae, _, _ = load_vae(_load(args.vae))
    if vae.config.variant == "cvae":
        raise UsageError("the MDN is trained on a plain VAE's embeddings, not a cvae")
    names, lightness, fields = load_split(args.corpus, "train")
    if fields.shape[1] != vae.config.field_size:
        raise DataError("corpus field size differs from the VAE's")
    config = MdnConfig(field_size=vae.config.field_size, d=vae.config.d, components=opts["components"],
                       sigma_sq=opts["sigma_sq"], lr=opts["lr"], batch_size=opts["batch_size"],
                       hidden=opts["hidden"])
    targets = mdn_targets(vae, fields, lightness)
    net, history = train_mdn(normalise_lightness(lightness), targets, config, epochs=opts["epochs"],
                             seed=opts["seed"])
    save_checkpoint(mdn_checkpoint(net, history, opts["seed"]), args.out)
    print(f"saved mdn checkpoint to {args.out}")
    return 0


def _models(args):
    vae_ckpt = _load(args.vae)
    model, basis, hist = load_vae(vae_ckpt)
    net = None
    if args.mdn is not None:
        net = load_mdn(_load(args.mdn))
        check_compatible(model, net)
    elif model.config.variant != "cvae":
        raise UsageError("--mdn is required unless --vae is a cvae checkpoint")
    return model, net, hist


def cmd_colorize(args, opts) -> int:
    _positive(opts, "k")
    model, net, _ = _models(args)
    if net is not None and opts["k"] > net.config.components:
        raise UsageError(f"--k {opts['k']} exceeds the MDN's {net.config.components} components")
    rgb = center_crop(read_rgb(args.input))
    full_l, full_ab = rgb_to_lab(rgb)
    size = model.config.field_size
    lightness, _ = rgb_to_lab(resize(rgb, size))
    fields = diverse_fields(model, net, lightness, opts["k"], opts["seed"])
    args.out.mkdir(parents=True, exist_ok=True)
    side = rgb.shape[0]
    panels = [grey_to_rgb(full_l)]
    stem = args.input.stem
    for i, field in enumerate(fields):
        ab = np.stack([resize_float(field[..., c], side) for c in range(2)], axis=-1)
        out = lab_to_rgb(full_l, ab)
        write_image(args.out / f"{stem}_{i + 1}.png", out)
        panels.append(out)
    if np.abs(full_ab).max() > 1e-3:
        panels.append(rgb)
    write_image(args.out / f"{stem}_grid.png", np.concatenate(panels, axis=1))
    print(f"wrote {len(fields)} colourisations and a grid to {args.out}")
    return 0


def cmd_eval(args, opts) -> int:
    _positive(opts, "k")
    model, net, hist = _models(args)
    if net is not None and opts["k"] > net.config.components:
        raise UsageError(f"--k {opts['k']} exceeds the MDN's {net.config.components} components")
    names, lightness, fields = load_split(args.corpus, "test")
    if fields.shape[1] != model.config.field_size:
        raise DataError("corpus field size differs from the VAE's")
    report = evaluate(model, net, hist, names, lightness, fields, opts["k"], opts["seed"])
    args.out.write_text(report.to_csv())
    record = report.to_record()
    args.out.with_suffix(".txt").write_text(record)
    sys.stdout.write(record)
    return 0


def cmd_gradcheck(args, opts) -> int:
    _positive(opts, "trials")

    def show(res):
        status = "ok" if res.passed else "FAIL"
        print(f"{status:4s} {res.name:22s} trials={res.trials} max_rel_err={res.max_error:.3e} "
              f"time={res.seconds:.2f}s", flush=True)

    results = run_suites(opts["module"], opts["trials"], opts["seed"], report=show)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradcheck failed (tolerance {TOLERANCE:g}): {', '.join(failed)}")
        return 4
    print(f"all {len(results)} suites passed")
    return 0


class _InfoToStdout(logging.Filter):
    def filter(self, record):
        return record.levelno < logging.WARNING


def _log_handlers() -> list[logging.Handler]:
    out = logging.StreamHandler(sys.stdout)
    out.addFilter(_InfoToStdout())
    out.setFormatter(logging.Formatter("%(message)s"))
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(logging.WARNING)
    err.setFormatter(logging.Formatter("warning: %(message)s"))
    return [out, err]


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logger = logging.getLogger("divcolor")
    handlers = _log_handlers()
    for h in handlers:
        logger.addHandler(h)
    level = logger.level
    logger.setLevel(logging.INFO)
    try:
        config = _read_config(args.config)
        command = args.command
        key = "train" if command in ("train-vae", "train-cvae") else command
        opts = resolve(args, DEFAULTS[key], config)
        if command == "ingest":
            return cmd_ingest(args, opts)
        if command in ("train-vae", "train-cvae"):
            return cmd_train_vae(args, opts, "cvae" if command == "train-cvae" else "plain")
        if command == "train-mdn":
            return cmd_train_mdn(args, opts)
        if command == "colorize":
            return cmd_colorize(args, opts)
        if command == "eval":
            return cmd_eval(args, opts)
        return cmd_gradcheck(args, opts)
    except DivColorError as exc:
        print(f"divcolor: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # UsageError subclasses ValueError; anything else of that type is also the caller's input
        print(f"divcolor: error: {exc}", file=sys.stderr)
        return 2
    finally:
        for h in handlers:
            logger.removeHandler(h)
        logger.setLevel(level)


if __name__ == "__main__":
    sys.exit(main())
