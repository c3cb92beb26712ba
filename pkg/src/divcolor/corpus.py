"""Directory ingestion into a seeded train/test manifest with a field cache."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyCorpusError, UsageError
from .imageio import IMAGE_SUFFIXES, load_field

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class CorpusManifest:
    root: str
    field_size: int
    split_seed: int
    test_fraction: float
    files: list = field(default_factory=list)  # dicts: name, sha256, split
    cache: str = "fields.npz"

    def names(self, split: str | None = None) -> list[str]:
        return [f["name"] for f in self.files if split is None or f["split"] == split]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        try:
            return cls(**json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from None


@dataclass
class IngestStats:
    decoded: int = 0
    cached: int = 0
    skipped: list = field(default_factory=list)


def split_assignment(n: int, test_fraction: float, seed: int) -> np.ndarray:
    """Boolean mask of test items; reproducible from ``seed``."""
    if not 0.0 <= test_fraction < 1.0:
        raise UsageError("test fraction must lie in [0, 1)")
    n_test = int(round(test_fraction * n))
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng(seed).permutation(n)[:n_test]] = True
    return mask


def _cache_key(digest: str, field_size: int) -> str:
    return f"{digest}:{field_size}"


def _read_cache(path: Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    if not path.exists():
        return {}
    with np.load(path) as data:
        keys = [str(k) for k in data["keys"]]
        return {k: (data["lightness"][i], data["ab"][i]) for i, k in enumerate(keys)}


def ingest(directory, field_size: int = 16, split_seed: int = 0, test_fraction: float = 0.2,
           manifest_path=None) -> tuple[CorpusManifest, IngestStats]:
    """Decode every PPM/PNG in ``directory`` into cached colour fields.

    Files are keyed by content hash, so an unchanged rerun decodes nothing.
    Undecodable files are skipped with a warning.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    manifest_path = Path(manifest_path) if manifest_path else root / MANIFEST_NAME
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
    if not paths:
        raise EmptyCorpusError(f"no PPM or PNG images in {root}")

    cache_path = manifest_path.with_name(manifest_path.stem + ".fields.npz")
    cache = _read_cache(cache_path)
    stats = IngestStats()
    entries, lightness, ab, keys = [], [], [], []
    for path in paths:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        key = _cache_key(digest, field_size)
        if key in cache:
            stats.cached += 1
            l_chan, ab_chan = cache[key]
        else:
            try:
                l_chan, ab_chan = load_field(path, field_size)
            except DataError as exc:
                log.warning("skipping %s", exc)
                stats.skipped.append(path.name)
                continue
            stats.decoded += 1
        entries.append({"name": path.name, "sha256": digest})
        keys.append(key)
        lightness.append(np.asarray(l_chan, dtype=np.float32))
        ab.append(np.asarray(ab_chan, dtype=np.float32))
    if not entries:
        raise EmptyCorpusError(f"none of the images in {root} could be decoded")

    mask = split_assignment(len(entries), test_fraction, split_seed)
    for entry, is_test in zip(entries, mask):
        entry["split"] = "test" if is_test else "train"
    if stats.decoded or not cache_path.exists() or set(keys) != set(cache):
        np.savez(cache_path, keys=np.array(keys), lightness=np.stack(lightness), ab=np.stack(ab))
    manifest = CorpusManifest(
        root=str(root.resolve()),
        field_size=field_size,
        split_seed=split_seed,
        test_fraction=test_fraction,
        files=entries,
        cache=cache_path.name,
    )
    manifest.save(manifest_path)
    log.debug("ingested %d images (%d decoded, %d cached, %d skipped)", len(entries), stats.decoded,
             stats.cached, len(stats.skipped))
    return manifest, stats


def load_split(manifest_path, split: str | None = "train") -> tuple[list[str], np.ndarray, np.ndarray]:
    """(names, lightness N x H x W, ab N x H x W x 2) for one split, as float64."""
    manifest_path = Path(manifest_path)
    manifest = CorpusManifest.load(manifest_path)
    cache = _read_cache(manifest_path.with_name(manifest.cache))
    names, lightness, ab = [], [], []
    for entry in manifest.files:
        if split is not None and entry["split"] != split:
            continue
        key = _cache_key(entry["sha256"], manifest.field_size)
        if key not in cache:
            raise DataError(f"field cache is missing {entry['name']}; rerun ingest")
        names.append(entry["name"])
        lightness.append(cache[key][0])
        ab.append(cache[key][1])
    if not names:
        raise EmptyCorpusError(f"split {split!r} of {manifest_path} is empty")
    return names, np.asarray(lightness, dtype=np.float64), np.asarray(ab, dtype=np.float64)
