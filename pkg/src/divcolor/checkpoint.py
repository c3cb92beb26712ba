"""Versioned binary archive of named float64 tensors.

Layout (all integers little-endian)::

    b"DIVC"                    magic
    u32  version
    u32  header length H
    H bytes of UTF-8 JSON      kind, seed, config, meta, tensor table
    payload                    tensors back to back, float64 little-endian

The tensor table lists ``name``, ``shape`` and ``offset`` (relative to the
start of the payload) for every tensor, in storage order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .colorspace import AbHistogram
from .errors import CorruptCheckpointError, UsageError, VersionMismatchError
from .pca import PcaBasis

MAGIC = b"DIVC"
VERSION = 1
KINDS = ("vae", "cvae", "mdn")
_PREFIX = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict = field(default_factory=dict)
    seed: int | None = None
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown checkpoint kind {self.kind!r}")

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix/``, with the prefix stripped."""
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def put_group(self, prefix: str, tensors: dict[str, np.ndarray]) -> None:
        for k, v in tensors.items():
            self.tensors[f"{prefix}/{k}"] = np.asarray(v, dtype=np.float64)

    # embedded statistics -------------------------------------------------
    def put_basis(self, basis: PcaBasis) -> None:
        self.put_group("pca", {"mean": basis.mean, "components": basis.components, "sigmas": basis.sigmas})
        self.meta["pca_field_shape"] = list(basis.field_shape)

    def basis(self) -> PcaBasis:
        g = self.group("pca")
        return PcaBasis(g["mean"], g["components"], g["sigmas"], tuple(self.meta["pca_field_shape"]))

    def put_histogram(self, hist: AbHistogram) -> None:
        self.put_group("hist", {"counts": hist.counts})
        self.meta["hist_bin_size"] = hist.bin_size
        self.meta["hist_floor"] = hist.floor

    def histogram(self) -> AbHistogram:
        return AbHistogram(self.meta["hist_bin_size"], self.group("hist")["counts"], self.meta["hist_floor"])

    # serialisation -------------------------------------------------------
    def to_bytes(self) -> bytes:
        table, offset, chunks = [], 0, []
        for name, value in self.tensors.items():
            arr = np.array(value, dtype="<f8", order="C")  # keeps 0-d shapes
            table.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        header = {
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config,
            "meta": self.meta,
            "tensors": table,
            "payload_bytes": offset,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return _PREFIX.pack(MAGIC, self.version, len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < _PREFIX.size:
            raise CorruptCheckpointError("file shorter than the fixed prefix", len(data))
        magic, version, hlen = _PREFIX.unpack_from(data)
        if magic != MAGIC:
            raise CorruptCheckpointError(f"bad magic {magic!r}", 0)
        if version != VERSION:
            raise VersionMismatchError(version, VERSION)
        start = _PREFIX.size
        if len(data) < start + hlen:
            raise CorruptCheckpointError("header truncated", len(data))
        try:
            header = json.loads(data[start : start + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCheckpointError(f"unreadable header: {exc}", start) from None
        base = start + hlen
        expected_end = base + int(header.get("payload_bytes", 0))
        tensors, cursor = {}, 0
        for entry in header["tensors"]:
            shape = tuple(int(s) for s in entry["shape"])
            if any(s < 0 for s in shape):
                raise CorruptCheckpointError(f"negative extent in tensor {entry['name']!r}", start)
            if entry["offset"] != cursor:
                raise CorruptCheckpointError(f"tensor {entry['name']!r} is out of sequence", base + entry["offset"])
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if base + cursor + nbytes > len(data):
                raise CorruptCheckpointError(f"payload of tensor {entry['name']!r} truncated", len(data))
            tensors[entry["name"]] = np.frombuffer(data, dtype="<f8", count=nbytes // 8,
                                                   offset=base + cursor).reshape(shape).astype(np.float64)
            cursor += nbytes
        if base + cursor != expected_end or len(data) != expected_end:
            raise CorruptCheckpointError("payload length does not match the tensor table", min(len(data), expected_end))
        return cls(kind=header["kind"], config=header["config"], tensors=tensors, seed=header["seed"],
                   meta=header["meta"], version=version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())
