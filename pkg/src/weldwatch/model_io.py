"""Versioned checkpoint bundle for all trained models.

File layout (little-endian): magic ``WLDM``, format version u32, metadata
JSON block (u64 length prefix), named f64 parameter arrays (u32 count, then
per array: u16 name length, utf-8 name, u8 ndim, u32 dims, raw data), and a
trailing CRC32 over everything after the magic. Loading a checkpoint back
reproduces parameters bit-identically on the same platform.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .continual import ParamStats, TaskSnapshot
from .features import Normalizer

MAGIC = b"WLDM"
FORMAT_VERSION = 1


class CorruptCheckpoint(Exception):
    pass


@dataclass
class ModelBundle:
    """Everything needed to serve predictions and continue training."""

    version: int
    ae_spec: nn.AutoencoderSpec
    clf_spec: nn.ClassifierSpec
    autoencoder: nn.ParamSet
    classifier: nn.ParamSet
    normalizer: Normalizer
    scaler: nn.ChannelScaler
    snapshots: list[TaskSnapshot] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def encoder(self) -> nn.Encoder:
        return nn.Encoder(self.autoencoder, self.ae_spec, self.scaler)


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + arr.tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint("truncated checkpoint file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))[0]


def _collect_arrays(bundle: ModelBundle) -> dict:
    arrays = {}
    for k, v in bundle.autoencoder.items():
        arrays[f"ae/{k}"] = v
    for k, v in bundle.classifier.items():
        arrays[f"clf/{k}"] = v
    for i, snap in enumerate(bundle.snapshots):
        for k, v in snap.theta.items():
            arrays[f"snap{i}/theta/{k}"] = v
        for k, v in snap.importance.items():
            arrays[f"snap{i}/imp/{k}"] = v
    return arrays


def checkpoint_save(bundle: ModelBundle, path: str) -> None:
    meta = {
        "model_version": bundle.version,
        "ae_spec": {"input_dim": bundle.ae_spec.input_dim,
                    "bottleneck": bundle.ae_spec.bottleneck,
                    "hidden": bundle.ae_spec.hidden},
        "clf_spec": {"input_dim": bundle.clf_spec.input_dim,
                     "hidden": bundle.clf_spec.hidden,
                     "classes": bundle.clf_spec.classes},
        "normalizer": bundle.normalizer.to_dict(),
        "scaler": bundle.scaler.to_dict(),
        "snapshots": [
            {"task_id": s.task_id, "param_stats": s.param_stats.to_dict()}
            for s in bundle.snapshots
        ],
        "metadata": bundle.metadata,
    }
    meta_b = json.dumps(meta).encode()
    body = struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<Q", len(meta_b)) + meta_b
    arrays = _collect_arrays(bundle)
    body += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        body += _pack_array(name, arr)
    body += struct.pack("<I", zlib.crc32(body))
    with open(path, "wb") as fp:
        fp.write(MAGIC + body)


def checkpoint_load(path: str) -> ModelBundle:
    with open(path, "rb") as fp:
        raw = fp.read()
    if raw[:4] != MAGIC:
        raise CorruptCheckpoint("bad magic")
    if len(raw) < 20:
        raise CorruptCheckpoint("truncated checkpoint file")
    body, tail = raw[4:-4], raw[-4:]
    if struct.unpack("<I", tail)[0] != zlib.crc32(body):
        raise CorruptCheckpoint("checksum mismatch (truncated or corrupted)")
    r = _Reader(body)
    fmt = r.u("<I")
    if fmt > FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format version {fmt} (supported <= {FORMAT_VERSION})")
    meta = json.loads(r.take(r.u("<Q")).decode())
    n_arrays = r.u("<I")
    arrays = {}
    for _ in range(n_arrays):
        name = r.take(r.u("<H")).decode()
        ndim = r.u("<B")
        shape = tuple(r.u("<I") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(count * 8), dtype="<f8").reshape(shape).copy()

    def sub(prefix: str) -> nn.ParamSet:
        plen = len(prefix)
        return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix)}

    snapshots = []
    for i, sm in enumerate(meta["snapshots"]):
        snapshots.append(TaskSnapshot(
            task_id=sm["task_id"],
            theta=sub(f"snap{i}/theta/"),
            importance=sub(f"snap{i}/imp/"),
            param_stats=ParamStats.from_dict(sm["param_stats"]),
        ))
    return ModelBundle(
        version=meta["model_version"],
        ae_spec=nn.AutoencoderSpec(**meta["ae_spec"]),
        clf_spec=nn.ClassifierSpec(**meta["clf_spec"]),
        autoencoder=sub("ae/"),
        classifier=sub("clf/"),
        normalizer=Normalizer.from_dict(meta["normalizer"]),
        scaler=nn.ChannelScaler.from_dict(meta["scaler"]),
        snapshots=snapshots,
        metadata=meta.get("metadata", {}),
    )
