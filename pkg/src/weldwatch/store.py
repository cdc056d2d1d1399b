"""Append-optimized persistence for weld series, records and models.

Series files are chunked binary: a small header, then frames of up to 65536
interleaved (current, voltage) float32 pairs, each frame protected by a
CRC32. Full frames have a fixed byte size, so range queries seek straight
to the first relevant chunk. A JSON record index maps weld ids to files,
process parameters and labels; a JSON registry tracks checkpoint versions
with exactly one active model.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model_io import ModelBundle, checkpoint_load
from .signal import ProcessParams, QualityLabel, WeldRecord, WeldSeries

SERIES_MAGIC = b"WLDS"
SERIES_VERSION = 1
CHUNK_PAIRS = 65536
DATA_DIR_ENV = "WELDWATCH_DATA_DIR"


class IoFailure(Exception):
    pass


class IdCollision(Exception):
    pass


class UnknownWeld(Exception):
    pass


class RangeOutOfBounds(Exception):
    pass


class UnknownVersion(Exception):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# Series files


def _header_bytes(weld_id: str, rate: float, start_index: int) -> bytes:
    wid = weld_id.encode()
    return (SERIES_MAGIC + struct.pack("<I", SERIES_VERSION)
            + struct.pack("<H", len(wid)) + wid
            + struct.pack("<dIQ", rate, 2, start_index))


def _read_header(fp) -> tuple[str, float, int, int]:
    magic = fp.read(4)
    if magic != SERIES_MAGIC:
        raise IoFailure("bad series magic")
    version = struct.unpack("<I", fp.read(4))[0]
    if version > SERIES_VERSION:
        raise IoFailure(f"unsupported series version {version}")
    (wlen,) = struct.unpack("<H", fp.read(2))
    weld_id = fp.read(wlen).decode()
    rate, channels, start_index = struct.unpack("<dIQ", fp.read(20))
    if channels != 2:
        raise IoFailure(f"expected 2 channels, got {channels}")
    return weld_id, rate, start_index, fp.tell()


class SeriesWriter:
    """Single-writer append stream; partial chunks buffer until close."""

    def __init__(self, path: str, weld_id: str, sample_rate_hz: float, start_index: int = 0):
        self.path = path
        self._pending = np.zeros((0, 2), dtype="<f4")
        self._written_pairs = 0
        self._fp = open(path, "wb")
        self._fp.write(_header_bytes(weld_id, sample_rate_hz, start_index))

    def append(self, current: np.ndarray, voltage: np.ndarray) -> int:
        """Append one channel-aligned chunk; returns total pairs written or buffered."""
        if len(current) != len(voltage):
            raise IoFailure("channel-misaligned append")
        pairs = np.stack([current, voltage], axis=1).astype("<f4")
        self._pending = np.concatenate([self._pending, pairs])
        while len(self._pending) >= CHUNK_PAIRS:
            self._flush_chunk(self._pending[:CHUNK_PAIRS])
            self._pending = self._pending[CHUNK_PAIRS:]
        return self._written_pairs + len(self._pending)

    def _flush_chunk(self, pairs: np.ndarray) -> None:
        payload = pairs.tobytes()
        frame = struct.pack("<I", len(pairs)) + payload
        frame += struct.pack("<I", zlib.crc32(frame))
        self._fp.write(frame)
        self._written_pairs += len(pairs)

    def close(self) -> int:
        if len(self._pending):
            self._flush_chunk(self._pending)
            self._pending = self._pending[:0]
        self._fp.flush()
        os.fsync(self._fp.fileno())
        self._fp.close()
        return self._written_pairs


@dataclass
class SeriesReadResult:
    series: WeldSeries
    total_pairs: int
    corrupt_chunks: int  # trailing chunks dropped by CRC/truncation


def read_series(path: str, start: Optional[int] = None, end: Optional[int] = None) -> SeriesReadResult:
    """Read a slice [start, end) of a series file, validating chunk CRCs.

    A truncated or corrupted trailing chunk is discarded and counted in the
    result; data before it is returned intact.
    """
    with open(path, "rb") as fp:
        weld_id, rate, start_index, header_len = _read_header(fp)
        fp.seek(0, os.SEEK_END)
        file_len = fp.tell()

        full_frame = 4 + CHUNK_PAIRS * 8 + 4
        # fast path: seek over full frames that precede the requested range
        skip_chunks = 0
        if start is not None and start >= CHUNK_PAIRS:
            skip_chunks = start // CHUNK_PAIRS
            max_full = max(0, (file_len - header_len) // full_frame)
            skip_chunks = min(skip_chunks, max_full)
        pos = header_len + skip_chunks * full_frame
        fp.seek(pos)

        chunks = []
        pairs_before = skip_chunks * CHUNK_PAIRS
        total = pairs_before
        corrupt = 0
        while True:
            head = fp.read(4)
            if len(head) == 0:
                break
            if len(head) < 4:
                corrupt += 1
                break
            (count,) = struct.unpack("<I", head)
            payload = fp.read(count * 8)
            crc_b = fp.read(4)
            if len(payload) < count * 8 or len(crc_b) < 4:
                corrupt += 1
                break
            if struct.unpack("<I", crc_b)[0] != zlib.crc32(head + payload):
                corrupt += 1
                break
            chunks.append(np.frombuffer(payload, dtype="<f4").reshape(-1, 2))
            total += count
            if end is not None and total >= end:
                # count the rest without validating payloads we don't need
                rest = fp.read()
                off = 0
                while off + 4 <= len(rest):
                    (c,) = struct.unpack("<I", rest[off:off + 4])
                    if off + 4 + c * 8 + 4 > len(rest):
                        break
                    total += c
                    off += 4 + c * 8 + 4
                break

    data = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype="<f4")
    avail = pairs_before + len(data)
    s = 0 if start is None else start
    e = avail if end is None else end
    if s < pairs_before or e > avail or s > e:
        raise RangeOutOfBounds(f"requested [{s}, {e}) of {avail} stored samples")
    sl = data[s - pairs_before : e - pairs_before]
    series = WeldSeries(
        sample_rate_hz=rate,
        current=sl[:, 0].astype(np.float64),
        voltage=sl[:, 1].astype(np.float64),
        weld_id=weld_id,
        start_index=start_index + s,
    )
    return SeriesReadResult(series=series, total_pairs=total, corrupt_chunks=corrupt)


# ---------------------------------------------------------------------------
# Store directory: series + record index + model registry


class WeldStore:
    """All persistent state under one data directory.

    Layout: ``series/<weld_id>.wlds``, ``index.json``, ``models/<v>.ckpt``,
    ``registry.json``. One writer per weld; the JSON files are rewritten
    atomically (tmp + rename). Registry mutations are serialized by a lock
    and activation is atomic with respect to readers.
    """

    def __init__(self, root: str):
        self.root = root
        os.makedirs(os.path.join(root, "series"), exist_ok=True)
        os.makedirs(os.path.join(root, "models"), exist_ok=True)
        self._lock = threading.Lock()
        self._active_bundle: Optional[ModelBundle] = None

    # -- record index -------------------------------------------------------

    @property
    def _index_path(self) -> str:
        return os.path.join(self.root, "index.json")

    def _load_index(self) -> dict:
        if not os.path.exists(self._index_path):
            return {}
        with open(self._index_path) as fp:
            return json.load(fp)

    def _write_json(self, path: str, obj) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fp:
            json.dump(obj, fp, indent=1)
        os.replace(tmp, path)

    def series_path(self, weld_id: str) -> str:
        return os.path.join(self.root, "series", f"{weld_id}.wlds")

    def open_writer(self, weld_id: str, sample_rate_hz: float) -> SeriesWriter:
        index = self._load_index()
        if weld_id in index and index[weld_id].get("closed"):
            raise IdCollision(f"weld {weld_id!r} is closed for append")
        entry = index.get(weld_id, {"created_at": _now()})
        entry.update({
            "series_path": os.path.relpath(self.series_path(weld_id), self.root),
            "closed": False,
        })
        index[weld_id] = entry
        self._write_json(self._index_path, index)
        return SeriesWriter(self.series_path(weld_id), weld_id, sample_rate_hz)

    def close_weld(self, weld_id: str, writer: SeriesWriter,
                   params: Optional[ProcessParams] = None,
                   label: Optional[QualityLabel] = None) -> int:
        n = writer.close()
        index = self._load_index()
        entry = index.setdefault(weld_id, {"created_at": _now()})
        entry["closed"] = True
        entry["sample_count"] = n
        if params is not None:
            entry["params"] = params.to_dict()
        if label is not None:
            entry["label"] = label.value
        self._write_json(self._index_path, index)
        return n

    def record(self, weld_id: str) -> WeldRecord:
        index = self._load_index()
        if weld_id not in index:
            raise UnknownWeld(weld_id)
        e = index[weld_id]
        return WeldRecord(
            weld_id=weld_id,
            params=ProcessParams.from_dict(e.get("params", {})),
            label=QualityLabel(e["label"]) if "label" in e else None,
            series_path=os.path.join(self.root, e["series_path"]),
            sample_count=e.get("sample_count", 0),
            created_at=e.get("created_at", ""),
        )

    def weld_ids(self) -> list[str]:
        return sorted(self._load_index().keys())

    def query_range(self, weld_id: str, start: int, end: int) -> WeldSeries:
        path = self.series_path(weld_id)
        if not os.path.exists(path):
            raise UnknownWeld(weld_id)
        return read_series(path, start, end).series

    # -- model registry -----------------------------------------------------

    @property
    def _registry_path(self) -> str:
        return os.path.join(self.root, "registry.json")

    def _load_registry(self) -> dict:
        if not os.path.exists(self._registry_path):
            return {"entries": []}
        with open(self._registry_path) as fp:
            return json.load(fp)

    def register_model(self, checkpoint_path: str, task_summary: str = "") -> int:
        """Copy-free registration: records the path, assigns the next version."""
        with self._lock:
            reg = self._load_registry()
            version = 1 + max((e["version"] for e in reg["entries"]), default=0)
            reg["entries"].append({
                "version": version,
                "checkpoint_path": os.path.abspath(checkpoint_path),
                "task_summary": task_summary,
                "registered_at": _now(),
                "activated_at": None,
                "active": False,
            })
            self._write_json(self._registry_path, reg)
            return version

    def activate(self, version: int) -> None:
        with self._lock:
            reg = self._load_registry()
            entry = next((e for e in reg["entries"] if e["version"] == version), None)
            if entry is None:
                raise UnknownVersion(f"no registered model version {version}")
            bundle = checkpoint_load(entry["checkpoint_path"])
            bundle.metadata["registry_version"] = version
            for e in reg["entries"]:
                e["active"] = e["version"] == version
            entry["activated_at"] = _now()
            self._write_json(self._registry_path, reg)
            # single atomic reference swap; readers see old or new, never a mix
            self._active_bundle = bundle

    def active_model(self) -> Optional[ModelBundle]:
        bundle = self._active_bundle
        if bundle is None:
            reg = self._load_registry()
            entry = next((e for e in reg["entries"] if e["active"]), None)
            if entry is None:
                return None
            bundle = checkpoint_load(entry["checkpoint_path"])
            bundle.metadata["registry_version"] = entry["version"]
            self._active_bundle = bundle
        return bundle

    def active_version(self) -> Optional[int]:
        bundle = self.active_model()
        return None if bundle is None else bundle.metadata.get("registry_version")


def data_dir(cli_value: Optional[str] = None) -> str:
    """Resolve the data directory: CLI flag beats env beats ./weldwatch-data."""
    return cli_value or os.environ.get(DATA_DIR_ENV) or os.path.abspath("weldwatch-data")
