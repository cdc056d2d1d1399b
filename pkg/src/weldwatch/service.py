"""Online prediction service.

:class:`OnlineEngine` is the pure streaming core: it ingests sample chunks,
runs incremental segmentation over a bounded ring buffer, extracts features
for each completed cycle and emits a prediction every ``stride`` new valid
cycles once the first full window exists. Fed the same stream in any chunk
sizing it produces exactly the boundaries, features and logits of the batch
pipeline, because both share the segmentation state machine and the feature
code.

:class:`PredictionServer` wraps the engine with a live simulator source and
a newline-delimited JSON protocol on a TCP socket. Browser clients may
connect to the same port with a WebSocket handshake; messages are then the
same NDJSON payloads carried in text frames.
"""

from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
import os
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import features as F
from . import nn
from .continual import ContinualConfig, DriftAlert, continual_update, detect_drift
from .model_io import ModelBundle, checkpoint_save
from .signal import (CycleBoundary, CycleSegmenter, PhaseNotFound, ProcessParams,
                     SegmentationConfig, WeldSeries, split_phases)
from .simulator import SimConfig, WeldSimulator


class OutOfOrderChunk(Exception):
    pass


@dataclass
class Prediction:
    model_version: int
    first_cycle: int
    last_cycle: int
    p_ok: float
    label: str
    latency_ms: float
    matrix: Optional[np.ndarray] = None  # the normalized input window

    def to_message(self) -> dict:
        return {
            "type": "prediction",
            "model_version": self.model_version,
            "window": [self.first_cycle, self.last_cycle],
            "p_ok": self.p_ok,
            "label": self.label,
            "latency_ms": self.latency_ms,
        }


class OnlineEngine:
    """Incremental segmentation -> features -> classification.

    Memory is bounded: the raw ring buffer holds at most ``buffer_s`` seconds
    of samples, and the feature cache is trimmed to the cycles that future
    windows can still reference.
    """

    def __init__(
        self,
        bundle: ModelBundle,
        sample_rate_hz: float,
        seg_cfg: SegmentationConfig = SegmentationConfig(),
        buffer_s: float = 5.0,
        gap_tolerance: int = F.DEFAULT_GAP_TOLERANCE,
    ):
        self.bundle = bundle
        self.seg_cfg = seg_cfg
        self.rate = sample_rate_hz
        self.m_w = bundle.metadata.get("m_w", F.DEFAULT_WINDOW)
        self.stride = bundle.metadata.get("stride", F.DEFAULT_STRIDE)
        self.gap_tolerance = gap_tolerance
        self.encoder = bundle.encoder()
        self.max_buffer = int(buffer_s * sample_rate_hz)

        self.segmenter = CycleSegmenter(seg_cfg, sample_rate_hz)
        self._cur = np.zeros(0)
        self._vol = np.zeros(0)
        self._buf_start = 0  # absolute index of ring buffer head
        self._n_ingested = 0
        self._pending_onset: Optional[int] = None
        self._cycle_count = 0
        self._valid_indices: list[int] = []
        self._valid_rows: list[np.ndarray] = []
        self._cache_offset = 0  # valid cycles dropped from the cache head
        self._next_window_pos = 0
        self.predictions: list[Prediction] = []
        self.boundaries: list[CycleBoundary] = []

    def swap_model(self, bundle: ModelBundle) -> None:
        """Atomic between predictions; feature geometry must match."""
        self.bundle = bundle
        self.encoder = bundle.encoder()

    @property
    def samples_buffered(self) -> int:
        return len(self._cur)

    def ingest(self, current: np.ndarray, voltage: np.ndarray,
               first_index: Optional[int] = None) -> list[Prediction]:
        """Feed the next chunk; chunks must be contiguous and in order."""
        if first_index is not None and first_index != self._n_ingested:
            raise OutOfOrderChunk(
                f"expected chunk starting at {self._n_ingested}, got {first_index}")
        if len(current) == 0:
            return []
        self._cur = np.concatenate([self._cur, np.asarray(current, dtype=np.float64)])
        self._vol = np.concatenate([self._vol, np.asarray(voltage, dtype=np.float64)])
        self._n_ingested += len(current)
        onsets = self.segmenter.feed(current)
        out = self._handle_onsets(onsets)
        self._trim()
        return out

    def finish(self) -> list[Prediction]:
        """Flush the segmenter's trailing partial block (end of stream)."""
        return self._handle_onsets(self.segmenter.finish())

    # -- internals ----------------------------------------------------------

    def _handle_onsets(self, onsets: list[int]) -> list[Prediction]:
        preds = []
        for onset in onsets:
            if self._pending_onset is not None:
                t0 = time.perf_counter()
                boundary = CycleBoundary(self._pending_onset, onset)
                self.boundaries.append(boundary)
                self._complete_cycle(boundary)
                preds.extend(self._emit_windows(t0))
            self._pending_onset = onset
        return preds

    def _complete_cycle(self, boundary: CycleBoundary) -> None:
        idx = self._cycle_count
        self._cycle_count += 1
        a = boundary.start_idx - self._buf_start
        b = boundary.end_idx - self._buf_start
        if a < 0:
            return  # cycle fell out of the ring buffer (stalled consumer)
        cycle = WeldSeries(self.rate, self._cur[a:b], self._vol[a:b],
                           start_index=boundary.start_idx)
        local = CycleBoundary(0, b - a)
        try:
            split = split_phases(cycle, local, self.seg_cfg)
        except PhaseNotFound:
            return
        stats = F.phase_stats(cycle, split.detachment).as_array()
        window = F.resample_fixed(cycle, split.detachment)
        vec = np.concatenate([stats, self.encoder(window)])
        self._valid_indices.append(idx)
        self._valid_rows.append(self.bundle.normalizer.transform(vec))

    def _emit_windows(self, t0: float) -> list[Prediction]:
        preds = []
        while True:
            pos = self._next_window_pos - self._cache_offset
            if pos + self.m_w > len(self._valid_rows):
                break
            idx = np.array(self._valid_indices[pos : pos + self.m_w])
            ok_gap = len(idx) < 2 or int(np.max(np.diff(idx))) - 1 <= self.gap_tolerance
            if ok_gap:
                bundle = self.bundle  # snapshot: predictions never mix models
                X = np.stack(self._valid_rows[pos : pos + self.m_w])
                logits = nn.classifier_forward(bundle.classifier, X[None])
                p_ok = float(nn.softmax(logits)[0, 0])
                preds.append(Prediction(
                    model_version=bundle.version,
                    first_cycle=int(idx[0]),
                    last_cycle=int(idx[-1]),
                    p_ok=p_ok,
                    label="OK" if p_ok >= 0.5 else "NOK",
                    latency_ms=(time.perf_counter() - t0) * 1e3,
                    matrix=X,
                ))
            self._next_window_pos += self.stride
        self.predictions.extend(preds)
        # drop cache entries no future window can reference
        drop = (self._next_window_pos - self._cache_offset)
        if drop > 0:
            self._valid_indices = self._valid_indices[drop:]
            self._valid_rows = self._valid_rows[drop:]
            self._cache_offset += drop
        return preds

    def _trim(self) -> None:
        # unscanned samples may still yield onsets; keep them and the open cycle
        horizon = self.segmenter.frontier - self.segmenter.lag
        keep_from = horizon if self._pending_onset is None \
            else min(self._pending_onset, horizon)
        keep_from = max(keep_from, self._n_ingested - self.max_buffer, 0)
        cut = keep_from - self._buf_start
        if cut > 0:
            self._cur = self._cur[cut:]
            self._vol = self._vol[cut:]
            self._buf_start = keep_from


def run_offline(bundle: ModelBundle, series: WeldSeries,
                seg_cfg: SegmentationConfig = SegmentationConfig()) -> OnlineEngine:
    """Batch reference: one engine fed the whole stream at once."""
    eng = OnlineEngine(bundle, series.sample_rate_hz, seg_cfg)
    eng.ingest(series.current, series.voltage)
    eng.finish()
    return eng


# ---------------------------------------------------------------------------
# Wire protocol server


def _ws_accept_key(key: str) -> str:
    GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
    return base64.b64encode(hashlib.sha1((key + GUID).encode()).digest()).decode()


def _ws_encode_text(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        head = bytes([0x81, n])
    elif n < 65536:
        head = bytes([0x81, 126]) + n.to_bytes(2, "big")
    else:
        head = bytes([0x81, 127]) + n.to_bytes(8, "big")
    return head + payload


def _ws_read_frame(rfile) -> Optional[bytes]:
    head = rfile.read(2)
    if len(head) < 2:
        return None
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    if length == 126:
        length = int.from_bytes(rfile.read(2), "big")
    elif length == 127:
        length = int.from_bytes(rfile.read(8), "big")
    mask = rfile.read(4) if masked else b"\x00" * 4
    data = rfile.read(length)
    if opcode == 0x8:  # close
        return None
    payload = bytes(b ^ mask[i % 4] for i, b in enumerate(data))
    return payload if opcode in (0x1, 0x2) else b""


@dataclass
class _Client:
    send: Callable[[bytes], None]
    q: "queue.Queue[Optional[dict]]" = field(default_factory=lambda: queue.Queue(maxsize=256))
    subscribed: bool = False

    def push(self, msg: dict, droppable: bool) -> None:
        try:
            self.q.put_nowait(msg)
        except queue.Full:
            if droppable:
                return  # backpressure: display samples may be dropped
            self.q.put(msg)  # predictions/alerts block instead of dropping


class PredictionServer:
    """Live service: simulator source, engine pipeline, NDJSON publishing."""

    def __init__(
        self,
        bundle: ModelBundle,
        sim_cfg: SimConfig,
        host: str = "127.0.0.1",
        port: int = 7878,
        display_rate_hz: float = 2000.0,
        chunk_s: float = 0.05,
        realtime: bool = True,
        update_cfg: ContinualConfig = ContinualConfig(),
        checkpoint_dir: str = ".",
        store=None,
        ui_dir: Optional[str] = None,
        replay: Optional[WeldSeries] = None,
    ):
        self.ui_dir = ui_dir
        self.bundle = bundle
        self.sim_cfg = sim_cfg
        self.replay = replay
        self._replay_pos = 0
        self.sim = None if replay is not None else WeldSimulator(sim_cfg)
        self._params = sim_cfg.params
        self.engine = OnlineEngine(bundle, sim_cfg.sample_rate_hz)
        self.host, self.port = host, port
        self.display_decimation = max(1, int(sim_cfg.sample_rate_hz // display_rate_hz))
        self.chunk = int(chunk_s * sim_cfg.sample_rate_hz)
        self.realtime = realtime
        self.chunk_s = chunk_s
        self.update_cfg = update_cfg
        self.checkpoint_dir = checkpoint_dir
        self.store = store
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._seq = 0
        self._stop = threading.Event()
        self._lock = threading.Lock()  # model + buffers
        self._regime_windows: list[tuple[np.ndarray, int]] = []
        self._window_cursor = 0
        self._event_cursor = 0
        self._threads: list[threading.Thread] = []
        self.server: Optional[socketserver.ThreadingTCPServer] = None

    # -- publishing ---------------------------------------------------------

    def _broadcast(self, msg: dict, droppable: bool = False) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            if c.subscribed:
                c.push(msg, droppable)

    # -- pipeline -----------------------------------------------------------

    def _next_chunk(self) -> Optional[WeldSeries]:
        if self.sim is not None:
            chunk, _ = self.sim.step(self.chunk)
            return chunk
        if self._replay_pos >= len(self.replay.current):
            return None  # replay exhausted
        sl = slice(self._replay_pos, self._replay_pos + self.chunk)
        chunk = WeldSeries(self.replay.sample_rate_hz, self.replay.current[sl],
                           self.replay.voltage[sl], start_index=self._replay_pos)
        self._replay_pos += len(chunk.current)
        return chunk

    def _source_loop(self) -> None:
        while not self._stop.is_set():
            t0 = time.perf_counter()
            with self._lock:
                chunk = self._next_chunk()
                if chunk is None:
                    break
                preds = self.engine.ingest(chunk.current, chunk.voltage)
                self._label_windows(preds)
                params = self.sim.params if self.sim is not None else self._params
            self._seq += 1
            dec = self.display_decimation
            data = np.stack([chunk.current[::dec], chunk.voltage[::dec]], axis=1)
            self._broadcast({
                "type": "samples",
                "seq": self._seq,
                "rate": self.sim_cfg.sample_rate_hz / dec,
                "params": params.to_dict(),
                "data": [[round(float(i), 3), round(float(v), 3)] for i, v in data],
            }, droppable=True)
            for p in preds:
                self._broadcast(p.to_message())
            if self.realtime:
                budget = self.chunk_s - (time.perf_counter() - t0)
                if budget > 0:
                    time.sleep(budget)

    def _label_windows(self, preds: list[Prediction]) -> None:
        """Label completed windows with the simulator oracle for retraining.

        The detector's cycle numbering matches the simulator event log up to
        the discarded leading partial, so the window's event slice gives the
        anomaly fraction; these labeled windows feed ``trigger_update``.
        """
        if self.sim is None:
            return  # replay mode: no oracle; updates need operator labels
        events = self.sim.log.cycles
        for p in preds:
            if p.matrix is None:
                continue
            cycles = events[p.first_cycle : p.last_cycle + 1]
            bad = sum(1 for c in cycles if c.anomaly != "none")
            frac = bad / len(cycles) if cycles else 0.0
            y = 1 if frac > self.sim_cfg.anomaly_nok_fraction else 0
            self._regime_windows.append((p.matrix, y))
        if len(self._regime_windows) > 500:
            self._regime_windows = self._regime_windows[-500:]

    # -- control ------------------------------------------------------------

    def handle_control(self, msg: dict, client: _Client) -> Optional[dict]:
        kind = msg.get("type")
        if kind == "subscribe":
            client.subscribed = True
            return {"type": "model_activated", "version": self.bundle.version}
        if kind == "set_params":
            try:
                params = ProcessParams.from_dict(msg)
            except (TypeError, ValueError) as e:
                return {"type": "error", "detail": f"bad params: {e}"}
            with self._lock:
                self._params = params
                if self.sim is not None:
                    self.sim.set_params(params)
                self._regime_windows.clear()
                alert = detect_drift(self.bundle.snapshots, params,
                                     self.update_cfg.drift_threshold_sigma) \
                    if self.bundle.snapshots else None
            if alert is not None:
                self._broadcast({"type": "drift_alert", **alert.to_dict()})
            return {"type": "ack", "applied": "next_cycle"}
        if kind == "trigger_update":
            return self._do_update()
        return {"type": "error", "detail": f"unknown message type {kind!r}"}

    def _do_update(self) -> dict:
        with self._lock:
            if not self._regime_windows:
                return {"type": "error", "detail": "empty update dataset"}
            X = np.stack([w for w, _ in self._regime_windows])
            y = np.array([lab for _, lab in self._regime_windows])
            current = self.sim.params if self.sim is not None else self._params
            params = [current] * len(y)
            try:
                continual_update(self.bundle, X, y, params, self.update_cfg)
            except Exception as e:  # surfaced to the operator, session survives
                return {"type": "error", "detail": f"update failed: {e}"}
            path = f"{self.checkpoint_dir}/model-v{self.bundle.version}.ckpt"
            checkpoint_save(self.bundle, path)
            if self.store is not None:
                v = self.store.register_model(path)
                self.store.activate(v)
            self.engine.swap_model(self.bundle)
            version = self.bundle.version
        self._broadcast({"type": "model_activated", "version": version})
        return {"type": "model_activated", "version": version}

    # -- socket plumbing ----------------------------------------------------

    def serve_forever(self) -> None:
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                first = self.rfile.peek(16)[:16]
                ws = first.startswith(b"GET ")
                if ws and not self._handshake():
                    return  # plain HTTP request, answered by the static handler
                client = _Client(send=self._send_ws if ws else self._send_line)
                with outer._clients_lock:
                    outer._clients.append(client)
                writer = threading.Thread(target=self._writer, args=(client,), daemon=True)
                writer.start()
                try:
                    while not outer._stop.is_set():
                        try:
                            line = self._read_msg(ws)
                        except OSError:  # peer reset: treat as disconnect
                            break
                        if line is None:
                            break
                        if not line.strip():
                            continue
                        try:
                            msg = json.loads(line)
                        except json.JSONDecodeError as e:
                            client.push({"type": "error", "detail": f"bad JSON: {e}"},
                                        droppable=False)
                            continue
                        reply = outer.handle_control(msg, client)
                        if reply is not None:
                            client.q.put(reply)
                finally:
                    with outer._clients_lock:
                        if client in outer._clients:
                            outer._clients.remove(client)
                    client.q.put(None)

            def _handshake(self) -> bool:
                """Upgrade to WebSocket, or serve a static asset and return False."""
                request = self.rfile.readline().decode("latin1").strip()
                headers = {}
                while True:
                    line = self.rfile.readline().decode("latin1").strip()
                    if not line:
                        break
                    if ":" in line:
                        k, v = line.split(":", 1)
                        headers[k.strip().lower()] = v.strip()
                if headers.get("upgrade", "").lower() != "websocket":
                    self._serve_static(request)
                    return False
                key = headers.get("sec-websocket-key", "")
                resp = (
                    "HTTP/1.1 101 Switching Protocols\r\n"
                    "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                    f"Sec-WebSocket-Accept: {_ws_accept_key(key)}\r\n\r\n"
                )
                self.wfile.write(resp.encode("latin1"))
                return True

            def _serve_static(self, request: str) -> None:
                parts = request.split()
                path = parts[1] if len(parts) >= 2 else "/"
                path = path.split("?")[0]
                if path.endswith("/"):
                    path += "index.html"
                body, status, ctype = b"not found", "404 Not Found", "text/plain"
                if outer.ui_dir is not None:
                    root = os.path.abspath(outer.ui_dir)
                    full = os.path.abspath(os.path.join(root, path.lstrip("/")))
                    if full.startswith(root + os.sep) and os.path.isfile(full):
                        with open(full, "rb") as fp:
                            body = fp.read()
                        status = "200 OK"
                        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
                head = (f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
                        f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n")
                self.wfile.write(head.encode("latin1") + body)

            def _read_msg(self, ws: bool) -> Optional[str]:
                if ws:
                    payload = _ws_read_frame(self.rfile)
                    return None if payload is None else payload.decode()
                line = self.rfile.readline()
                return None if not line else line.decode()

            def _send_line(self, payload: bytes) -> None:
                self.wfile.write(payload + b"\n")
                self.wfile.flush()

            def _send_ws(self, payload: bytes) -> None:
                self.wfile.write(_ws_encode_text(payload))
                self.wfile.flush()

            def _writer(self, client: _Client) -> None:
                while True:
                    msg = client.q.get()
                    if msg is None:
                        return
                    try:
                        client.send(json.dumps(msg).encode())
                    except (OSError, ValueError):  # peer gone, stream closed
                        return

        self.server = socketserver.ThreadingTCPServer((self.host, self.port), Handler)
        self.server.daemon_threads = True
        src = threading.Thread(target=self._source_loop, daemon=True)
        src.start()
        self._threads.append(src)
        try:
            self.server.serve_forever(poll_interval=0.1)
        finally:
            self._stop.set()

    def shutdown(self) -> None:
        self._stop.set()
        if self.server is not None:
            self.server.shutdown()
