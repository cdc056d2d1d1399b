"""Welding time-series domain types and cycle/phase segmentation.

A weld is observed as a synchronized two-channel (current, voltage) stream
sampled at a fixed rate. The pulsed process produces one droplet per cycle;
each cycle splits into a pulse ramp, a droplet-detachment phase and a
low-power base phase. Everything here is a pure function over immutable
series and is safe to call concurrently.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

DEFAULT_SAMPLE_RATE_HZ = 100_000.0


class DegenerateSignal(Exception):
    """Smoothed current has no usable dynamic range (no pulses present)."""


class PhaseNotFound(Exception):
    """A cycle has no detectable plateau or no low-power tail."""


@dataclass(frozen=True)
class Sample:
    """One synchronized measurement point."""

    t: float
    current: float
    voltage: float


@dataclass(frozen=True)
class WeldSeries:
    """Two-channel series at a fixed rate.

    Time is derived from ``start_index`` and ``sample_rate_hz`` rather than
    stored per sample, so long series cannot accumulate timestamp drift.
    """

    sample_rate_hz: float
    current: np.ndarray
    voltage: np.ndarray
    weld_id: str = ""
    start_index: int = 0

    def __post_init__(self) -> None:
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if len(self.current) != len(self.voltage):
            raise ValueError("channel length mismatch")
        object.__setattr__(self, "current", np.asarray(self.current, dtype=np.float64))
        object.__setattr__(self, "voltage", np.asarray(self.voltage, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.current)

    @property
    def times(self) -> np.ndarray:
        return (self.start_index + np.arange(len(self))) / self.sample_rate_hz

    def sample(self, i: int) -> Sample:
        return Sample(
            t=(self.start_index + i) / self.sample_rate_hz,
            current=float(self.current[i]),
            voltage=float(self.voltage[i]),
        )

    def slice(self, start: int, end: int) -> "WeldSeries":
        return WeldSeries(
            sample_rate_hz=self.sample_rate_hz,
            current=self.current[start:end],
            voltage=self.voltage[start:end],
            weld_id=self.weld_id,
            start_index=self.start_index + start,
        )

    def shifted(self, index_offset: int) -> "WeldSeries":
        return replace(self, start_index=self.start_index + index_offset)


@dataclass(frozen=True)
class CycleBoundary:
    """Half-open sample range [start_idx, end_idx) of one droplet cycle."""

    start_idx: int
    end_idx: int

    def __post_init__(self) -> None:
        if not (0 <= self.start_idx < self.end_idx):
            raise ValueError("invalid cycle boundary")

    def __len__(self) -> int:
        return self.end_idx - self.start_idx


@dataclass(frozen=True)
class PhaseSplit:
    """Three contiguous index ranges that exactly tile one cycle."""

    pulse: tuple[int, int]
    detachment: tuple[int, int]
    base: tuple[int, int]

    def __post_init__(self) -> None:
        p, d, b = self.pulse, self.detachment, self.base
        if not (p[0] <= p[1] == d[0] <= d[1] == b[0] <= b[1]):
            raise ValueError("phases must be contiguous and ordered")
        if b[0] >= b[1]:
            raise ValueError("base phase must be nonempty")


class QualityLabel(Enum):
    OK = "OK"
    NOK = "NOK"


@dataclass(frozen=True)
class ProcessParams:
    """Operator-set process parameters that determine weld quality regime."""

    wire_feed_rate: float = 8.0  # m/min
    welding_speed: float = 30.0  # cm/min
    gas_flow_rate: float = 15.0  # L/min
    arc_length_setpoint: float = 3.0  # mm
    nozzle_distance: float = 15.0  # mm
    voltage_setpoint: float = 32.0  # V
    equipment_id: str = "rig-0"

    NUMERIC_FIELDS = (
        "wire_feed_rate",
        "welding_speed",
        "gas_flow_rate",
        "arc_length_setpoint",
        "nozzle_distance",
        "voltage_setpoint",
    )

    def __post_init__(self) -> None:
        for name in self.NUMERIC_FIELDS:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def numeric_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.NUMERIC_FIELDS])

    def to_dict(self) -> dict:
        d = {n: getattr(self, n) for n in self.NUMERIC_FIELDS}
        d["equipment_id"] = self.equipment_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessParams":
        known = set(cls.NUMERIC_FIELDS) | {"equipment_id"}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class WeldRecord:
    """Catalog entry tying a stored series to its parameters and label."""

    weld_id: str
    params: ProcessParams
    label: Optional[QualityLabel] = None
    series_path: str = ""
    sample_count: int = 0
    created_at: str = ""


# ---------------------------------------------------------------------------
# Validation


@dataclass
class ValidationReport:
    ok: bool
    sample_count: int
    violations: list[str] = field(default_factory=list)


def validate_series(series: WeldSeries, times: Optional[np.ndarray] = None) -> ValidationReport:
    """Check a series for NaN/Inf samples, channel mismatch and time jitter.

    ``times`` is an optional explicit timestamp column (e.g. from CSV import);
    it is checked for monotonicity and for jitter against the nominal rate.
    """
    violations: list[str] = []
    n = len(series.current)
    if len(series.voltage) != n:
        violations.append(
            f"channel length mismatch: {n} current vs {len(series.voltage)} voltage"
        )
    bad_i = np.nonzero(~np.isfinite(series.current))[0]
    bad_v = np.nonzero(~np.isfinite(series.voltage))[0]
    for idx in bad_i[:10]:
        violations.append(f"non-finite current at index {int(idx)}")
    for idx in bad_v[:10]:
        violations.append(f"non-finite voltage at index {int(idx)}")
    if times is not None and len(times) > 1:
        dt = np.diff(np.asarray(times, dtype=np.float64))
        if np.any(dt <= 0):
            first = int(np.nonzero(dt <= 0)[0][0])
            violations.append(f"non-monotone time at index {first + 1}")
        jitter = np.abs(dt - 1.0 / series.sample_rate_hz)
        if np.any(jitter > 1e-9):
            first = int(np.nonzero(jitter > 1e-9)[0][0])
            violations.append(f"sample-rate jitter beyond tolerance at index {first + 1}")
    return ValidationReport(ok=not violations, sample_count=n, violations=violations)


# ---------------------------------------------------------------------------
# Segmentation


@dataclass(frozen=True)
class SegmentationConfig:
    """Thresholds for cycle and phase detection.

    The defaults are part of the external contract: a cycle starts where the
    smoothed current crosses base + edge_fraction * amplitude upward, with the
    detector re-armed only after falling below base + (edge_fraction -
    hysteresis_fraction) * amplitude. Base/pulse levels are the 5th/95th
    percentiles of the smoothed current per 100 ms block.
    """

    smooth_window_s: float = 1e-4
    level_window_s: float = 0.1
    level_percentiles: tuple[float, float] = (5.0, 95.0)
    edge_fraction: float = 0.3
    hysteresis_fraction: float = 0.1
    min_amplitude_a: float = 10.0
    plateau_slope_fraction: float = 0.02  # of amplitude, per slope_ref_s
    slope_ref_s: float = 1e-4
    plateau_hold_s: float = 5e-5
    base_power_fraction: float = 0.05
    onset_lag_samples: Optional[int] = None  # default: one smoothing window

    def onset_lag(self, rate: float) -> int:
        # group delay of the causal moving average plus typical edge rise;
        # landing a touch early is safe, landing late puts the next ramp's
        # first samples into this cycle's base phase
        if self.onset_lag_samples is not None:
            return self.onset_lag_samples
        return self.smooth_window(rate)

    def smooth_window(self, rate: float) -> int:
        return max(1, int(round(self.smooth_window_s * rate)))

    def level_window(self, rate: float) -> int:
        return max(1, int(round(self.level_window_s * rate)))

    def plateau_hold(self, rate: float) -> int:
        return max(1, int(round(self.plateau_hold_s * rate)))


class CycleSegmenter:
    """Incremental hysteresis edge detector over a smoothed current stream.

    Feeding the stream in arbitrary chunk sizes produces exactly the onsets
    that one batch pass would produce: smoothing is causal, and threshold
    levels for a 100 ms block are computed only once the block is complete
    (the final partial block is processed at :meth:`finish`).
    """

    def __init__(self, cfg: SegmentationConfig, sample_rate_hz: float):
        self.cfg = cfg
        self.rate = sample_rate_hz
        self.w = cfg.smooth_window(sample_rate_hz)
        self.block = cfg.level_window(sample_rate_hz)
        self.lag = cfg.onset_lag(sample_rate_hz)
        self._tail = np.zeros(0)  # last w-1 raw samples
        self._pending = np.zeros(0)  # smoothed samples of the open block
        self._abs_base = 0  # absolute index of first sample in _pending
        self._n_seen = 0
        self._armed = False  # must dip below the low threshold before first onset
        self._onsets: list[int] = []
        self._max_level = -np.inf
        self._min_level = np.inf
        self._finished = False

    @property
    def onsets(self) -> list[int]:
        return self._onsets

    @property
    def dynamic_range(self) -> float:
        return self._max_level - self._min_level

    @property
    def frontier(self) -> int:
        """First absolute index not yet scanned; later onsets are >= frontier - lag."""
        return self._abs_base

    def feed(self, raw: np.ndarray) -> list[int]:
        """Consume raw current samples; return onsets newly confirmed."""
        if self._finished:
            raise RuntimeError("segmenter already finished")
        raw = np.asarray(raw, dtype=np.float64)
        if len(raw) == 0:
            return []
        buf = np.concatenate([self._tail, raw])
        # causal moving average; head of stream uses a partial window
        c = np.cumsum(buf)
        hi = np.arange(len(self._tail), len(buf))
        lo = hi - self.w
        sums = c[hi] - np.where(lo >= 0, c[np.maximum(lo, 0)], 0.0)
        counts = np.minimum(self._n_seen + np.arange(len(raw)) + 1, self.w)
        smoothed = sums / counts
        self._n_seen += len(raw)
        self._tail = buf[-(self.w - 1):] if self.w > 1 else np.zeros(0)
        self._pending = np.concatenate([self._pending, smoothed])
        new: list[int] = []
        while len(self._pending) >= self.block:
            new.extend(self._scan_block(self._pending[: self.block]))
            self._abs_base += self.block
            self._pending = self._pending[self.block:]
        return new

    def finish(self) -> list[int]:
        """Process the trailing partial block and seal the detector."""
        self._finished = True
        new: list[int] = []
        if len(self._pending) > 0:
            new.extend(self._scan_block(self._pending))
            self._abs_base += len(self._pending)
            self._pending = np.zeros(0)
        return new

    def _scan_block(self, s: np.ndarray) -> list[int]:
        lo_p, hi_p = self.cfg.level_percentiles
        base = float(np.percentile(s, lo_p))
        pulse = float(np.percentile(s, hi_p))
        self._min_level = min(self._min_level, float(s.min()))
        self._max_level = max(self._max_level, float(s.max()))
        amp = pulse - base
        if amp < self.cfg.min_amplitude_a:
            # dead block: no pulses here, drop detector arming
            self._armed = False
            return []
        high_t = base + self.cfg.edge_fraction * amp
        low_t = base + (self.cfg.edge_fraction - self.cfg.hysteresis_fraction) * amp
        above = np.nonzero(s >= high_t)[0]
        below = np.nonzero(s < low_t)[0]
        found: list[int] = []
        pos = 0
        while True:
            if self._armed:
                k = np.searchsorted(above, pos)
                if k == len(above):
                    break
                idx = int(above[k])
                # undo the causal-smoothing group delay
                found.append(max(0, self._abs_base + idx - self.lag))
                self._armed = False
                pos = idx + 1
            else:
                k = np.searchsorted(below, pos)
                if k == len(below):
                    break
                pos = int(below[k]) + 1
                self._armed = True
        self._onsets.extend(found)
        return found


def boundaries_from_onsets(onsets: Sequence[int]) -> list[CycleBoundary]:
    """Pair consecutive onsets into cycles; partial edges are dropped."""
    return [CycleBoundary(a, b) for a, b in zip(onsets, onsets[1:])]


def segment_cycles(
    series: WeldSeries, cfg: SegmentationConfig = SegmentationConfig()
) -> list[CycleBoundary]:
    """Split a series into droplet cycles at rising pulse edges.

    Raises :class:`DegenerateSignal` when the smoothed current has less
    dynamic range than ``cfg.min_amplitude_a`` (no pulses present).
    """
    seg = CycleSegmenter(cfg, series.sample_rate_hz)
    seg.feed(series.current)
    seg.finish()
    if seg.dynamic_range < cfg.min_amplitude_a:
        raise DegenerateSignal(
            f"smoothed dynamic range {seg.dynamic_range:.3g} A below "
            f"min_amplitude {cfg.min_amplitude_a} A"
        )
    return boundaries_from_onsets(seg.onsets)


def split_phases(
    series: WeldSeries, cycle: CycleBoundary, cfg: SegmentationConfig = SegmentationConfig()
) -> PhaseSplit:
    """Split one cycle into pulse / detachment / base phases.

    The pulse phase ends at the plateau onset: the first index whose smoothed
    current slope stays below the plateau threshold for ``plateau_hold``
    consecutive samples. The base phase is the maximal suffix whose
    instantaneous power I*V stays within ``base_power_fraction`` of the cycle
    maximum. Raises :class:`PhaseNotFound` when either does not exist.
    """
    if cycle.end_idx > len(series):
        raise ValueError("cycle outside series")
    i = series.current[cycle.start_idx : cycle.end_idx]
    v = series.voltage[cycle.start_idx : cycle.end_idx]
    n = len(i)
    w = cfg.smooth_window(series.sample_rate_hz)
    kernel = np.ones(w) / w
    smooth = np.convolve(i, kernel, mode="same")
    # smoothed central-difference slope, in amps per sample
    slope = np.gradient(smooth)
    amp = float(smooth.max() - smooth.min())
    thresh = cfg.plateau_slope_fraction * amp / (cfg.slope_ref_s * series.sample_rate_hz)
    hold = cfg.plateau_hold(series.sample_rate_hz)

    flat = np.abs(slope) < thresh
    # the plateau lives near pulse level: gate out flat stretches at base
    # current (a boundary may start a hair before the ramp)
    mid = smooth.min() + 0.5 * amp
    flat &= smooth >= mid
    # require current actually climbed first: start searching after the
    # first sample, so a plateau at the very start counts as "no ramp"
    plateau_onset = -1
    run = 0
    for k in range(n):
        run = run + 1 if flat[k] else 0
        if run >= hold:
            plateau_onset = k - hold + 1
            break
    if plateau_onset <= 0:
        raise PhaseNotFound("no current ramp / plateau onset in cycle")

    power = i * v
    pmax = float(power.max())
    bound = cfg.base_power_fraction * pmax + 1e-9
    above = np.nonzero(power > bound)[0]
    base_start = int(above[-1]) + 1 if len(above) else 0
    if base_start >= n:
        raise PhaseNotFound("no low-power suffix in cycle")
    if base_start <= plateau_onset:
        raise PhaseNotFound("phases overlap: plateau onset after base start")

    s = cycle.start_idx
    return PhaseSplit(
        pulse=(s, s + plateau_onset),
        detachment=(s + plateau_onset, s + base_start),
        base=(s + base_start, cycle.end_idx),
    )


def decimate(series: WeldSeries, factor: int) -> WeldSeries:
    """Anti-alias with a width-``factor`` moving average and downsample.

    Samples are averaged in consecutive groups of ``factor``; a trailing
    partial group is dropped. ``sample_rate_hz`` is divided accordingly.
    """
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    if factor == 1:
        return series
    n = (len(series) // factor) * factor
    cur = series.current[:n].reshape(-1, factor).mean(axis=1)
    vol = series.voltage[:n].reshape(-1, factor).mean(axis=1)
    return WeldSeries(
        sample_rate_hz=series.sample_rate_hz / factor,
        current=cur,
        voltage=vol,
        weld_id=series.weld_id,
        start_index=series.start_index // factor,
    )


# ---------------------------------------------------------------------------
# CSV interchange

CSV_HEADER = "time_s,current_a,voltage_v"


def to_csv(series: WeldSeries, fp) -> None:
    fp.write(CSV_HEADER + "\n")
    t = series.times
    for k in range(len(series)):
        fp.write(f"{t[k]:.9f},{series.current[k]:.6g},{series.voltage[k]:.6g}\n")


def from_csv(fp, weld_id: str = "") -> tuple[WeldSeries, ValidationReport]:
    """Read `time_s,current_a,voltage_v` rows; rate inferred from the time column."""
    if isinstance(fp, str):
        fp = io.StringIO(fp)
    header = fp.readline().strip()
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {header!r}")
    data = np.loadtxt(fp, delimiter=",", ndmin=2)
    if data.size == 0:
        series = WeldSeries(DEFAULT_SAMPLE_RATE_HZ, np.zeros(0), np.zeros(0), weld_id)
        return series, validate_series(series)
    t, cur, vol = data[:, 0], data[:, 1], data[:, 2]
    if len(t) > 1:
        rate = 1.0 / float(np.median(np.diff(t)))
    else:
        rate = DEFAULT_SAMPLE_RATE_HZ
    series = WeldSeries(rate, cur, vol, weld_id, start_index=int(round(t[0] * rate)))
    return series, validate_series(series, times=t)
