"""Per-cycle feature extraction and windowed sequence assembly.

Each accepted cycle is compressed into a fixed-length vector: statistical
summaries of the droplet-detachment phase on both channels, concatenated
with a learned autoencoder embedding of the same phase. Windows of
consecutive vectors form the classifier input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .signal import CycleBoundary, PhaseSplit, WeldSeries

STAT_COUNT = 13  # duration + 6 stats per channel
STAT_NAMES = ["duration_ms"] + [
    f"{ch}_{s}"
    for ch in ("current", "voltage")
    for s in ("min", "max", "mean", "std", "trend", "domfreq")
]

DEFAULT_RESAMPLE_LEN = 128
DEFAULT_EMBED_DIM = 8
DEFAULT_WINDOW = 64
DEFAULT_STRIDE = 16
DEFAULT_GAP_TOLERANCE = 2


class EmptyPhase(Exception):
    pass


class PhaseTooShort(Exception):
    pass


class NotEnoughCycles(Exception):
    pass


@dataclass(frozen=True)
class PhaseStats:
    """Statistical summary of one phase, both channels."""

    duration_ms: float
    current_min: float
    current_max: float
    current_mean: float
    current_std: float
    current_trend: float  # least-squares slope, A per ms
    current_domfreq: float  # Hz
    voltage_min: float
    voltage_max: float
    voltage_mean: float
    voltage_std: float
    voltage_trend: float  # V per ms
    voltage_domfreq: float  # Hz

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n if n == "duration_ms" else n) for n in STAT_NAMES])


@dataclass(frozen=True)
class FeatureVector:
    """Stats + embedding for one cycle; total dimension 13 + d."""

    cycle_idx: int
    stats: PhaseStats
    embedding: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.stats.as_array(), self.embedding])


@dataclass(frozen=True)
class FeatureSequence:
    """Window of m_w feature vectors from one weld, oldest first."""

    weld_id: str
    first_cycle: int
    last_cycle: int
    matrix: np.ndarray  # (m_w, 13 + d), already normalized

    def __len__(self) -> int:
        return self.matrix.shape[0]


def _channel_stats(x: np.ndarray, rate: float) -> tuple[float, float, float, float, float, float]:
    n = len(x)
    t_ms = np.arange(n) / rate * 1000.0
    if n > 1:
        slope = float(np.polyfit(t_ms, x, 1)[0])
    else:
        slope = 0.0
    return (
        float(x.min()), float(x.max()), float(x.mean()), float(x.std()),
        slope, dominant_frequency(x, rate),
    )


def dominant_frequency(x: np.ndarray, rate: float) -> float:
    """Frequency of the largest non-DC DFT bin; 0 for ranges under 8 samples."""
    n = len(x)
    if n < 8:
        return 0.0
    mag = np.abs(np.fft.rfft(x - x.mean()))
    k = int(np.argmax(mag[1:])) + 1
    return k * rate / n


def phase_stats(series: WeldSeries, phase: tuple[int, int]) -> PhaseStats:
    start, end = phase
    if end <= start:
        raise EmptyPhase(f"empty phase range [{start}, {end})")
    i = series.current[start:end]
    v = series.voltage[start:end]
    rate = series.sample_rate_hz
    ci = _channel_stats(i, rate)
    cv = _channel_stats(v, rate)
    return PhaseStats((end - start) / rate * 1000.0, *ci, *cv)


def resample_fixed(series: WeldSeries, phase: tuple[int, int], length: int = DEFAULT_RESAMPLE_LEN) -> np.ndarray:
    """Linearly interpolate a phase onto ``length`` points per channel.

    Returns a (2, length) array (current row first); endpoints exact.
    """
    start, end = phase
    n = end - start
    if n < 2:
        raise PhaseTooShort(f"phase has {n} samples, need >= 2")
    grid = np.linspace(0, n - 1, length)
    src = np.arange(n)
    return np.stack([
        np.interp(grid, src, series.current[start:end]),
        np.interp(grid, src, series.voltage[start:end]),
    ])


@dataclass
class Normalizer:
    """Per-feature standardization fitted on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "Normalizer":
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0)
        # constant columns leave rounding residue in std; treat as zero variance
        floor = 1e-12 * np.maximum(1.0, np.abs(mean))
        std = np.where(std > floor, std, 1.0)
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(mean=np.array(d["mean"]), std=np.array(d["std"]))


def extract_feature_vectors(
    series: WeldSeries,
    splits: Sequence[tuple[int, PhaseSplit]],
    embed: Callable[[np.ndarray], np.ndarray],
    resample_len: int = DEFAULT_RESAMPLE_LEN,
) -> list[FeatureVector]:
    """Compute stats + embedding on the detachment phase of each split cycle.

    ``splits`` pairs each cycle index with its phase split; cycles whose split
    failed are simply absent. ``embed`` maps a (2, L) window to a d-vector.
    """
    out = []
    for cycle_idx, split in splits:
        stats = phase_stats(series, split.detachment)
        window = resample_fixed(series, split.detachment, resample_len)
        out.append(FeatureVector(cycle_idx=cycle_idx, stats=stats,
                                 embedding=np.asarray(embed(window), dtype=np.float64)))
    return out


def iter_window_starts(
    cycle_indices: Sequence[int], m_w: int, stride: int, gap_tolerance: int = DEFAULT_GAP_TOLERANCE
) -> list[int]:
    """Positions (into the valid-cycle list) of emittable windows.

    Candidate windows start every ``stride`` valid cycles; a window is
    dropped when consecutive member cycles are separated by more than
    ``gap_tolerance`` excluded cycles in the original cycle numbering.
    """
    starts = []
    n = len(cycle_indices)
    pos = 0
    while pos + m_w <= n:
        idx = np.asarray(cycle_indices[pos : pos + m_w])
        if len(idx) < 2 or int(np.max(np.diff(idx))) - 1 <= gap_tolerance:
            starts.append(pos)
        pos += stride
    return starts


def build_feature_sequence(
    vectors: Sequence[FeatureVector],
    normalizer: Normalizer,
    weld_id: str = "",
    m_w: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    gap_tolerance: int = DEFAULT_GAP_TOLERANCE,
) -> list[FeatureSequence]:
    """Slide normalized windows of ``m_w`` valid cycles, advancing by ``stride``."""
    if len(vectors) < m_w:
        raise NotEnoughCycles(f"{len(vectors)} valid cycles, window needs {m_w}")
    raw = np.stack([v.as_array() for v in vectors])
    norm = normalizer.transform(raw)
    indices = [v.cycle_idx for v in vectors]
    out = []
    for pos in iter_window_starts(indices, m_w, stride, gap_tolerance):
        out.append(FeatureSequence(
            weld_id=weld_id,
            first_cycle=indices[pos],
            last_cycle=indices[pos + m_w - 1],
            matrix=norm[pos : pos + m_w],
        ))
    return out


def feature_csv_rows(weld_id: str, vectors: Sequence[FeatureVector]):
    """Rows for the offline-analysis CSV dump (unnormalized features)."""
    d = len(vectors[0].embedding) if vectors else DEFAULT_EMBED_DIM
    header = ["weld_id", "cycle_idx"] + STAT_NAMES + [f"emb_{k}" for k in range(d)]
    yield header
    for v in vectors:
        yield [weld_id, v.cycle_idx] + [f"{x:.9g}" for x in v.as_array()]
