"""Synthetic pulsed-GMAW source with ground-truth annotations.

The electrical side is a lumped R-L circuit: the supply drives the current
toward a per-phase target level with time constant L/R, and the measured
welding voltage is the terminal voltage minus the resistive drops and a
constant arc drop. Each cycle is generated as a whole, so a stream chopped
into arbitrary chunks is bit-identical to a batch run with the same seed.

Anomaly models mirror the two classic failure modes of the pulsed process:
a missed droplet detachment keeps the current at pulse level through the
detachment window, and a short circuit collapses the arc voltage for a few
tenths of a millisecond while the current spikes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .signal import ProcessParams, QualityLabel, WeldSeries

NOMINAL_WIRE_FEED_RATE = 8.0  # m/min; pulse current scales with wfr / nominal


@dataclass(frozen=True)
class CircuitConfig:
    """Lumped electrical elements of the welding loop."""

    contact_resistance_ohm: float = 0.005
    wire_resistance_ohm: float = 0.005
    arc_resistance_ohm: float = 0.010
    inductance_h: float = 2e-6
    arc_voltage_v: float = 2.0  # constant electrode-sheath drop

    @property
    def total_resistance_ohm(self) -> float:
        return self.contact_resistance_ohm + self.wire_resistance_ohm + self.arc_resistance_ohm


@dataclass(frozen=True)
class SimConfig:
    params: ProcessParams = ProcessParams()
    pulse_period_ms: float = 4.0
    pulse_duration_ms: float = 1.0
    detach_duration_ms: float = 1.0
    pulse_current_a: float = 400.0
    detach_current_a: float = 100.0
    base_current_a: float = 5.0
    terminal_voltage_v: Optional[float] = None  # defaults to params.voltage_setpoint
    circuit: CircuitConfig = CircuitConfig()
    sample_rate_hz: float = 100_000.0
    noise_std_current_a: float = 0.5
    noise_std_voltage_v: float = 0.2
    missed_detachment_prob: float = 0.0
    short_circuit_prob: float = 0.0
    wear_rate_ohm_per_s: float = 1e-6
    heat_band: tuple[float, float] = (70.0, 135.0)  # W per cm/min
    anomaly_nok_fraction: float = 0.15
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for p in (self.missed_detachment_prob, self.short_circuit_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("anomaly probabilities must lie in [0, 1]")
        if self.pulse_current_a <= self.base_current_a:
            raise ValueError("pulse current must exceed base current")
        for v in (self.pulse_period_ms, self.pulse_current_a, self.base_current_a,
                  self.sample_rate_hz):
            if v <= 0:
                raise ValueError("electrical quantities must be positive")

    @property
    def terminal_voltage(self) -> float:
        return self.terminal_voltage_v if self.terminal_voltage_v is not None \
            else self.params.voltage_setpoint

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["heat_band"] = list(self.heat_band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["params"] = ProcessParams.from_dict(d.get("params", {}))
        d["circuit"] = CircuitConfig(**d.get("circuit", {}))
        if "heat_band" in d:
            d["heat_band"] = tuple(d["heat_band"])
        return cls(**d)


@dataclass(frozen=True)
class CycleEvent:
    """Ground-truth markers for one generated cycle (absolute sample indices)."""

    onset: int
    plateau_onset: int
    base_onset: int
    end: int
    anomaly: str = "none"  # none | missed_detachment | short_circuit


@dataclass
class SimEventLog:
    cycles: list[CycleEvent] = field(default_factory=list)
    power_sum: float = 0.0  # clean I*V integrated over emitted samples
    n_samples: int = 0

    def anomaly_fraction(self) -> float:
        if not self.cycles:
            return 0.0
        bad = sum(1 for c in self.cycles if c.anomaly != "none")
        return bad / len(self.cycles)

    def mean_power(self) -> float:
        return self.power_sum / self.n_samples if self.n_samples else 0.0


@dataclass
class WearState:
    """Contact-resistance wear; drift never decreases within a run."""

    contact_resistance_drift: float = 0.0

    def advance(self, rate_ohm_per_s: float, dt_s: float) -> None:
        self.contact_resistance_drift += max(0.0, rate_ohm_per_s * dt_s)


class WeldSimulator:
    """Single-owner stream generator; one instance per stream.

    Randomness uses numpy's PCG64 generator seeded from ``cfg.rng_seed``;
    all per-cycle draws happen in a fixed order at cycle-generation time,
    so outputs are reproducible and independent of chunk sizing.
    """

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
        self.wear = WearState()
        self.log = SimEventLog()
        self._params = cfg.params
        self._pending_params: Optional[ProcessParams] = None
        self._cursor = 0  # absolute index of next sample to emit
        self._generated = 0  # absolute index one past the last generated sample
        self._buf_i: list[np.ndarray] = []
        self._buf_v: list[np.ndarray] = []
        self._last_current = cfg.base_current_a

    @property
    def params(self) -> ProcessParams:
        return self._params

    def set_params(self, params: ProcessParams) -> None:
        """Replace process parameters; takes effect at the next cycle onset."""
        self._pending_params = params

    def step(self, max_samples: int) -> tuple[WeldSeries, list[CycleEvent]]:
        """Emit up to ``max_samples`` further samples plus newly seen events."""
        if max_samples <= 0:
            return WeldSeries(self.cfg.sample_rate_hz, np.zeros(0), np.zeros(0),
                              start_index=self._cursor), []
        n_events_before = len(self.log.cycles)
        while self._generated < self._cursor + max_samples:
            self._generate_cycle()
        cur = np.concatenate(self._buf_i)
        vol = np.concatenate(self._buf_v)
        take = max_samples
        chunk = WeldSeries(self.cfg.sample_rate_hz, cur[:take], vol[:take],
                           start_index=self._cursor)
        self._buf_i = [cur[take:]]
        self._buf_v = [vol[take:]]
        self._cursor += take
        return chunk, self.log.cycles[n_events_before:]

    # -- internals ----------------------------------------------------------

    def _generate_cycle(self) -> None:
        cfg = self.cfg
        if self._pending_params is not None:
            self._params = self._pending_params
            self._pending_params = None
        fs = cfg.sample_rate_hz
        n = int(round(cfg.pulse_period_ms * fs / 1000.0))
        n_pulse = int(round(cfg.pulse_duration_ms * fs / 1000.0))
        n_det = int(round(cfg.detach_duration_ms * fs / 1000.0))
        onset = self._generated
        t0 = onset / fs
        self.wear.contact_resistance_drift = cfg.wear_rate_ohm_per_s * t0

        # fixed draw order: anomaly coin flips, then short-circuit geometry,
        # then the two noise arrays
        u_miss = self.rng.random()
        u_short = self.rng.random()
        anomaly = "none"
        if u_miss < cfg.missed_detachment_prob:
            anomaly = "missed_detachment"
        elif u_short < cfg.short_circuit_prob:
            anomaly = "short_circuit"
        sc_offset = self.rng.random()
        sc_duration = self.rng.uniform(0.3e-3, 1.0e-3)

        scale = self._params.wire_feed_rate / NOMINAL_WIRE_FEED_RATE
        i_pulse = cfg.pulse_current_a * scale
        i_det = cfg.detach_current_a * scale
        i_base = cfg.base_current_a
        if anomaly == "missed_detachment":
            i_det = i_pulse

        r_total = cfg.circuit.total_resistance_ohm + self.wear.contact_resistance_drift
        tau = cfg.circuit.inductance_h / r_total
        k = np.arange(n)
        i_clean = np.empty(n)
        i0 = self._last_current
        for start, stop, target in ((0, n_pulse, i_pulse),
                                    (n_pulse, n_pulse + n_det, i_det),
                                    (n_pulse + n_det, n, i_base)):
            seg = k[start:stop] - start
            i_clean[start:stop] = target + (i0 - target) * np.exp(-(seg / fs) / tau)
            if stop > start:
                i0 = i_clean[stop - 1]
        self._last_current = i0

        v_k = cfg.terminal_voltage
        v_clean = v_k - i_clean * r_total - cfg.circuit.arc_voltage_v

        if anomaly == "short_circuit":
            # voltage collapse with current spike somewhere in the detachment window
            dur = int(round(sc_duration * fs))
            lo = n_pulse + int(sc_offset * max(1, n_det - dur))
            hi = min(n, lo + dur)
            v_clean[lo:hi] = 0.5
            i_clean[lo:hi] = 1.5 * i_pulse

        # ground-truth markers from the clean trajectory
        amp = i_pulse - i_base
        near_pulse = np.nonzero(i_clean >= i_pulse - 0.02 * amp)[0]
        plateau_onset = int(near_pulse[0]) if len(near_pulse) else n_pulse
        p_clean = i_clean * v_clean
        bound = 0.05 * float(p_clean.max())
        above = np.nonzero(p_clean > bound)[0]
        base_onset = int(above[-1]) + 1 if len(above) else 0

        self.log.cycles.append(CycleEvent(
            onset=onset,
            plateau_onset=onset + plateau_onset,
            base_onset=onset + base_onset,
            end=onset + n,
            anomaly=anomaly,
        ))
        self.log.power_sum += float(p_clean.sum())
        self.log.n_samples += n

        i_out = i_clean + self.rng.normal(0.0, cfg.noise_std_current_a, n) \
            if cfg.noise_std_current_a > 0 else i_clean
        v_out = v_clean + self.rng.normal(0.0, cfg.noise_std_voltage_v, n) \
            if cfg.noise_std_voltage_v > 0 else v_clean
        i_out = np.maximum(i_out, 0.0)

        self._buf_i.append(i_out)
        self._buf_v.append(v_out)
        self._generated += n


def simulate_weld(
    cfg: SimConfig, duration_s: float, weld_id: str = ""
) -> tuple[WeldSeries, SimEventLog, QualityLabel]:
    """Run a complete weld of ``duration_s`` seconds and label it."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    sim = WeldSimulator(cfg)
    total = int(round(duration_s * cfg.sample_rate_hz))
    series, _ = sim.step(total)
    series = replace(series, weld_id=weld_id)
    # keep only cycles that start within the emitted window
    sim.log.cycles = [c for c in sim.log.cycles if c.onset < total]
    label = quality_oracle(cfg, sim.log)
    return series, sim.log, label


def heat_input_proxy(cfg: SimConfig, log: SimEventLog) -> float:
    """Mean clean electrical power divided by welding speed."""
    return log.mean_power() / cfg.params.welding_speed


def quality_oracle(cfg: SimConfig, log: SimEventLog) -> QualityLabel:
    """NOK when too many cycles misbehave or the heat input leaves its band."""
    if log.anomaly_fraction() > cfg.anomaly_nok_fraction:
        return QualityLabel.NOK
    lo, hi = cfg.heat_band
    proxy = heat_input_proxy(cfg, log)
    if not (lo <= proxy <= hi):
        return QualityLabel.NOK
    return QualityLabel.OK
