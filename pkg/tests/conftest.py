"""Shared fixtures: simulated welds and a small trained model bundle."""

from __future__ import annotations

import numpy as np
import pytest

from weldwatch import benchmark, pipeline
from weldwatch.nn import TrainConfig
from weldwatch.signal import ProcessParams
from weldwatch.simulator import SimConfig, simulate_weld


def clean_sim_config(**overrides) -> SimConfig:
    """Noise-free, anomaly-free simulator config for exact-value oracles."""
    base = dict(noise_std_current_a=0.0, noise_std_voltage_v=0.0,
                wear_rate_ohm_per_s=0.0)
    base.update(overrides)
    return SimConfig(**base)


@pytest.fixture(scope="session")
def nominal_weld():
    """One second of nominal-noise simulator output with its event log."""
    cfg = SimConfig(rng_seed=42)
    series, log, label = simulate_weld(cfg, 1.0, weld_id="nominal")
    return cfg, series, log, label


@pytest.fixture(scope="session")
def train_welds():
    """Mixed OK/NOK welds for training, prepared into cycle features."""
    return benchmark.make_task_welds(8.0, 14, 1.0, seed=11)


@pytest.fixture(scope="session")
def small_bundle(train_welds):
    """A quickly trained but functional model bundle."""
    res = pipeline.train_initial_model(
        train_welds,
        ae_cfg=TrainConfig(epochs=4, lr=1e-3, seed=0),
        clf_cfg=TrainConfig(epochs=10, lr=3e-3, seed=0),
        holdout_fraction=0.0,
        seed=0,
    )
    return res.bundle


@pytest.fixture()
def nominal_params() -> ProcessParams:
    return ProcessParams()


def jittered_params(rng: np.random.Generator,
                    equipment_id: str = "rig-0") -> ProcessParams:
    """Draw params with the small multiplicative jitter of a real campaign."""
    return ProcessParams(
        wire_feed_rate=float(8.0 * rng.uniform(0.96, 1.04)),
        welding_speed=float(30.0 * rng.uniform(0.95, 1.05)),
        gas_flow_rate=float(15.0 * rng.uniform(0.97, 1.03)),
        equipment_id=equipment_id,
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance criteria verdict lines past output capturing."""
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
