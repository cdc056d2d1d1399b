"""Two-task forgetting benchmark: nominal regime vs +40% wire feed rate.

Task A welds run at the nominal wire feed rate, task B at 1.4x. Weld labels
come from the simulator oracle (anomaly-heavy welds turn NOK). The initial
model trains and consolidates on task A; each benchmark run then fine-tunes
on task B data only, either naively (lambda = 0) or anchored by EWC / MAS,
and reports accuracies on both tasks' held-out welds.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np

from . import nn, pipeline
from .continual import ContinualConfig, continual_update
from .model_io import ModelBundle
from .signal import ProcessParams
from .simulator import SimConfig, simulate_weld

TASK_B_WFR_FACTOR = 1.4


def clone_bundle(bundle: ModelBundle) -> ModelBundle:
    out = copy.copy(bundle)
    out.classifier = nn.copy_params(bundle.classifier)
    out.snapshots = list(bundle.snapshots)
    out.metadata = copy.deepcopy(bundle.metadata)
    return out


def make_task_welds(
    wfr_center: float,
    n_welds: int,
    duration_s: float,
    seed: int,
    equipment_id: str = "rig-0",
    nok_fraction: float = 0.5,
    anomaly_prob: float = 0.25,
    ok_anomaly_prob: float = 0.08,
) -> list[pipeline.WeldCycles]:
    """Simulate one regime; roughly ``nok_fraction`` of welds get heavy anomalies.

    Both classes sit near the oracle's anomaly threshold so the learned
    boundary is fine-grained; that is what makes naive fine-tuning on a
    shifted regime actually forget.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    welds = []
    for k in range(n_welds):
        nok = rng.random() < nok_fraction
        params = ProcessParams(
            wire_feed_rate=float(wfr_center * rng.uniform(0.96, 1.04)),
            welding_speed=float(30.0 * rng.uniform(0.95, 1.05)),
            equipment_id=equipment_id,
        )
        cfg = SimConfig(
            params=params,
            missed_detachment_prob=anomaly_prob if nok else ok_anomaly_prob,
            rng_seed=int(rng.integers(0, 2**31)),
        )
        series, _, label = simulate_weld(cfg, duration_s, weld_id=f"{equipment_id}-w{k}")
        welds.append(pipeline.prepare_weld(series, params, label))
    return welds


@dataclass
class BenchRow:
    regularizer: str
    lam: float
    task_a_accuracy: float
    task_b_accuracy: float


@dataclass
class BenchResult:
    rows: list[BenchRow]
    naive: BenchRow
    initial_task_a_accuracy: float

    def best_regularized(self) -> BenchRow:
        ok = [r for r in self.rows if r.lam > 0]
        return max(ok, key=lambda r: (r.task_a_accuracy, r.task_b_accuracy))


def run_forgetting_benchmark(
    regularizer: str = "ewc",
    lambdas: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0),
    n_welds: int = 24,
    duration_s: float = 1.0,
    seed: int = 0,
    update_epochs: int = 60,
    update_lr: float = 1e-2,
    wfr_nominal: float = 8.0,
) -> BenchResult:
    base_cc = ContinualConfig(
        regularizer=regularizer,
        train=nn.TrainConfig(epochs=update_epochs, lr=update_lr, seed=seed),
    )

    task_a = make_task_welds(wfr_nominal, n_welds, duration_s, seed=seed + 1)
    task_b = make_task_welds(wfr_nominal * TASK_B_WFR_FACTOR, n_welds, duration_s,
                             seed=seed + 2)
    a_train, a_test = pipeline.split_welds(task_a, 0.33, seed=seed)
    b_train, b_test = pipeline.split_welds(task_b, 0.33, seed=seed)

    res = pipeline.train_initial_model(
        a_train, seed=seed, holdout_fraction=0.0,
        clf_cfg=nn.TrainConfig(epochs=40, lr=3e-3, seed=seed),
        continual_cfg=base_cc, task_id="task-a")
    base = res.bundle
    encoder, normalizer = base.encoder(), base.normalizer

    ds_a = pipeline.build_sequences(a_test, encoder, normalizer)
    ds_b = pipeline.build_sequences(b_test, encoder, normalizer)
    ds_b_train = pipeline.build_sequences(b_train, encoder, normalizer)
    initial_a = pipeline.accuracy(base.classifier, ds_a)

    def run(lam: float) -> BenchRow:
        bundle = clone_bundle(base)
        cc = replace(base_cc, lam=lam)
        continual_update(bundle, ds_b_train.X, ds_b_train.y,
                         [w.params for w in b_train], cc, task_id="task-b")
        return BenchRow(
            regularizer=regularizer,
            lam=lam,
            task_a_accuracy=pipeline.accuracy(bundle.classifier, ds_a),
            task_b_accuracy=pipeline.accuracy(bundle.classifier, ds_b),
        )

    naive = run(0.0)
    rows = [naive] + [run(lam) for lam in lambdas]
    return BenchResult(rows=rows, naive=naive, initial_task_a_accuracy=initial_a)
