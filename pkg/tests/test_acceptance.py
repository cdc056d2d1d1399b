"""Acceptance gate: one test per release criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline.
Thresholds here are contractual; do not loosen them to make a run green.
"""

import threading
import time

import numpy as np

import test_model_io
from weldwatch import benchmark, nn, pipeline
from weldwatch.continual import (ContinualConfig, ParamStats, TaskSnapshot,
                                 continual_update, detect_drift)
from weldwatch.model_io import checkpoint_load, checkpoint_save
from weldwatch.service import OnlineEngine, run_offline
from weldwatch.signal import (PhaseNotFound, ProcessParams, segment_cycles,
                              split_phases)
from weldwatch.simulator import SimConfig, simulate_weld
from weldwatch.store import SeriesWriter, WeldStore, read_series

from conftest import clean_sim_config, jittered_params

RATE = 100_000.0


REPORT_LINES: list[str] = []  # echoed in the terminal summary (see conftest)


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    REPORT_LINES.append(line)
    print("\n" + line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------


def test_gradient_correctness():
    """Analytic gradients match central finite differences on all three models."""
    t0 = time.perf_counter()
    worst = 0.0
    n_params = 0
    for seed in range(5):
        rng = np.random.Generator(np.random.PCG64(seed))

        # plain dense layer, mean squared error
        W = rng.normal(0, 0.3, (4, 6))
        b = rng.normal(0, 0.3, 4)
        Xd = rng.normal(size=(7, 6))
        T = rng.normal(size=(7, 4))

        def dense_loss(p):
            Y = Xd @ p["W"].T + p["b"]
            diff = Y - T
            dY = 2.0 * diff / diff.size
            return float((diff ** 2).mean()), {"W": dY.T @ Xd, "b": dY.sum(axis=0)}

        # autoencoder and LSTM classifier at small width
        ae = nn.init_autoencoder(nn.AutoencoderSpec(12, 3, hidden=5), seed=seed)
        Xa = rng.normal(size=(9, 12))
        clf = nn.init_classifier(nn.ClassifierSpec(input_dim=5, hidden=6), seed=seed)
        Xc = rng.normal(size=(4, 6, 5))
        yc = rng.integers(0, 2, 4)

        models = [
            ({"W": W, "b": b}, dense_loss),
            (ae, lambda p: nn.autoencoder_loss_and_grads(p, Xa)),
            (clf, lambda p: nn.classifier_loss_and_grads(p, Xc, yc)),
        ]
        for params, loss_fn in models:
            n_params = max(n_params, sum(v.size for v in params.values()))
            rep = nn.grad_check(loss_fn, params)
            worst = max(worst, rep.max_rel_error)
            assert rep.passed, rep
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30.0 and n_params <= 500
    report("gradient correctness", ok,
           f"max rel err {worst:.2e} (< 1e-4), largest model {n_params} params, "
           f"{elapsed:.1f}s (< 30s)")


def test_segmentation_fidelity():
    """Onset recall, zero-noise exactness, base-phase power bound, throughput."""
    matched = total = 0
    bound_violations = 0
    t_proc = 0.0
    for k in range(100):
        series, log, _ = simulate_weld(SimConfig(rng_seed=1000 + k), 2.0)
        t0 = time.perf_counter()
        bounds = segment_cycles(series)
        splits = []
        for b in bounds:
            try:
                splits.append((b, split_phases(series, b)))
            except PhaseNotFound:
                pass  # anomalous cycle rejected; not an accepted cycle
        t_proc += time.perf_counter() - t0
        onsets = np.array([b.start_idx for b in bounds] + [bounds[-1].end_idx])
        truth = np.array([c.onset for c in log.cycles])
        matched += sum(np.min(np.abs(onsets - t)) <= 10 for t in truth)
        total += len(truth)
        for b, sp in splits:
            power = series.current * series.voltage
            pmax = power[b.start_idx : b.end_idx].max()
            if power[sp.base[0] : sp.base[1]].max() > 0.05 * pmax + 1e-9:
                bound_violations += 1
    recall = matched / total

    series, log, _ = simulate_weld(clean_sim_config(rng_seed=5), 2.0)
    bounds = segment_cycles(series)
    onsets = np.array([b.start_idx for b in bounds] + [bounds[-1].end_idx])
    clean = [t for t in (c.onset for c in log.cycles)
             if np.min(np.abs(onsets - t)) <= 10]
    clean_recall = len(clean) / len(log.cycles)

    speedup = (100 * 2.0) / t_proc
    ok = (recall >= 0.99 and clean_recall == 1.0
          and bound_violations == 0 and speedup >= 2.0)
    report("segmentation fidelity", ok,
           f"recall {recall:.4f} (>= 0.99), zero-noise {clean_recall:.4f} (= 1), "
           f"power-bound violations {bound_violations} (= 0), "
           f"{speedup:.0f}x real time (>= 2x)")


def test_online_offline_equivalence(small_bundle):
    """Random 1-4096-sample chunking reproduces the batch pipeline bit for bit."""
    series, _, _ = simulate_weld(SimConfig(rng_seed=77, missed_detachment_prob=0.05),
                                 60.0)
    offline = run_offline(small_bundle, series)

    rng = np.random.Generator(np.random.PCG64(9))
    eng = OnlineEngine(small_bundle, RATE)
    pos = 0
    while pos < len(series):
        n = int(rng.integers(1, 4097))
        eng.ingest(series.current[pos : pos + n], series.voltage[pos : pos + n])
        pos += n
    eng.finish()

    same_bounds = eng.boundaries == offline.boundaries
    same_feats = len(eng.predictions) == len(offline.predictions) and all(
        np.array_equal(a.matrix, b.matrix)
        for a, b in zip(eng.predictions, offline.predictions))
    same_logits = all(a.p_ok == b.p_ok  # bitwise float equality: 0 ulp
                      for a, b in zip(eng.predictions, offline.predictions))
    ok = same_bounds and same_feats and same_logits
    report("online/offline equivalence", ok,
           f"{len(offline.boundaries)} boundaries and {len(offline.predictions)} "
           f"predictions identical over 60s (bounds {same_bounds}, "
           f"features {same_feats}, logits {same_logits})")


def test_learning_sanity():
    """Autoencoder converges on real detachment windows; classifier separates."""
    t0 = time.perf_counter()

    windows = []
    for seed in (0, 1):
        series, _, _ = simulate_weld(SimConfig(rng_seed=seed), 4.5)
        w = pipeline.prepare_weld(series, ProcessParams(), None)
        windows.append(w.windows)
    raw = np.concatenate(windows)[:2000]
    assert len(raw) == 2000
    scaler = nn.ChannelScaler.fit(raw)
    X = scaler.transform(raw).reshape(len(raw), -1)

    ae = nn.init_autoencoder(nn.AutoencoderSpec(X.shape[1], 8, hidden=32), seed=0)
    initial = nn.autoencoder_loss_and_grads(ae, X)[0]
    nn.train_autoencoder(ae, X, nn.TrainConfig(epochs=10, lr=1e-2, seed=0))
    final = nn.autoencoder_loss_and_grads(ae, X)[0]

    rng = np.random.Generator(np.random.PCG64(3))
    y = rng.integers(0, 2, 2000)
    Xc = rng.normal(size=(2000, 16, 10)) + np.where(y == 0, -0.8, 0.8)[:, None, None]
    clf = nn.init_classifier(nn.ClassifierSpec(input_dim=10, hidden=8), seed=0)
    nn.train_classifier(clf, Xc[:1500], y[:1500],
                        nn.TrainConfig(epochs=10, lr=1e-2, seed=0))
    pred = nn.classifier_forward(clf, Xc[1500:]).argmax(axis=1)
    acc = float((pred == y[1500:]).mean())

    elapsed = time.perf_counter() - t0
    ok = final <= initial / 5.0 and acc >= 0.95 and elapsed < 600.0
    report("learning sanity", ok,
           f"AE mse {initial:.3f} -> {final:.3f} (<= initial/5 = {initial / 5:.3f}), "
           f"classifier held-out {acc:.3f} (>= 0.95), {elapsed:.0f}s (< 600s)")


def test_forgetting_benchmark(small_bundle):
    """EWC/MAS retain task A after a +40% wire-feed-rate task B; lambda=0 is naive."""
    details = []
    ok = True
    for reg in ("ewc", "mas"):
        res = benchmark.run_forgetting_benchmark(regularizer=reg, seed=0)
        best = res.best_regularized()
        da = best.task_a_accuracy - res.naive.task_a_accuracy
        db = best.task_b_accuracy - res.naive.task_b_accuracy
        ok &= da >= 0.10 and db >= -0.05
        details.append(f"{reg} lam={best.lam:g} dA {da:+.3f} (>= +0.10) "
                       f"dB {db:+.3f} (>= -0.05)")

    # lambda = 0 must equal plain fine-tuning exactly (same seed)
    rng = np.random.Generator(np.random.PCG64(1))
    X = rng.normal(size=(40, small_bundle.metadata["m_w"],
                         small_bundle.clf_spec.input_dim))
    y = rng.integers(0, 2, 40)
    cfg = ContinualConfig(lam=0.0, train=nn.TrainConfig(epochs=3, seed=5))
    a = benchmark.clone_bundle(small_bundle)
    continual_update(a, X, y, [ProcessParams()] * len(y), cfg, task_id="t")
    b = nn.copy_params(small_bundle.classifier)
    nn.train_classifier(b, X, y, cfg.train)
    exact = all(np.array_equal(a.classifier[k], b[k]) for k in b)
    ok &= exact
    report("forgetting benchmark", ok,
           "; ".join(details) + f"; lambda=0 equals naive exactly: {exact}")


def test_drift_detection():
    """First-record alerting, <1% false alerts, unseen equipment always flagged."""
    rng = np.random.Generator(np.random.PCG64(0))
    train = [jittered_params(rng, "rig-0") for _ in range(1000)]
    snap = TaskSnapshot(task_id="task-0", theta={}, importance={},
                        param_stats=ParamStats.from_params(train))
    stats = snap.param_stats
    i_wfr = ProcessParams.NUMERIC_FIELDS.index("wire_feed_rate")

    import dataclasses
    shifted = dataclasses.replace(
        jittered_params(rng, "rig-0"),
        wire_feed_rate=float(stats.mean[i_wfr] + 5 * stats.std[i_wfr]))
    first = detect_drift([snap], shifted, 3.0)
    first_ok = first is not None and "wire_feed_rate" in first.offending_fields

    false_alerts = sum(
        detect_drift([snap], jittered_params(rng, "rig-0"), 3.0) is not None
        for _ in range(1000))

    unseen = all(
        detect_drift([snap], jittered_params(rng, "rig-unseen"), 3.0) is not None
        for _ in range(50))

    ok = first_ok and false_alerts / 1000 < 0.01 and unseen
    report("drift detection", ok,
           f"+5 sigma first-record alert {first_ok}, false alerts "
           f"{false_alerts}/1000 (< 1%), unseen equipment always {unseen}")


def test_persistence(tmp_path):
    """Exact round trips, CRC detection, and atomic concurrent activation."""
    rng = np.random.Generator(np.random.PCG64(0))
    cur = rng.normal(200, 30, 100_000).astype("<f4").astype(np.float64)
    vol = rng.normal(28, 2, 100_000).astype("<f4").astype(np.float64)
    p = str(tmp_path / "w.wlds")
    w = SeriesWriter(p, "w", RATE)
    w.append(cur, vol)
    w.close()
    back = read_series(p)
    series_ok = (np.array_equal(back.series.current, cur)
                 and np.array_equal(back.series.voltage, vol))

    raw = bytearray(open(p, "rb").read())
    raw[len(raw) // 2] ^= 0x10
    open(p, "wb").write(bytes(raw))
    crc_ok = read_series(p).corrupt_chunks == 1

    bundle = test_model_io.make_bundle(seed=3)
    cp = str(tmp_path / "m.ckpt")
    checkpoint_save(bundle, cp)
    Xl = rng.normal(size=(4, 6, 5))
    ckpt_ok = np.array_equal(
        nn.classifier_forward(bundle.classifier, Xl),
        nn.classifier_forward(checkpoint_load(cp).classifier, Xl))

    store = WeldStore(str(tmp_path / "store"))
    Xs = rng.normal(size=(2, 4, 5))
    expected = {}
    for s in range(10):
        path = str(tmp_path / f"v{s}.ckpt")
        checkpoint_save(test_model_io.make_bundle(seed=100 + s), path)
        v = store.register_model(path)
        expected[v] = nn.classifier_forward(checkpoint_load(path).classifier, Xs)
    store.activate(1)

    def activator():
        for v in range(2, 11):
            time.sleep(0.02)
            store.activate(v)

    t = threading.Thread(target=activator)
    t.start()
    mixed = 0
    for _ in range(10_000):
        b = store.active_model()
        v = b.metadata["registry_version"]
        if not np.array_equal(nn.classifier_forward(b.classifier, Xs), expected[v]):
            mixed += 1
    t.join()
    ok = series_ok and crc_ok and ckpt_ok and mixed == 0
    report("persistence", ok,
           f"series round trip {series_ok}, CRC bit-flip caught {crc_ok}, "
           f"checkpoint logits exact {ckpt_ok}, mixed model states {mixed}/10000 "
           f"over 10 activations (= 0)")


def test_latency(small_bundle):
    """Window-complete-to-prediction p99 stays within the real-time budget."""
    series, _, _ = simulate_weld(SimConfig(rng_seed=13), 20.0)
    eng = OnlineEngine(small_bundle, RATE)
    for lo in range(0, len(series), 5000):  # 50 ms ingest chunks
        eng.ingest(series.current[lo : lo + 5000], series.voltage[lo : lo + 5000])
    eng.finish()
    lat = np.array([p.latency_ms for p in eng.predictions])
    p99 = float(np.percentile(lat, 99))
    ok = len(lat) >= 100 and p99 <= 100.0
    report("latency", ok,
           f"p99 {p99:.1f}ms over {len(lat)} predictions (<= 100ms)")
