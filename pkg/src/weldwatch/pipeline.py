"""Batch training/evaluation pipeline shared by the CLI and the benchmark.

Welds are reduced to per-cycle detachment-phase windows and statistics,
the autoencoder is fitted on training windows, and windowed feature
sequences (weld label propagated to each window) feed the classifier.
Splits are always by weld, never by window, to avoid leakage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import features as F
from . import nn
from .continual import ContinualConfig, consolidate
from .model_io import ModelBundle
from .signal import (PhaseNotFound, ProcessParams, QualityLabel,
                     SegmentationConfig, WeldSeries, segment_cycles, split_phases)


@dataclass
class WeldCycles:
    """Per-weld intermediate: stats and resampled p2 windows of valid cycles."""

    weld_id: str
    params: ProcessParams
    label: Optional[QualityLabel]
    cycle_indices: list[int]
    stats: np.ndarray  # (n_valid, 13)
    windows: np.ndarray  # (n_valid, 2, L)


def prepare_weld(
    series: WeldSeries,
    params: ProcessParams,
    label: Optional[QualityLabel],
    seg_cfg: SegmentationConfig = SegmentationConfig(),
    resample_len: int = F.DEFAULT_RESAMPLE_LEN,
) -> WeldCycles:
    """Segment a weld and collect detachment-phase stats and windows."""
    bounds = segment_cycles(series, seg_cfg)
    indices, stats, windows = [], [], []
    for idx, b in enumerate(bounds):
        try:
            split = split_phases(series, b, seg_cfg)
        except PhaseNotFound:
            continue  # anomalous cycle: excluded, leaves an index gap
        stats.append(F.phase_stats(series, split.detachment).as_array())
        windows.append(F.resample_fixed(series, split.detachment, resample_len))
        indices.append(idx)
    return WeldCycles(
        weld_id=series.weld_id,
        params=params,
        label=label,
        cycle_indices=indices,
        stats=np.array(stats).reshape(-1, F.STAT_COUNT),
        windows=np.array(windows).reshape(-1, 2, resample_len),
    )


def weld_vectors(weld: WeldCycles, encoder: nn.Encoder) -> list[F.FeatureVector]:
    out = []
    for k, idx in enumerate(weld.cycle_indices):
        emb = encoder(weld.windows[k])
        st = F.PhaseStats(*weld.stats[k])
        out.append(F.FeatureVector(cycle_idx=idx, stats=st, embedding=emb))
    return out


@dataclass
class SequenceDataset:
    X: np.ndarray  # (n, m_w, 13 + d)
    y: np.ndarray  # (n,) 0 = OK, 1 = NOK
    weld_ids: list[str]

    def __len__(self) -> int:
        return len(self.X)


def build_sequences(
    welds: Sequence[WeldCycles],
    encoder: nn.Encoder,
    normalizer: F.Normalizer,
    m_w: int = F.DEFAULT_WINDOW,
    stride: int = F.DEFAULT_STRIDE,
) -> SequenceDataset:
    xs, ys, ids = [], [], []
    for w in welds:
        vectors = weld_vectors(w, encoder)
        if len(vectors) < m_w:
            continue
        for seq in F.build_feature_sequence(vectors, normalizer, w.weld_id, m_w, stride):
            xs.append(seq.matrix)
            ys.append(0 if w.label == QualityLabel.OK else 1)
            ids.append(w.weld_id)
    if not xs:
        raise F.NotEnoughCycles("no weld yielded a full feature window")
    return SequenceDataset(X=np.stack(xs), y=np.array(ys), weld_ids=ids)


@dataclass
class TrainResult:
    bundle: ModelBundle
    ae_history: list[float]
    clf_history: list[float]
    train_accuracy: float
    holdout_accuracy: float


def split_welds(welds: Sequence[WeldCycles], holdout_fraction: float = 0.2,
                seed: int = 0) -> tuple[list[WeldCycles], list[WeldCycles]]:
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(welds))
    n_hold = max(1, int(round(holdout_fraction * len(welds)))) if len(welds) > 1 else 0
    hold = {int(i) for i in order[:n_hold]}
    train = [w for i, w in enumerate(welds) if i not in hold]
    held = [w for i, w in enumerate(welds) if i in hold]
    return train, held


def accuracy(params: nn.ParamSet, ds: SequenceDataset, batch: int = 256) -> float:
    correct = 0
    for lo in range(0, len(ds), batch):
        logits = nn.classifier_forward(params, ds.X[lo : lo + batch])
        correct += int((np.argmax(logits, axis=1) == ds.y[lo : lo + batch]).sum())
    return correct / len(ds)


def train_initial_model(
    welds: Sequence[WeldCycles],
    embed_dim: int = F.DEFAULT_EMBED_DIM,
    ae_hidden: int = 64,
    clf_hidden: int = 32,
    m_w: int = F.DEFAULT_WINDOW,
    stride: int = F.DEFAULT_STRIDE,
    ae_cfg: nn.TrainConfig = nn.TrainConfig(epochs=10, lr=1e-3),
    clf_cfg: nn.TrainConfig = nn.TrainConfig(epochs=30, lr=3e-3),
    holdout_fraction: float = 0.2,
    seed: int = 0,
    continual_cfg: Optional[ContinualConfig] = ContinualConfig(),
    task_id: str = "task-0",
) -> TrainResult:
    """Full initial training: autoencoder, then classifier, then metrics."""
    train_welds, holdout_welds = split_welds(welds, holdout_fraction, seed)
    if not train_welds:
        raise nn.EmptyDataset("no training welds")
    resample_len = train_welds[0].windows.shape[2]

    all_windows = np.concatenate([w.windows for w in train_welds])
    scaler = nn.ChannelScaler.fit(all_windows)
    flat = scaler.transform(all_windows).reshape(len(all_windows), -1)
    ae_spec = nn.AutoencoderSpec(input_dim=2 * resample_len, bottleneck=embed_dim,
                                 hidden=ae_hidden)
    ae_params = nn.init_autoencoder(ae_spec, seed=seed)
    ae_history = nn.train_autoencoder(ae_params, flat, ae_cfg)
    encoder = nn.Encoder(ae_params, ae_spec, scaler)

    # normalizer over every training-weld feature vector
    train_vecs = []
    for w in train_welds:
        train_vecs.extend(v.as_array() for v in weld_vectors(w, encoder))
    normalizer = F.Normalizer.fit(np.stack(train_vecs))

    train_ds = build_sequences(train_welds, encoder, normalizer, m_w, stride)
    clf_spec = nn.ClassifierSpec(input_dim=F.STAT_COUNT + embed_dim, hidden=clf_hidden)
    clf_params = nn.init_classifier(clf_spec, seed=seed)
    clf_history = nn.train_classifier(clf_params, train_ds.X, train_ds.y, clf_cfg)

    bundle = ModelBundle(
        version=1,
        ae_spec=ae_spec,
        clf_spec=clf_spec,
        autoencoder=ae_params,
        classifier=clf_params,
        normalizer=normalizer,
        scaler=scaler,
        metadata={
            "encoder_frozen": True,
            "m_w": m_w,
            "stride": stride,
            "seed": seed,
            "train_welds": sorted(w.weld_id for w in train_welds),
        },
    )
    if continual_cfg is not None:
        bundle.snapshots.append(consolidate(
            clf_params, train_ds.X, train_ds.y, task_id,
            [w.params for w in train_welds], continual_cfg))
        bundle.metadata["tasks"] = [task_id]
    train_acc = accuracy(clf_params, train_ds)
    if holdout_welds:
        try:
            hold_ds = build_sequences(holdout_welds, encoder, normalizer, m_w, stride)
            hold_acc = accuracy(clf_params, hold_ds)
        except F.NotEnoughCycles:
            hold_acc = float("nan")
    else:
        hold_acc = float("nan")
    return TrainResult(bundle=bundle, ae_history=ae_history, clf_history=clf_history,
                       train_accuracy=train_acc, holdout_accuracy=hold_acc)


def evaluate(bundle: ModelBundle, welds: Sequence[WeldCycles],
             m_w: Optional[int] = None, stride: Optional[int] = None):
    """Accuracy, confusion matrix and per-weld mean p_ok."""
    m_w = m_w or bundle.metadata.get("m_w", F.DEFAULT_WINDOW)
    stride = stride or bundle.metadata.get("stride", F.DEFAULT_STRIDE)
    ds = build_sequences(welds, bundle.encoder(), bundle.normalizer, m_w, stride)
    logits = np.concatenate([
        nn.classifier_forward(bundle.classifier, ds.X[lo : lo + 256])
        for lo in range(0, len(ds), 256)
    ])
    probs = nn.softmax(logits)
    pred = np.argmax(logits, axis=1)
    cm = np.zeros((2, 2), dtype=int)
    for t, p in zip(ds.y, pred):
        cm[t, p] += 1
    per_weld: dict[str, list[float]] = {}
    for wid, p in zip(ds.weld_ids, probs[:, 0]):
        per_weld.setdefault(wid, []).append(float(p))
    return {
        "accuracy": float((pred == ds.y).mean()),
        "confusion": cm,
        "per_weld_p_ok": {k: float(np.mean(v)) for k, v in per_weld.items()},
        "n_sequences": len(ds),
    }
