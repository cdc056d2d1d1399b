"""Continual-learning support: importance estimation, drift-anchored
retraining and out-of-distribution detection of process parameters.

After finishing training on a task, the classifier parameters are frozen
into a TaskSnapshot together with per-parameter importance weights: the
diagonal Fisher information (EWC) or the mean absolute gradient of the
squared output norm (MAS). Retraining on a new regime adds a quadratic
penalty pulling important parameters back toward every snapshot.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import nn
from .signal import ProcessParams


class StructureMismatch(Exception):
    pass


@dataclass
class ParamStats:
    """Gaussian summary of the ProcessParams seen while training one task."""

    mean: np.ndarray  # over ProcessParams.NUMERIC_FIELDS
    std: np.ndarray
    equipment_ids: list[str]

    @classmethod
    def from_params(cls, params: Sequence[ProcessParams]) -> "ParamStats":
        mat = np.stack([p.numeric_vector() for p in params])
        std = mat.std(axis=0)
        return cls(mean=mat.mean(axis=0), std=np.where(std > 0, std, 1e-12),
                   equipment_ids=sorted({p.equipment_id for p in params}))

    def z_scores(self, record: ProcessParams) -> np.ndarray:
        return (record.numeric_vector() - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "equipment_ids": self.equipment_ids}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamStats":
        return cls(mean=np.array(d["mean"]), std=np.array(d["std"]),
                   equipment_ids=list(d["equipment_ids"]))


@dataclass
class TaskSnapshot:
    """Consolidated parameters and importance weights of one finished task."""

    task_id: str
    theta: nn.ParamSet
    importance: nn.ParamSet  # same structure, entries >= 0
    param_stats: ParamStats

    def __post_init__(self) -> None:
        nn.check_structure(self.theta, self.importance)


@dataclass(frozen=True)
class ContinualConfig:
    regularizer: str = "ewc"  # ewc | mas
    lam: float = 100.0
    fisher_samples: int = 200
    drift_threshold_sigma: float = 3.0
    train: nn.TrainConfig = nn.TrainConfig(epochs=20)

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.fisher_samples < 1:
            raise ValueError("fisher_samples must be >= 1")
        if self.regularizer not in ("ewc", "mas"):
            raise ValueError("regularizer must be 'ewc' or 'mas'")


@dataclass
class DriftAlert:
    """Out-of-distribution process parameters; recommends a model update."""

    offending_fields: dict  # field name -> z-score
    unseen_equipment: Optional[str]
    nearest_task: str
    timestamp: float
    recommended_action: str = "model_update"

    def to_dict(self) -> dict:
        return {
            "offending_fields": self.offending_fields,
            "unseen_equipment": self.unseen_equipment,
            "nearest_task": self.nearest_task,
            "timestamp": self.timestamp,
            "recommended_action": self.recommended_action,
        }


# ---------------------------------------------------------------------------
# Importance estimation


def estimate_fisher(
    params: nn.ParamSet, X: np.ndarray, y: np.ndarray,
    fisher_samples: int = 200, seed: int = 0,
) -> nn.ParamSet:
    """Diagonal Fisher: mean squared per-example gradient of log p(label|x)."""
    n = len(X)
    if n == 0:
        raise nn.EmptyDataset("fisher estimation needs data")
    rng = np.random.Generator(np.random.PCG64(seed))
    take = min(fisher_samples, n)
    idx = rng.choice(n, size=take, replace=False) if take < n else np.arange(n)
    fisher = nn.zeros_like_params(params)
    for j in idx:
        logits, cache = nn.classifier_forward(params, X[j][None], return_cache=True)
        p = nn.softmax(logits)
        dlogits = p.copy()
        dlogits[0, y[j]] -= 1.0  # -d log p / dlogits
        grads = nn.classifier_backward(params, cache, dlogits)
        for k in fisher:
            fisher[k] += grads[k] ** 2
    for k in fisher:
        fisher[k] /= take
    return fisher


def estimate_mas_importance(params: nn.ParamSet, X: np.ndarray) -> nn.ParamSet:
    """MAS: mean absolute per-example gradient of the squared logit norm."""
    n = len(X)
    if n == 0:
        raise nn.EmptyDataset("MAS estimation needs data")
    omega = nn.zeros_like_params(params)
    for j in range(n):
        logits, cache = nn.classifier_forward(params, X[j][None], return_cache=True)
        grads = nn.classifier_backward(params, cache, 2.0 * logits)
        for k in omega:
            omega[k] += np.abs(grads[k])
    for k in omega:
        omega[k] /= n
    return omega


def penalized_loss(
    theta: nn.ParamSet, snapshots: Sequence[TaskSnapshot], lam: float,
) -> tuple[float, nn.ParamSet]:
    """(lam/2) sum over snapshots of importance-weighted squared drift."""
    total = 0.0
    grads = nn.zeros_like_params(theta)
    for snap in snapshots:
        try:
            nn.check_structure(theta, snap.theta)
        except nn.ShapeMismatch as e:
            raise StructureMismatch(str(e)) from e
        for k in theta:
            diff = theta[k] - snap.theta[k]
            total += 0.5 * lam * float((snap.importance[k] * diff ** 2).sum())
            grads[k] += lam * snap.importance[k] * diff
    return total, grads


def make_penalty(snapshots: Sequence[TaskSnapshot], lam: float) -> nn.Penalty:
    return lambda theta: penalized_loss(theta, snapshots, lam)


# ---------------------------------------------------------------------------
# Drift detection


def detect_drift(
    snapshots: Sequence[TaskSnapshot],
    record: ProcessParams,
    threshold_sigma: float = 3.0,
) -> Optional[DriftAlert]:
    """Alert when a record is out of distribution for every known task."""
    if not snapshots:
        raise ValueError("need at least one task snapshot with parameter stats")
    best = None
    for snap in snapshots:
        z = snap.param_stats.z_scores(record)
        worst = float(np.max(np.abs(z)))
        if best is None or worst < best[0]:
            best = (worst, snap, z)
    worst, snap, z = best
    offending = {
        name: float(z[i])
        for i, name in enumerate(ProcessParams.NUMERIC_FIELDS)
        if abs(z[i]) > threshold_sigma
    }
    unseen = None
    if all(record.equipment_id not in s.param_stats.equipment_ids for s in snapshots):
        unseen = record.equipment_id
    if not offending and unseen is None:
        return None
    return DriftAlert(
        offending_fields=offending,
        unseen_equipment=unseen,
        nearest_task=snap.task_id,
        timestamp=time.time(),
    )


# ---------------------------------------------------------------------------
# Update procedure


def consolidate(
    params: nn.ParamSet,
    X: np.ndarray,
    y: np.ndarray,
    task_id: str,
    task_params: Sequence[ProcessParams],
    cfg: ContinualConfig,
) -> TaskSnapshot:
    """Freeze the current parameters and importance weights for a task."""
    if cfg.regularizer == "ewc":
        imp = estimate_fisher(params, X, y, cfg.fisher_samples, seed=cfg.train.seed)
    else:
        imp = estimate_mas_importance(params, X)
    return TaskSnapshot(
        task_id=task_id,
        theta=nn.copy_params(params),
        importance=imp,
        param_stats=ParamStats.from_params(task_params),
    )


def continual_update(
    bundle,
    X: np.ndarray,
    y: np.ndarray,
    task_params: Sequence[ProcessParams],
    cfg: ContinualConfig,
    task_id: Optional[str] = None,
) -> tuple[list[float], TaskSnapshot]:
    """Retrain the classifier on new-regime data only, anchored to snapshots.

    Mutates ``bundle`` in place: classifier weights are updated, the new
    TaskSnapshot is appended and the model version bumped. The encoder stays
    frozen (recorded in bundle metadata). Returns the loss history and the
    appended snapshot.
    """
    if len(X) == 0:
        raise nn.EmptyDataset("continual update needs labeled data")
    penalty = make_penalty(bundle.snapshots, cfg.lam) if bundle.snapshots else None
    history = nn.train_classifier(bundle.classifier, X, y, cfg.train, penalty=penalty)
    task_id = task_id or f"task-{len(bundle.snapshots)}"
    snap = consolidate(bundle.classifier, X, y, task_id, task_params, cfg)
    bundle.snapshots.append(snap)
    bundle.version += 1
    bundle.metadata["encoder_frozen"] = True
    bundle.metadata.setdefault("tasks", []).append(task_id)
    return history, snap
