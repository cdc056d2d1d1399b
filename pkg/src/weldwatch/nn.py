"""Self-contained neural kernel: dense nets, LSTM, training, grad checks.

Everything runs on float64 numpy; models at this scale (tens of thousands of
parameters) need no framework, and exact analytic gradients are verified
against central finite differences in the test suite. A ParamSet is an
insertion-ordered dict name -> ndarray; the stable order matters because
continual-learning importance weights are aligned by structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ParamSet = dict  # name -> np.ndarray, insertion-ordered

Penalty = Callable[[ParamSet], tuple[float, ParamSet]]


class ShapeMismatch(Exception):
    pass


class EmptyDataset(Exception):
    pass


# ---------------------------------------------------------------------------
# Elementary ops


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_ACTS = {
    "linear": lambda z: z,
    "tanh": np.tanh,
    "sigmoid": sigmoid,
}


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, activation: str = "linear") -> np.ndarray:
    """act(W x + b); x may be a vector or a (batch, in) matrix."""
    if W.shape[1] != np.shape(x)[-1] or W.shape[0] != len(b):
        raise ShapeMismatch(f"dense: W{W.shape} b{b.shape} x{np.shape(x)}")
    if activation not in _ACTS:
        raise ValueError(f"unknown activation {activation!r}")
    return _ACTS[activation](x @ W.T + b)


def lstm_step(
    Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray,
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step; gate layout along axis 0 of Wx/Wh/b is [i, f, g, o]."""
    H = Wh.shape[1]
    if Wx.shape[0] != 4 * H or Wx.shape[1] != np.shape(x_t)[-1]:
        raise ShapeMismatch(f"lstm: Wx{Wx.shape} Wh{Wh.shape} x{np.shape(x_t)}")
    z = x_t @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


# ---------------------------------------------------------------------------
# ParamSet helpers


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    s = np.sqrt(1.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


def zeros_like_params(params: ParamSet) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: ParamSet) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def check_structure(a: ParamSet, b: ParamSet) -> None:
    if list(a.keys()) != list(b.keys()) or any(a[k].shape != b[k].shape for k in a):
        raise ShapeMismatch("parameter sets are not structurally aligned")


def param_count(params: ParamSet) -> int:
    return sum(v.size for v in params.values())


# ---------------------------------------------------------------------------
# Autoencoder (2L -> hidden -> d -> hidden -> 2L, tanh hidden, linear
# bottleneck and output)


@dataclass(frozen=True)
class AutoencoderSpec:
    input_dim: int  # 2 * resample length
    bottleneck: int = 8
    hidden: int = 64

    def __post_init__(self) -> None:
        if self.bottleneck >= self.input_dim:
            raise ValueError("bottleneck must be narrower than the input")


def init_autoencoder(spec: AutoencoderSpec, seed: int = 0) -> ParamSet:
    rng = np.random.Generator(np.random.PCG64(seed))
    D, H, d = spec.input_dim, spec.hidden, spec.bottleneck
    return {
        "enc1.W": init_uniform(rng, (H, D), D), "enc1.b": np.zeros(H),
        "enc2.W": init_uniform(rng, (d, H), H), "enc2.b": np.zeros(d),
        "dec1.W": init_uniform(rng, (H, d), d), "dec1.b": np.zeros(H),
        "dec2.W": init_uniform(rng, (D, H), H), "dec2.b": np.zeros(D),
    }


def autoencoder_forward(params: ParamSet, x: np.ndarray):
    """x: (B, D) -> reconstruction (B, D) plus cache for backward."""
    h1 = np.tanh(x @ params["enc1.W"].T + params["enc1.b"])
    z = h1 @ params["enc2.W"].T + params["enc2.b"]
    h2 = np.tanh(z @ params["dec1.W"].T + params["dec1.b"])
    xhat = h2 @ params["dec2.W"].T + params["dec2.b"]
    return xhat, (x, h1, z, h2)


def encode(params: ParamSet, x: np.ndarray) -> np.ndarray:
    h1 = np.tanh(x @ params["enc1.W"].T + params["enc1.b"])
    return h1 @ params["enc2.W"].T + params["enc2.b"]


def autoencoder_loss_and_grads(params: ParamSet, x: np.ndarray) -> tuple[float, ParamSet]:
    """Mean-squared reconstruction error and exact gradients."""
    xhat, (x0, h1, z, h2) = autoencoder_forward(params, x)
    B, D = x.shape
    diff = xhat - x
    loss = float((diff ** 2).mean())
    dxhat = 2.0 * diff / (B * D)
    g = {}
    g["dec2.W"] = dxhat.T @ h2
    g["dec2.b"] = dxhat.sum(axis=0)
    dh2 = (dxhat @ params["dec2.W"]) * (1 - h2 ** 2)
    g["dec1.W"] = dh2.T @ z
    g["dec1.b"] = dh2.sum(axis=0)
    dz = dh2 @ params["dec1.W"]
    g["enc2.W"] = dz.T @ h1
    g["enc2.b"] = dz.sum(axis=0)
    dh1 = (dz @ params["enc2.W"]) * (1 - h1 ** 2)
    g["enc1.W"] = dh1.T @ x0
    g["enc1.b"] = dh1.sum(axis=0)
    return loss, {k: g[k] for k in params}


# ---------------------------------------------------------------------------
# Sequence classifier: LSTM over feature windows, linear head on final h


@dataclass(frozen=True)
class ClassifierSpec:
    input_dim: int  # 13 + embedding dim
    hidden: int = 32
    classes: int = 2


def init_classifier(spec: ClassifierSpec, seed: int = 0) -> ParamSet:
    rng = np.random.Generator(np.random.PCG64(seed))
    D, H, C = spec.input_dim, spec.hidden, spec.classes
    return {
        "lstm.Wx": init_uniform(rng, (4 * H, D), D),
        "lstm.Wh": init_uniform(rng, (4 * H, H), H),
        "lstm.b": np.zeros(4 * H),
        "head.W": init_uniform(rng, (C, H), H),
        "head.b": np.zeros(C),
    }


def classifier_forward(params: ParamSet, X: np.ndarray, return_cache: bool = False):
    """X: (B, T, D) -> logits (B, classes)."""
    if X.ndim == 2:
        X = X[None]
    B, T, D = X.shape
    Wx, Wh, b = params["lstm.Wx"], params["lstm.Wh"], params["lstm.b"]
    H = Wh.shape[1]
    if Wx.shape[1] != D:
        raise ShapeMismatch(f"classifier expects input dim {Wx.shape[1]}, got {D}")
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        x_t = X[:, t, :]
        z = x_t @ Wx.T + h @ Wh.T + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        if return_cache:
            cache.append((x_t, h, c, i, f, g, o, c_new))
        h, c = h_new, c_new
    logits = h @ params["head.W"].T + params["head.b"]
    if return_cache:
        return logits, (cache, h)
    return logits


def classifier_backward(params: ParamSet, cache, dlogits: np.ndarray) -> ParamSet:
    """Backprop through time given dLoss/dlogits (batch already folded in)."""
    steps, h_final = cache
    Wx, Wh = params["lstm.Wx"], params["lstm.Wh"]
    H = Wh.shape[1]
    g = zeros_like_params(params)
    g["head.W"] = dlogits.T @ h_final
    g["head.b"] = dlogits.sum(axis=0)
    dh = dlogits @ params["head.W"]
    dc = np.zeros_like(dh)
    for (x_t, h_prev, c_prev, i, f, gg, o, c_new) in reversed(steps):
        tc = np.tanh(c_new)
        do = dh * tc
        dc = dc + dh * o * (1 - tc ** 2)
        di = dc * gg
        df = dc * c_prev
        dgg = dc * i
        dzi = di * i * (1 - i)
        dzf = df * f * (1 - f)
        dzg = dgg * (1 - gg ** 2)
        dzo = do * o * (1 - o)
        dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
        g["lstm.Wx"] += dz.T @ x_t
        g["lstm.Wh"] += dz.T @ h_prev
        g["lstm.b"] += dz.sum(axis=0)
        dh = dz @ Wh
        dc = dc * f
    return g


def cross_entropy_from_logits(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean NLL over the batch and dLoss/dlogits."""
    B = logits.shape[0]
    p = softmax(logits)
    nll = -np.log(np.clip(p[np.arange(B), y], 1e-300, None))
    dlogits = p.copy()
    dlogits[np.arange(B), y] -= 1.0
    return float(nll.mean()), dlogits / B


def classifier_loss_and_grads(params: ParamSet, X: np.ndarray, y: np.ndarray) -> tuple[float, ParamSet]:
    logits, cache = classifier_forward(params, X, return_cache=True)
    loss, dlogits = cross_entropy_from_logits(logits, y)
    return loss, classifier_backward(params, cache, dlogits)


# ---------------------------------------------------------------------------
# Optimizer and training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0 or self.batch_size < 1:
            raise ValueError("lr must be >= 0 and batch_size >= 1")


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params: ParamSet, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)

    def step(self, params: ParamSet, grads: ParamSet) -> None:
        c = self.cfg
        self.t += 1
        for k in params:
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * grads[k]
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * grads[k] ** 2
            mhat = self.m[k] / (1 - c.beta1 ** self.t)
            vhat = self.v[k] / (1 - c.beta2 ** self.t)
            params[k] -= c.lr * mhat / (np.sqrt(vhat) + c.eps)


def _add_penalty(loss: float, grads: ParamSet, params: ParamSet, penalty: Optional[Penalty]):
    if penalty is None:
        return loss, grads
    p_loss, p_grads = penalty(params)
    for k in grads:
        grads[k] = grads[k] + p_grads[k]
    return loss + p_loss, grads


def train(
    params: ParamSet,
    loss_and_grads: Callable[[ParamSet, np.ndarray, np.ndarray], tuple[float, ParamSet]],
    X: np.ndarray,
    y: Optional[np.ndarray],
    cfg: TrainConfig,
    penalty: Optional[Penalty] = None,
) -> list[float]:
    """Generic seeded minibatch loop; mutates ``params``, returns epoch losses.

    ``y`` may be None for unsupervised objectives (the loss function then
    receives the batch twice and ignores the second argument).
    """
    n = len(X)
    if n == 0:
        raise EmptyDataset("training dataset is empty")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    opt = Adam(params, cfg)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb = X[idx]
            yb = y[idx] if y is not None else xb
            loss, grads = loss_and_grads(params, xb, yb)
            loss, grads = _add_penalty(loss, grads, params, penalty)
            opt.step(params, grads)
            total += loss * len(idx)
        history.append(total / n)
    return history


def train_autoencoder(params: ParamSet, windows: np.ndarray, cfg: TrainConfig,
                      penalty: Optional[Penalty] = None) -> list[float]:
    return train(params, lambda p, xb, _: autoencoder_loss_and_grads(p, xb),
                 windows, None, cfg, penalty)


def train_classifier(params: ParamSet, X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                     penalty: Optional[Penalty] = None) -> list[float]:
    return train(params, classifier_loss_and_grads, X, y, cfg, penalty)


# ---------------------------------------------------------------------------
# Gradient verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    passed: bool


def grad_check(
    loss_fn: Callable[[ParamSet], tuple[float, ParamSet]],
    params: ParamSet,
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients to central finite differences, entry by entry."""
    if param_count(params) > 500:
        raise ValueError("grad_check is meant for models with <= 500 parameters")
    _, analytic = loss_fn(params)
    worst = 0.0
    worst_name = ""
    for name, arr in params.items():
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = loss_fn(params)
            flat[j] = orig - h
            lm, _ = loss_fn(params)
            flat[j] = orig
            numeric = (lp - lm) / (2 * h)
            a = analytic[name].reshape(-1)[j]
            denom = max(abs(a), abs(numeric), 1e-8)
            rel = abs(a - numeric) / denom
            if rel > worst:
                worst, worst_name = rel, f"{name}[{j}]"
    return GradCheckReport(max_rel_error=worst, worst_param=worst_name,
                           passed=worst < tolerance)


# ---------------------------------------------------------------------------
# Encoder wrapper used by the feature pipeline


@dataclass
class ChannelScaler:
    """Per-channel standardization of (2, L) autoencoder input windows."""

    mean: np.ndarray  # (2,)
    std: np.ndarray  # (2,)

    @classmethod
    def fit(cls, windows: np.ndarray) -> "ChannelScaler":
        # windows: (N, 2, L)
        mean = windows.mean(axis=(0, 2))
        std = windows.std(axis=(0, 2))
        std = np.where(std > 0, std, 1.0)
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls) -> "ChannelScaler":
        return cls(mean=np.zeros(2), std=np.ones(2))

    def transform(self, window: np.ndarray) -> np.ndarray:
        return (window - self.mean[..., :, None]) / self.std[..., :, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelScaler":
        return cls(mean=np.array(d["mean"]), std=np.array(d["std"]))


class Encoder:
    """Trained encoder half of the autoencoder, applied to one (2, L) window."""

    def __init__(self, params: ParamSet, spec: AutoencoderSpec, scaler: ChannelScaler):
        self.params = params
        self.spec = spec
        self.scaler = scaler

    def __call__(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (2, self.spec.input_dim // 2):
            raise ShapeMismatch(
                f"expected window (2, {self.spec.input_dim // 2}), got {window.shape}")
        flat = self.scaler.transform(window).reshape(1, -1)
        return encode(self.params, flat)[0]
