"""Per-pixel crack classifier: adapter bottleneck plus a small nonlinear head.

The adapter projects each feature vector down and back up through an exact
Gaussian-CDF GELU (bottleneck-and-expand); the head maps the adapted vector
to a crack logit. All gradients are hand-written reverse mode, optimized by
decoupled-weight-decay Adam under a cosine learning-rate schedule.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

FEATURE_DIM = 8
HIDDEN_TUNE = 16    # adapter bottleneck width
ADAPTER_OUT = 8
HIDDEN_HEAD = 16

CHECKPOINT_MAGIC = b"CSEG"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 90
    lr0: float = 3e-4
    beta: float = 0.3
    lam: float = 0.3
    warmup_epochs: int = 5
    refresh_every: int = 1
    batch: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        # equality means guidance never activates, a legal boundary config
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError(f"warmup_epochs must lie in [0, epochs], got {self.warmup_epochs}")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


def gelu(x: np.ndarray) -> np.ndarray:
    """x * Phi(x) with the exact normal CDF."""
    return x * ndtr(x)


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class AdapterBlock:
    w_tune: np.ndarray  # (D, H_t)
    b_tune: np.ndarray  # (H_t,)
    w_up: np.ndarray    # (H_t, D_out)
    b_up: np.ndarray    # (D_out,)


@dataclass
class ClassifierHead:
    w1: np.ndarray  # (D_out, H_c)
    b1: np.ndarray  # (H_c,)
    w2: np.ndarray  # (H_c, 1)
    b2: np.ndarray  # (1,)


@dataclass
class ModelParams:
    adapter: AdapterBlock
    head: ClassifierHead
    rng_seed: int
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grads:
            self.grads = {name: np.zeros_like(t) for name, t in self.tensors().items()}

    def tensors(self) -> dict[str, np.ndarray]:
        """Named parameter tensors in a fixed order."""
        return {
            "w_tune": self.adapter.w_tune, "b_tune": self.adapter.b_tune,
            "w_up": self.adapter.w_up, "b_up": self.adapter.b_up,
            "w1": self.head.w1, "b1": self.head.b1,
            "w2": self.head.w2, "b2": self.head.b2,
        }

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def validate(self) -> None:
        for name, t in self.tensors().items():
            if not np.isfinite(t).all():
                raise ValueError(f"parameter {name} contains non-finite values")
            if self.grads[name].shape != t.shape:
                raise ValueError(f"gradient buffer for {name} has shape "
                                 f"{self.grads[name].shape}, expected {t.shape}")


def init_params(seed: int, feature_dim: int = FEATURE_DIM, hidden_tune: int = HIDDEN_TUNE,
                adapter_out: int = ADAPTER_OUT, hidden_head: int = HIDDEN_HEAD) -> ModelParams:
    """Gaussian fan-in initialization, zero biases."""
    rng = np.random.default_rng(seed)

    def w(n_in, n_out):
        return rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))

    adapter = AdapterBlock(w(feature_dim, hidden_tune), np.zeros(hidden_tune),
                           w(hidden_tune, adapter_out), np.zeros(adapter_out))
    head = ClassifierHead(w(adapter_out, hidden_head), np.zeros(hidden_head),
                          w(hidden_head, 1), np.zeros(1))
    return ModelParams(adapter, head, seed)


def adapter_forward(f: np.ndarray, adapter: AdapterBlock) -> np.ndarray:
    """w_up . GELU(w_tune . f + b_tune) + b_up for one vector or a batch."""
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    x = f[None, :] if single else f
    if x.shape[-1] != adapter.w_tune.shape[0]:
        raise ValueError(f"feature length {x.shape[-1]} does not match adapter "
                         f"input dim {adapter.w_tune.shape[0]}")
    out = gelu(x @ adapter.w_tune + adapter.b_tune) @ adapter.w_up + adapter.b_up
    return out[0] if single else out


def _forward_parts(flat: np.ndarray, params: ModelParams):
    z1 = flat @ params.adapter.w_tune + params.adapter.b_tune
    a1 = gelu(z1)
    y = a1 @ params.adapter.w_up + params.adapter.b_up
    z2 = y @ params.head.w1 + params.head.b1
    a2 = gelu(z2)
    logit = a2 @ params.head.w2 + params.head.b2
    p = sigmoid(logit)
    return z1, a1, y, z2, a2, p


def forward(fm: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-pixel crack probability, strictly inside (0, 1)."""
    h, w, d = fm.shape
    flat = np.asarray(fm, dtype=np.float64).reshape(-1, d)
    if d != params.adapter.w_tune.shape[0]:
        raise ValueError(f"feature dim {d} does not match adapter input dim "
                         f"{params.adapter.w_tune.shape[0]}")
    prob = _forward_parts(flat, params)[-1].reshape(h, w)
    if not np.isfinite(prob).all():
        yy, xx = np.argwhere(~np.isfinite(prob))[0]
        raise FloatingPointError(f"non-finite probability at pixel (y={yy}, x={xx})")
    return prob


def _backward_parts(flat, parts, params: ModelParams, grad_prob_flat) -> dict[str, np.ndarray]:
    z1, a1, y, z2, a2, p = parts
    dlogit = grad_prob_flat * p * (1.0 - p)
    grads = {}
    grads["w2"] = a2.T @ dlogit
    grads["b2"] = dlogit.sum(axis=0)
    dz2 = (dlogit @ params.head.w2.T) * gelu_grad(z2)
    grads["w1"] = y.T @ dz2
    grads["b1"] = dz2.sum(axis=0)
    dy = dz2 @ params.head.w1.T
    grads["w_up"] = a1.T @ dy
    grads["b_up"] = dy.sum(axis=0)
    dz1 = (dy @ params.adapter.w_up.T) * gelu_grad(z1)
    grads["w_tune"] = flat.T @ dz1
    grads["b_tune"] = dz1.sum(axis=0)
    return grads


def backward(fm: np.ndarray, params: ModelParams, grad_prob: np.ndarray) -> dict[str, np.ndarray]:
    """Exact parameter gradients given the loss gradient w.r.t. the prob map."""
    h, w, d = fm.shape
    flat = np.asarray(fm, dtype=np.float64).reshape(-1, d)
    parts = _forward_parts(flat, params)
    return _backward_parts(flat, parts, params, grad_prob.reshape(-1, 1))


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * 0.5 * (1 + cos(pi * epoch / epochs))."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch must be in [0, {cfg.epochs}), got {epoch}")
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


class AdamW:
    """Decoupled-weight-decay adaptive moments, per-tensor state."""

    def __init__(self, params: ModelParams, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(t) for name, t in params.tensors().items()}
        self.v = {name: np.zeros_like(t) for name, t in params.tensors().items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in params.tensors().items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            tensor -= lr * (update + self.weight_decay * tensor)


def save_checkpoint(path, params: ModelParams) -> None:
    """Versioned header, shape table, then all tensors as little-endian f32."""
    tensors = params.tensors()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Iq", CHECKPOINT_VERSION, params.rng_seed))
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        for t in tensors.values():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, rng_seed = struct.unpack_from("<Iq", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n_tensors,) = struct.unpack_from("<I", raw, 16)
    offset = 20
    shapes = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        shapes.append((name, shape))
    tensors = {}
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=count,
                                      offset=offset).reshape(shape).astype(np.float64)
        offset += 4 * count
    expected = {"w_tune", "b_tune", "w_up", "b_up", "w1", "b1", "w2", "b2"}
    if set(tensors) != expected:
        raise ValueError(f"{path}: checkpoint tensors {sorted(tensors)} do not match the model")
    adapter = AdapterBlock(tensors["w_tune"], tensors["b_tune"], tensors["w_up"], tensors["b_up"])
    head = ClassifierHead(tensors["w1"], tensors["b1"], tensors["w2"], tensors["b2"])
    return ModelParams(adapter, head, rng_seed)
