"""Dense float64 numeric core: ops, layers, optimizer, checkpoints.

Everything trains full-batch with hand-derived gradients; there is no
autodiff tape.  Matrices are row-major float64 numpy arrays throughout.
Public ops verify their results stay finite and raise ``NumericsError``
otherwise, so a divergence is caught at the op where it first appears.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericsError, ShapeError

# Re-exported here because models treat them as tensor ops.
segment_sum = kernels.segment_sum
segment_softmax = kernels.segment_softmax
segment_sum_canonical = kernels.segment_sum_canonical
segment_softmax_canonical = kernels.segment_softmax_canonical


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array or raise ShapeError."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    return np.ascontiguousarray(a)


def ensure_finite(a: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericsError(f"{what} contains NaN or infinity")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return ensure_finite(a @ b, "matmul result")


def add_bias(m, bias) -> np.ndarray:
    m = as_matrix(m, "matrix")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.ndim != 1 or bias.shape[0] != m.shape[1]:
        raise ShapeError(f"bias shape {bias.shape} does not match columns of {m.shape}")
    return ensure_finite(m + bias[None, :], "add_bias result")


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x) -> np.ndarray:
    return np.asarray(grad_out) * (np.asarray(x) > 0.0)


def leaky_relu(x, slope: float = 0.2) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_backward(grad_out, x, slope: float = 0.2) -> np.ndarray:
    x = np.asarray(x)
    return np.asarray(grad_out) * np.where(x > 0.0, 1.0, slope)


def softmax(logits) -> np.ndarray:
    z = as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels, sample_weights=None) -> tuple[float, np.ndarray]:
    """Weighted-mean cross-entropy and its gradient w.r.t. the logits.

    loss = sum_i w_i * (-log softmax(logits_i)[y_i]) / sum_i w_i
    grad = w_i * (softmax(logits_i) - onehot(y_i)) / sum_i w_i

    Rows with weight 0 contribute nothing (their gradient rows are 0),
    which is how held-out nodes are masked during full-batch training.
    """
    z = as_matrix(logits, "logits")
    ensure_finite(z, "logits")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != z.shape[0]:
        raise ShapeError(f"labels shape {y.shape} does not match logits {z.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ShapeError(f"labels must be integers, got {y.dtype}")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ShapeError(f"labels out of range [0, {z.shape[1]})")
    if sample_weights is None:
        w = np.ones(z.shape[0])
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
        if w.shape != (z.shape[0],):
            raise ShapeError(f"sample_weights shape {w.shape} != ({z.shape[0]},)")
        if np.any(w < 0):
            raise ValueError("sample_weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("softmax_xent needs positive total sample weight")

    shifted = z - z.max(axis=1, keepdims=True)
    log_denom = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(z.shape[0]), y] - log_denom
    loss = float(-(w @ log_p) / total)

    p = np.exp(shifted - log_denom[:, None])
    p[np.arange(z.shape[0]), y] -= 1.0
    grad = (w[:, None] * p) / total
    ensure_finite(grad, "softmax_xent gradient")
    if not np.isfinite(loss):
        raise NumericsError("softmax_xent loss is not finite")
    return loss, grad


def dropout(m, rate: float, mode: str = "train", rng: np.random.Generator | None = None):
    """Inverted dropout: training zeroes entries w.p. ``rate`` and rescales
    survivors by 1/(1-rate); evaluation is the identity."""
    m = as_matrix(m, "dropout input")
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return m.copy()
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(m.shape) >= rate
    return m * keep / (1.0 - rate)


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


# ---------------------------------------------------------------------------
# Layers. Each caches what its backward pass needs, overwrites its gradient
# slots on backward, and exposes params()/grads() aligned pairwise.
# ---------------------------------------------------------------------------


class Dense:
    """Affine layer out = x @ W + b with Glorot-uniform init."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        self.name = name
        self.weight = glorot_uniform(rng, n_in, n_out)
        self.bias = np.zeros(n_out)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._x = x
        return x @ self.weight + self.bias[None, :]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.d_weight = self._x.T @ grad_out
        self.d_bias = grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def params(self):
        return [self.weight, self.bias]

    def grads(self):
        return [self.d_weight, self.d_bias]

    def named_params(self):
        return [(f"{self.name}/W", self.weight), (f"{self.name}/b", self.bias)]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size


class Relu:
    def __init__(self):
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * (self._x > 0.0)

    def params(self):
        return []

    def grads(self):
        return []

    def named_params(self):
        return []


class Dropout:
    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def params(self):
        return []

    def grads(self):
        return []

    def named_params(self):
        return []


class BatchNorm:
    """Per-column batch normalization with learned scale and shift.

    Training normalizes by batch statistics and tracks running moments for
    evaluation.  Off by default in the models; kept because the network
    blocks expose it as an option.
    """

    def __init__(self, dim: int, momentum: float = 0.9, eps: float = 1e-5, name: str = "bn"):
        self.name = name
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.d_gamma = np.zeros(dim)
        self.d_beta = np.zeros(dim)
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mean) * inv_std
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
            self._cache = (x_hat, inv_std, True)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            x_hat = (x - self.running_mean) * inv_std
            self._cache = (x_hat, inv_std, False)
        return self.gamma[None, :] * x_hat + self.beta[None, :]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_hat, inv_std, was_train = self._cache
        self.d_gamma = (grad_out * x_hat).sum(axis=0)
        self.d_beta = grad_out.sum(axis=0)
        d_hat = grad_out * self.gamma[None, :]
        if not was_train:
            return d_hat * inv_std[None, :]
        n = grad_out.shape[0]
        return (inv_std[None, :] / n) * (
            n * d_hat - d_hat.sum(axis=0)[None, :] - x_hat * (d_hat * x_hat).sum(axis=0)[None, :]
        )

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.d_gamma, self.d_beta]

    def named_params(self):
        return [(f"{self.name}/gamma", self.gamma), (f"{self.name}/beta", self.beta)]


# ---------------------------------------------------------------------------
# Optimizer: RMSprop with momentum.
# ---------------------------------------------------------------------------


@dataclass
class RmsPropState:
    """Square-average and momentum buffers, one pair per parameter."""

    lr: float = 1e-3
    rho: float = 0.9
    momentum: float = 0.9
    eps: float = 1e-8
    square_avg: list = field(default_factory=list)
    buf: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, rho=0.9, momentum=0.9, eps=1e-8) -> "RmsPropState":
        state = cls(lr=lr, rho=rho, momentum=momentum, eps=eps)
        state.square_avg = [np.zeros_like(p) for p in params]
        state.buf = [np.zeros_like(p) for p in params]
        return state


def rmsprop_step(params, grads, state: RmsPropState) -> None:
    """In-place update:

    v <- rho*v + (1-rho)*g^2 ; m <- mu*m + lr*g/sqrt(v+eps) ; p <- p - m
    """
    if len(params) != len(grads) or len(params) != len(state.square_avg):
        raise ShapeError("params/grads/state must be parallel lists")
    for p, g, v, m in zip(params, grads, state.square_avg, state.buf):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        ensure_finite(g, "gradient")
        v *= state.rho
        v += (1.0 - state.rho) * g * g
        m *= state.momentum
        m += state.lr * g / np.sqrt(v + state.eps)
        p -= m


# ---------------------------------------------------------------------------
# Finite-difference gradient checking.
# ---------------------------------------------------------------------------


def grad_check(f, inputs, h: float = 1e-5) -> float:
    """Max scaled error between analytic and central-difference gradients.

    ``f(inputs) -> (loss, grads)`` where grads align with ``inputs``.  Error
    is |analytic - numeric| / max(|analytic|, |numeric|, 1): relative above
    unit scale, absolute below it, so exact-zero gradients do not blow up
    the ratio.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    _, analytic = f(inputs)
    if len(analytic) != len(inputs):
        raise ShapeError("f must return one gradient per input")
    worst = 0.0
    for x, g in zip(inputs, analytic):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != x.shape:
            raise ShapeError(f"gradient shape {g.shape} != input shape {x.shape}")
        for idx in np.ndindex(*x.shape):
            orig = x[idx]
            x[idx] = orig + h
            loss_plus, _ = f(inputs)
            x[idx] = orig - h
            loss_minus, _ = f(inputs)
            x[idx] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            err = abs(g[idx] - numeric) / max(abs(g[idx]), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: flat versioned binary of named float64 matrices.
#
# Layout (all little-endian):
#   magic  4 bytes  b"AMLG"
#   version u32     1
#   count   u32     number of entries
#   entry:  name_len u32, name utf-8, rows u32, cols u32, rows*cols f64
#
# Vectors are stored as 1 x n matrices.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"AMLG"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, entries) -> None:
    """Write named arrays (1-D or 2-D float64) to ``path``."""
    entries = list(entries)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name, arr in entries:
            a = np.asarray(arr, dtype=np.float64)
            if a.ndim == 1:
                a = a[None, :]
            if a.ndim != 2:
                raise ShapeError(f"checkpoint entry {name!r} must be 1-D or 2-D")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", a.shape[0], a.shape[1]))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as {name: 2-D float64 array} (insertion-ordered)."""

    def take(fh, n, what):
        buf = fh.read(n)
        if len(buf) != n:
            raise ValueError(f"checkpoint truncated while reading {what}")
        return buf

    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if take(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        version, count = struct.unpack("<II", take(fh, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", take(fh, 4, "name length"))
            name = take(fh, name_len, "name").decode("utf-8")
            rows, cols = struct.unpack("<II", take(fh, 8, "shape"))
            data = np.frombuffer(take(fh, rows * cols * 8, f"data of {name!r}"), dtype="<f8")
            out[name] = data.reshape(rows, cols).astype(np.float64)
    return out
