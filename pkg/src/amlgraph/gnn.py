"""Graph neural models: a skip-connection GCN and a multi-head GAT.

Both operate full-batch on the whole node set with hand-written forward
and backward passes over the package's segment kernels.  Evaluation-mode
forwards route every per-target reduction through the canonical
value-sorted kernels, which makes the outputs exactly equivariant under
node relabeling; training mode uses the faster scatter kernels, whose
results differ only by float summation order.

Edges are prepared once per training run: optionally symmetrized (the
transaction graph is directed but messages flow both ways by default),
deduplicated, and for the attention model extended with self-loops so
every node attends to itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, tensor
from .baselines import DEFAULT_CLASS_WEIGHTS
from .elliptic import ILLICIT
from .errors import NumericsError, ShapeError, TrainingError
from .metrics import confusion_matrix, f1, precision, recall

HISTORY_CSV_COLUMNS = ("epoch", "loss", "train_f1", "test_f1")


def _seg_sum(data, ids, n, canonical):
    if canonical:
        return kernels.segment_sum_canonical(data, ids, n)
    return kernels.segment_sum(data, ids, n)


def _seg_softmax(data, ids, n, canonical):
    if canonical:
        return kernels.segment_softmax_canonical(data, ids, n)
    return kernels.segment_softmax(data, ids, n)


def prepare_edges(g, symmetrize: bool = True, self_loops: bool = False):
    """Message-passing edge arrays (src, dst) in canonical sorted order.

    Symmetrization adds each edge's reverse; duplicates collapse so a
    mutual pair contributes one edge per direction.
    """
    e = g.edges
    if symmetrize and e.shape[0]:
        e = np.vstack([e, e[:, ::-1]])
    if self_loops:
        loops = np.arange(g.n_nodes, dtype=np.int64)
        e = np.vstack([e, np.stack([loops, loops], axis=1)]) if e.shape[0] else np.stack(
            [loops, loops], axis=1
        )
    if e.shape[0] == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy()
    e = np.unique(e, axis=0)
    return np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1])


class FeedForward:
    """Dense layer with ReLU, optionally batch-normalized before the
    activation."""

    def __init__(self, n_in, n_out, rng, name: str, batch_norm: bool = False):
        self.name = name
        self.dense = tensor.Dense(n_in, n_out, rng, name=name)
        self.bn = tensor.BatchNorm(n_out, name=f"{name}_bn") if batch_norm else None
        self.relu = tensor.Relu()

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = self.dense.forward(x, train=train)
        if self.bn is not None:
            out = self.bn.forward(out, train=train)
        return self.relu.forward(out, train=train)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad = self.relu.backward(grad_out)
        if self.bn is not None:
            grad = self.bn.backward(grad)
        return self.dense.backward(grad)

    def params(self):
        return self.dense.params() + (self.bn.params() if self.bn else [])

    def grads(self):
        return self.dense.grads() + (self.bn.grads() if self.bn else [])

    def named_params(self):
        return self.dense.named_params() + (self.bn.named_params() if self.bn else [])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())


class GraphConvLayer:
    """Message FFN, unsorted-segment-sum aggregation into targets, update
    FFN on [state ‖ aggregate], plus a residual skip."""

    def __init__(self, width: int, rng, name: str, batch_norm: bool = False):
        self.name = name
        self.width = width
        self.message = FeedForward(width, width, rng, f"{name}/message", batch_norm=batch_norm)
        self.update = FeedForward(2 * width, width, rng, f"{name}/update", batch_norm=batch_norm)
        self._cache = None

    def forward(self, states, src, dst, train: bool = False, canonical: bool = False):
        if states.shape[1] != self.width:
            raise ShapeError(f"{self.name}: state width {states.shape[1]} != {self.width}")
        msgs = self.message.forward(states, train=train)
        if src.shape[0]:
            agg = _seg_sum(msgs[src], dst, states.shape[0], canonical)
        else:
            agg = np.zeros_like(states)
        cat = np.concatenate([states, agg], axis=1)
        out = self.update.forward(cat, train=train) + states
        self._cache = (src, dst, states.shape[0])
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        src, dst, n = self._cache
        d_cat = self.update.backward(grad_out)
        d_state = d_cat[:, : self.width].copy()
        d_agg = d_cat[:, self.width :]
        if src.shape[0]:
            d_msgs = kernels.segment_sum(d_agg[dst], src, n)
        else:
            d_msgs = np.zeros_like(d_agg)
        d_state += self.message.backward(d_msgs)
        d_state += grad_out
        return d_state

    def params(self):
        return self.message.params() + self.update.params()

    def grads(self):
        return self.message.grads() + self.update.grads()

    def named_params(self):
        return self.message.named_params() + self.update.named_params()


class GcnModel:
    """Preprocess FFN, two graph convolutions with skips, postprocess FFN,
    and a two-unit logits head."""

    family = "gcn"

    def __init__(
        self,
        n_features: int,
        hidden: int = 32,
        dropout: float = 0.0,
        batch_norm: bool = False,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.n_features = n_features
        self.hidden = hidden
        self.dropout_rate = dropout
        self.batch_norm = batch_norm
        self.seed = seed
        self.pre = FeedForward(n_features, hidden, rng, "pre", batch_norm=batch_norm)
        self.conv1 = GraphConvLayer(hidden, rng, "conv1")
        self.conv2 = GraphConvLayer(hidden, rng, "conv2")
        self.post = FeedForward(hidden, hidden, rng, "post")
        self.logits_layer = tensor.Dense(hidden, 2, rng, name="logits")
        self.drop_pre = tensor.Dropout(dropout)
        self.drop_post = tensor.Dropout(dropout)

    @property
    def has_stochastic(self) -> bool:
        return self.dropout_rate > 0.0 or self.batch_norm

    def forward(self, X, src, dst, train: bool = False, rng=None) -> np.ndarray:
        if X.shape[1] != self.n_features:
            raise ShapeError(f"X has {X.shape[1]} features, model expects {self.n_features}")
        canonical = not train
        h = self.pre.forward(X, train=train)
        h = self.drop_pre.forward(h, train=train, rng=rng)
        h = self.conv1.forward(h, src, dst, train=train, canonical=canonical)
        h = self.conv2.forward(h, src, dst, train=train, canonical=canonical)
        h = self.post.forward(h, train=train)
        h = self.drop_post.forward(h, train=train, rng=rng)
        return self.logits_layer.forward(h, train=train)

    def backward(self, d_logits: np.ndarray) -> None:
        grad = self.logits_layer.backward(d_logits)
        grad = self.drop_post.backward(grad)
        grad = self.post.backward(grad)
        grad = self.conv2.backward(grad)
        grad = self.conv1.backward(grad)
        grad = self.drop_pre.backward(grad)
        self.pre.backward(grad)

    def _blocks(self):
        return [self.pre, self.conv1, self.conv2, self.post, self.logits_layer]

    def params(self):
        return [p for b in self._blocks() for p in b.params()]

    def grads(self):
        return [g for b in self._blocks() for g in b.grads()]

    def named_params(self):
        return [ng for b in self._blocks() for ng in b.named_params()]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def param_table(self) -> list:
        """(layer, parameter count) rows, logits last."""
        return [
            ("preprocess", self.pre.n_params),
            ("conv1", sum(p.size for p in self.conv1.params())),
            ("conv2", sum(p.size for p in self.conv2.params())),
            ("postprocess", self.post.n_params),
            ("logits", self.logits_layer.n_params),
        ]

    def get_config(self) -> dict:
        return {
            "n_features": self.n_features,
            "hidden": self.hidden,
            "dropout": self.dropout_rate,
            "batch_norm": self.batch_norm,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, config: dict) -> "GcnModel":
        return cls(**config)


class AttentionHead:
    """Single graph-attention head.

    Projects states with a bias-free kernel, scores each edge with
    LeakyReLU(a_src . h_src + a_dst . h_dst), normalizes scores per target
    by segment softmax, and sums the weighted source projections.
    """

    def __init__(self, n_in: int, head_dim: int, rng, name: str):
        self.name = name
        self.n_in = n_in
        self.head_dim = head_dim
        self.W = tensor.glorot_uniform(rng, n_in, head_dim)
        self.a_src = tensor.glorot_uniform(rng, head_dim, 1).ravel()
        self.a_dst = tensor.glorot_uniform(rng, head_dim, 1).ravel()
        self.d_W = np.zeros_like(self.W)
        self.d_a_src = np.zeros_like(self.a_src)
        self.d_a_dst = np.zeros_like(self.a_dst)
        self._cache = None

    def forward(self, states, src, dst, train: bool = False, canonical: bool = False):
        if states.shape[1] != self.n_in:
            raise ShapeError(f"{self.name}: state width {states.shape[1]} != {self.n_in}")
        n = states.shape[0]
        h = states @ self.W
        scores = h[src] @ self.a_src + h[dst] @ self.a_dst
        e = tensor.leaky_relu(scores, slope=0.2)
        alpha = _seg_softmax(e, dst, n, canonical)
        out = _seg_sum(alpha[:, None] * h[src], dst, n, canonical)
        self._cache = (states, h, scores, alpha, src, dst, n)
        return out

    def attention_weights(self, states, src, dst, canonical: bool = True):
        """Per-edge attention coefficients alpha (for inspection/tests)."""
        h = states @ self.W
        scores = h[src] @ self.a_src + h[dst] @ self.a_dst
        e = tensor.leaky_relu(scores, slope=0.2)
        return _seg_softmax(e, dst, states.shape[0], canonical)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        states, h, scores, alpha, src, dst, n = self._cache
        d_h = np.zeros_like(h)
        if src.shape[0]:
            # out_v = sum_e alpha_e h_src(e): product rule.
            d_alpha = (d_out[dst] * h[src]).sum(axis=1)
            d_h += kernels.segment_sum(alpha[:, None] * d_out[dst], src, n)
            # softmax backward within each target segment.
            seg_dot = kernels.segment_sum(alpha * d_alpha, dst, n).ravel()
            d_e = alpha * (d_alpha - seg_dot[dst])
            d_scores = tensor.leaky_relu_backward(d_e, scores, slope=0.2)
            d_h += kernels.segment_sum(d_scores, src, n).ravel()[:, None] * self.a_src[None, :]
            d_h += kernels.segment_sum(d_scores, dst, n).ravel()[:, None] * self.a_dst[None, :]
            self.d_a_src = (d_scores[:, None] * h[src]).sum(axis=0)
            self.d_a_dst = (d_scores[:, None] * h[dst]).sum(axis=0)
        else:
            self.d_a_src = np.zeros_like(self.a_src)
            self.d_a_dst = np.zeros_like(self.a_dst)
        self.d_W = states.T @ d_h
        return d_h @ self.W.T

    def params(self):
        return [self.W, self.a_src, self.a_dst]

    def grads(self):
        return [self.d_W, self.d_a_src, self.d_a_dst]

    def named_params(self):
        return [
            (f"{self.name}/W", self.W),
            (f"{self.name}/a_src", self.a_src),
            (f"{self.name}/a_dst", self.a_dst),
        ]

    @property
    def n_params(self) -> int:
        return self.W.size + self.a_src.size + self.a_dst.size


class MultiHeadAttention:
    """Independent heads whose outputs are concatenated, no activation."""

    def __init__(self, n_in: int, heads: int, head_dim: int, rng, name: str = "attn"):
        if heads < 1:
            raise ValueError(f"heads must be >= 1, got {heads}")
        self.heads = [AttentionHead(n_in, head_dim, rng, f"{name}{k}") for k in range(heads)]
        self.head_dim = head_dim

    def forward(self, states, src, dst, train: bool = False, canonical: bool = False):
        return np.concatenate(
            [h.forward(states, src, dst, train=train, canonical=canonical) for h in self.heads],
            axis=1,
        )

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        d_states = None
        for k, head in enumerate(self.heads):
            piece = d_out[:, k * self.head_dim : (k + 1) * self.head_dim]
            d = head.backward(np.ascontiguousarray(piece))
            d_states = d if d_states is None else d_states + d
        return d_states

    def params(self):
        return [p for h in self.heads for p in h.params()]

    def grads(self):
        return [g for h in self.heads for g in h.grads()]

    def named_params(self):
        return [ng for h in self.heads for ng in h.named_params()]


class GatModel:
    """Input dense+ReLU, dropout, multi-head attention (concatenated),
    dense+ReLU, dropout, two-unit output dense."""

    family = "gat"

    def __init__(
        self,
        n_features: int,
        hidden: int = 110,
        heads: int = 5,
        head_dim: int = 22,
        out_hidden: int = 330,
        dropout: float = 0.5,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.n_features = n_features
        self.hidden = hidden
        self.n_heads = heads
        self.head_dim = head_dim
        self.out_hidden = out_hidden
        self.dropout_rate = dropout
        self.seed = seed
        self.dense_in = FeedForward(n_features, hidden, rng, "dense_in")
        self.drop1 = tensor.Dropout(dropout)
        self.attention = MultiHeadAttention(hidden, heads, head_dim, rng)
        self.dense_mid = FeedForward(heads * head_dim, out_hidden, rng, "dense_mid")
        self.drop2 = tensor.Dropout(dropout)
        self.dense_out = tensor.Dense(out_hidden, 2, rng, name="dense_out")

    @property
    def has_stochastic(self) -> bool:
        return self.dropout_rate > 0.0

    def forward(self, X, src, dst, train: bool = False, rng=None) -> np.ndarray:
        if X.shape[1] != self.n_features:
            raise ShapeError(f"X has {X.shape[1]} features, model expects {self.n_features}")
        canonical = not train
        h = self.dense_in.forward(X, train=train)
        h = self.drop1.forward(h, train=train, rng=rng)
        h = self.attention.forward(h, src, dst, train=train, canonical=canonical)
        h = self.dense_mid.forward(h, train=train)
        h = self.drop2.forward(h, train=train, rng=rng)
        return self.dense_out.forward(h, train=train)

    def backward(self, d_logits: np.ndarray) -> None:
        grad = self.dense_out.backward(d_logits)
        grad = self.drop2.backward(grad)
        grad = self.dense_mid.backward(grad)
        grad = self.attention.backward(grad)
        grad = self.drop1.backward(grad)
        self.dense_in.backward(grad)

    def _blocks(self):
        return [self.dense_in, self.attention, self.dense_mid, self.dense_out]

    def params(self):
        return [p for b in self._blocks() for p in b.params()]

    def grads(self):
        return [g for b in self._blocks() for g in b.grads()]

    def named_params(self):
        return [ng for b in self._blocks() for ng in b.named_params()]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def param_table(self) -> list:
        return [
            ("dense_in", self.dense_in.n_params),
            ("attention", sum(p.size for p in self.attention.params())),
            ("dense_mid", self.dense_mid.n_params),
            ("dense_out", self.dense_out.n_params),
        ]

    def get_config(self) -> dict:
        return {
            "n_features": self.n_features,
            "hidden": self.hidden,
            "heads": self.n_heads,
            "head_dim": self.head_dim,
            "out_hidden": self.out_hidden,
            "dropout": self.dropout_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, config: dict) -> "GatModel":
        return cls(**config)


GNN_FAMILIES = {"gcn": GcnModel, "gat": GatModel}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class GnnTrainConfig:
    """Hyperparameters for train_gnn; model fields not used by the chosen
    kind are ignored."""

    epochs: int = 1000
    lr: float = 1e-3
    patience: int | None = 100
    class_weights: tuple = DEFAULT_CLASS_WEIGHTS
    seed: int = 0
    symmetrize: bool = True
    hidden: int = 32
    dropout: float | None = None  # None picks the family default
    batch_norm: bool = False
    gat_hidden: int = 110
    heads: int = 5
    head_dim: int = 22
    gat_out_hidden: int = 330

    def build_model(self, kind: str, n_features: int, seed):
        if kind == "gcn":
            return GcnModel(
                n_features,
                hidden=self.hidden,
                dropout=0.0 if self.dropout is None else self.dropout,
                batch_norm=self.batch_norm,
                seed=seed,
            )
        if kind == "gat":
            return GatModel(
                n_features,
                hidden=self.gat_hidden,
                heads=self.heads,
                head_dim=self.head_dim,
                out_hidden=self.gat_out_hidden,
                dropout=0.5 if self.dropout is None else self.dropout,
                seed=seed,
            )
        raise ValueError(f"unknown gnn kind {kind!r}, expected 'gcn' or 'gat'")


@dataclass
class TrainedGnn:
    """Trained model bound to the node features and message edges it was
    fit on; prediction selects rows of the eval-mode logits."""

    model: object
    X: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    best_epoch: int = 0
    epochs_run: int = 0
    _logits: np.ndarray | None = field(default=None, repr=False)

    @property
    def family(self) -> str:
        return self.model.family

    def logits(self) -> np.ndarray:
        if self._logits is None:
            self._logits = self.model.forward(self.X, self.src, self.dst, train=False)
        return self._logits

    def predict(self, node_idx=None) -> np.ndarray:
        labels = np.argmax(self.logits(), axis=1).astype(np.int64)
        return labels if node_idx is None else labels[np.asarray(node_idx)]

    def predict_score(self, node_idx=None) -> np.ndarray:
        probs = tensor.softmax(self.logits())[:, ILLICIT]
        return probs if node_idx is None else probs[np.asarray(node_idx)]

    def get_config(self) -> dict:
        return self.model.get_config()

    def metadata(self) -> dict:
        return {
            "family": self.family,
            "config": self.get_config(),
            "n_params": self.model.n_params,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
        }

    def to_entries(self) -> list:
        return list(self.model.named_params())


def load_gnn(family: str, config: dict, entries: dict, X, src, dst) -> TrainedGnn:
    """Rebuild a trained model from checkpoint entries and graph context."""
    model = GNN_FAMILIES[family].from_config(config)
    for name, arr in model.named_params():
        stored = entries[name]
        arr[...] = stored.reshape(arr.shape)
    return TrainedGnn(model=model, X=X, src=src, dst=dst)


def _illicit_f1(predictions, truth) -> float:
    cm = confusion_matrix(predictions, truth, positive_label=ILLICIT)
    return f1(precision(cm), recall(cm))


def train_gnn(kind: str, X, y, g, split, cfg: GnnTrainConfig | None = None):
    """Full-batch training with the loss masked to train-split nodes.

    Returns (TrainedGnn, history) where history rows are
    (epoch, loss, train_f1, test_f1), F1 of the illicit class, computed
    from the pre-update parameters each epoch.  Early stopping watches
    test F1 with the configured patience and restores the best snapshot.

    Raises TrainingError naming the epoch if the loss or any gradient
    goes non-finite.
    """
    cfg = cfg or GnnTrainConfig()
    X = tensor.as_matrix(X, "X")
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != g.n_nodes or y.shape[0] != g.n_nodes:
        raise ShapeError(
            f"X rows {X.shape[0]} and labels {y.shape[0]} must equal n_nodes {g.n_nodes}"
        )
    # Plain-int child seeds so the model config stays JSON-serializable.
    init_seed, drop_seed = (
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(2)
    )
    model = cfg.build_model(kind, X.shape[1], seed=init_seed)
    drop_rng = np.random.default_rng(drop_seed)

    src, dst = prepare_edges(g, symmetrize=cfg.symmetrize, self_loops=(kind == "gat"))

    weights = np.zeros(g.n_nodes)
    cw = np.asarray(cfg.class_weights, dtype=np.float64)
    weights[split.train_idx] = cw[y[split.train_idx]]

    params = model.params()
    state = tensor.RmsPropState.for_params(params, lr=cfg.lr)
    history: list[tuple] = []
    best_f1 = -1.0
    best_epoch = 0
    best_params = None
    wait = 0
    epochs_run = 0

    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        try:
            if model.has_stochastic:
                eval_logits = model.forward(X, src, dst, train=False)
            logits = model.forward(X, src, dst, train=True, rng=drop_rng)
            loss, d_logits = tensor.softmax_xent(logits, y, weights)
            if not model.has_stochastic:
                eval_logits = logits
            pred = np.argmax(eval_logits, axis=1).astype(np.int64)
            train_f1 = _illicit_f1(pred[split.train_idx], y[split.train_idx])
            test_f1 = _illicit_f1(pred[split.test_idx], y[split.test_idx])
            history.append((epoch, loss, train_f1, test_f1))
            if cfg.patience is not None:
                if test_f1 > best_f1:
                    best_f1 = test_f1
                    best_epoch = epoch
                    best_params = [p.copy() for p in params]
                    wait = 0
                else:
                    wait += 1
                    if wait >= cfg.patience:
                        break
            model.backward(d_logits)
            tensor.rmsprop_step(params, model.grads(), state)
        except NumericsError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc

    if best_params is not None:
        for p, bp in zip(params, best_params):
            p[...] = bp
    else:
        best_epoch = epochs_run

    trained = TrainedGnn(
        model=model, X=X, src=src, dst=dst, best_epoch=best_epoch, epochs_run=epochs_run
    )
    return trained, history


def write_history_csv(path, history) -> None:
    lines = [",".join(HISTORY_CSV_COLUMNS)]
    for epoch, loss, train_f1, test_f1 in history:
        lines.append(f"{epoch},{repr(float(loss))},{repr(float(train_f1))},{repr(float(test_f1))}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
