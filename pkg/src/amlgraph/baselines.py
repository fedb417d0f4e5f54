"""From-scratch baseline classifiers for the licit/illicit task.

Seven families: decision tree, random forest, AdaBoost, logistic
regression, linear SVC, k-nearest-neighbors, and a small MLP on the shared
numeric core.  No external ML library does the learning; the only
dependencies are numpy and the package's own tensor ops.

Conventions shared by every family:

* labels are ints, licit = 0, illicit = 1;
* ``predict`` returns labels, ``predict_score`` a monotone illicit score;
* loss-based families (logreg, SVC, MLP) apply class weights, default
  (licit 0.3, illicit 0.7), matching the class imbalance treatment of the
  graph models; voting/tree families are unweighted;
* distance/gradient families standardize features internally using
  training-set statistics; tree families see raw features.
"""

from __future__ import annotations

import numpy as np

from . import tensor
from .elliptic import ILLICIT, LICIT
from .errors import ShapeError

DEFAULT_CLASS_WEIGHTS = (0.3, 0.7)  # (licit, illicit)


def _check_xy(X, y):
    X = tensor.as_matrix(X, "X")
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ShapeError(f"y shape {y.shape} does not match X rows {X.shape[0]}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ShapeError(f"labels must be integers, got {y.dtype}")
    if y.size and not set(np.unique(y)) <= {LICIT, ILLICIT}:
        raise ShapeError(f"labels must be {{{LICIT}, {ILLICIT}}}, got {sorted(set(y))}")
    return X, y.astype(np.int64)


def _sample_weights(y, class_weights) -> np.ndarray:
    cw = np.asarray(class_weights, dtype=np.float64)
    if cw.shape != (2,) or np.any(cw < 0) or cw.sum() <= 0:
        raise ValueError(f"class_weights must be two nonnegative values, got {class_weights}")
    return cw[y]


class Standardizer:
    """Column-wise (x - mean) / std with train statistics; constant
    columns pass through unscaled."""

    def __init__(self):
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "Standardizer":
        self.mean = X.mean(axis=0) if X.size else np.zeros(X.shape[1])
        std = X.std(axis=0) if X.size else np.ones(X.shape[1])
        std = np.where(std > 0, std, 1.0)
        self.std = std
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.mean is None:
            raise RuntimeError("Standardizer used before fit")
        if X.shape[1] != self.mean.shape[0]:
            raise ShapeError(f"X has {X.shape[1]} columns, standardizer expects {self.mean.shape[0]}")
        return (X - self.mean[None, :]) / self.std[None, :]


class Classifier:
    """Minimal uniform contract all trained models provide."""

    family = "classifier"

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict_score(self, X) -> np.ndarray:
        raise NotImplementedError

    def get_config(self) -> dict:
        return {}

    def metadata(self) -> dict:
        return {"family": self.family, "config": self.get_config()}

    def to_entries(self) -> list:
        """Named matrices for the binary checkpoint format."""
        raise NotImplementedError

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "Classifier":
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Entropy and information gain (base-2)
# ---------------------------------------------------------------------------


def entropy(counts) -> float:
    """Shannon entropy in bits of a count/weight vector; 0 log 0 = 0."""
    c = np.asarray(counts, dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    total = c.sum()
    if total <= 0:
        return 0.0
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum())


def info_gain(parent_counts, left_counts, right_counts) -> float:
    """Entropy reduction of splitting parent into (left, right)."""
    parent = np.asarray(parent_counts, dtype=np.float64)
    left = np.asarray(left_counts, dtype=np.float64)
    right = np.asarray(right_counts, dtype=np.float64)
    if parent.shape != left.shape or parent.shape != right.shape:
        raise ShapeError("parent/left/right count vectors must have equal shape")
    if not np.allclose(left + right, parent, atol=1e-9):
        raise ValueError("left + right counts must equal parent counts")
    n = parent.sum()
    if n <= 0:
        return 0.0
    nl, nr = left.sum(), right.sum()
    child = (nl * entropy(left) + nr * entropy(right)) / n
    return entropy(parent) - child


def _entropy_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized binary entropy of (a_i, b_i) count pairs, in bits."""
    n = a + b
    out = np.zeros_like(n)
    nz = n > 0
    pa = np.zeros_like(n)
    pb = np.zeros_like(n)
    pa[nz] = a[nz] / n[nz]
    pb[nz] = b[nz] / n[nz]
    with np.errstate(divide="ignore", invalid="ignore"):
        ea = np.where(pa > 0, pa * np.log2(pa, where=pa > 0), 0.0)
        eb = np.where(pb > 0, pb * np.log2(pb, where=pb > 0), 0.0)
    out[nz] = -(ea[nz] + eb[nz])
    return out


# ---------------------------------------------------------------------------
# Decision tree (greedy CART, information gain, binary labels)
# ---------------------------------------------------------------------------


class _TreeArrays:
    """Flat preorder node storage.

    feature == -1 marks a leaf; left/right are node indices; counts are the
    (possibly weighted) class totals at the node.
    """

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.pred: list[int] = []
        self.count0: list[float] = []
        self.count1: list[float] = []

    def add(self, feature, threshold, pred, c0, c1) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.pred.append(pred)
        self.count0.append(c0)
        self.count1.append(c1)
        return len(self.feature) - 1

    def to_matrix(self) -> np.ndarray:
        return np.column_stack(
            [
                np.asarray(self.feature, dtype=np.float64),
                np.asarray(self.threshold, dtype=np.float64),
                np.asarray(self.left, dtype=np.float64),
                np.asarray(self.right, dtype=np.float64),
                np.asarray(self.pred, dtype=np.float64),
                np.asarray(self.count0, dtype=np.float64),
                np.asarray(self.count1, dtype=np.float64),
            ]
        )

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "_TreeArrays":
        t = cls()
        t.feature = [int(v) for v in m[:, 0]]
        t.threshold = list(m[:, 1])
        t.left = [int(v) for v in m[:, 2]]
        t.right = [int(v) for v in m[:, 3]]
        t.pred = [int(v) for v in m[:, 4]]
        t.count0 = list(m[:, 5])
        t.count1 = list(m[:, 6])
        return t


def _best_split(X, y, w, feature_ids, min_leaf):
    """Exhaustive-over-candidates greedy split.

    Candidates are midpoints between consecutive distinct sorted values of
    each feature; the winner maximizes weighted information gain, ties
    resolved to the lowest feature index then the lowest threshold (strict
    > while scanning features ascending and thresholds ascending does
    both).  Returns (feature, threshold, gain) or None.
    """
    n = y.shape[0]
    w1_all = w * (y == ILLICIT)
    w0_all = w - w1_all
    total0, total1 = w0_all.sum(), w1_all.sum()
    total = total0 + total1
    if total <= 0:
        return None
    parent_h = _entropy_pairs(np.array([total0]), np.array([total1]))[0]

    best = None  # (gain, feature, threshold)
    positions = np.arange(1, n)  # prefix size at each boundary
    pos_ok = (positions >= min_leaf) & (n - positions >= min_leaf)
    for f in feature_ids:
        v = X[:, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        boundary = (sv[:-1] < sv[1:]) & pos_ok
        idx = np.flatnonzero(boundary)
        if idx.size == 0:
            continue
        thresholds = (sv[idx] + sv[idx + 1]) * 0.5
        # Degenerate midpoint (rounds up to the right value) cannot separate.
        sep = thresholds < sv[idx + 1]
        if not np.all(sep):
            idx = idx[sep]
            thresholds = thresholds[sep]
            if idx.size == 0:
                continue
        c1 = np.cumsum(w1_all[order])
        c0 = np.cumsum(w0_all[order])
        l0, l1 = c0[idx], c1[idx]
        r0, r1 = total0 - l0, total1 - l1
        nl, nr = l0 + l1, r0 + r1
        child_h = (nl * _entropy_pairs(l0, l1) + nr * _entropy_pairs(r0, r1)) / total
        gains = parent_h - child_h
        j = int(np.argmax(gains))  # first max -> lowest threshold
        if best is None or gains[j] > best[0]:
            best = (float(gains[j]), int(f), float(thresholds[j]))
    if best is None:
        return None
    return best[1], best[2], best[0]


class DecisionTree(Classifier):
    """Greedy CART with information gain; splits on x <= threshold."""

    family = "decision_tree"

    def __init__(self, max_depth: int | None = None, min_leaf: int = 1):
        if min_leaf < 1:
            raise ValueError(f"min_leaf must be >= 1, got {min_leaf}")
        if max_depth is not None and max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {max_depth}")
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self._tree: _TreeArrays | None = None
        self._n_features = 0

    def fit(self, X, y, sample_weight=None, feature_rng=None, max_features=None) -> "DecisionTree":
        X, y = _check_xy(X, y)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a tree on zero samples")
        w = (
            np.ones(X.shape[0])
            if sample_weight is None
            else np.asarray(sample_weight, dtype=np.float64)
        )
        if w.shape != (X.shape[0],) or np.any(w < 0):
            raise ShapeError("sample_weight must be nonnegative, one per row")
        self._n_features = X.shape[1]
        self._tree = _TreeArrays()
        self._grow(X, y, w, depth=0, rng=feature_rng, max_features=max_features)
        return self

    def _grow(self, X, y, w, depth, rng, max_features) -> int:
        c1 = float((w * (y == ILLICIT)).sum())
        c0 = float(w.sum() - c1)
        pred = ILLICIT if c1 > c0 else LICIT
        node = self._tree.add(-1, 0.0, pred, c0, c1)

        if c0 == 0.0 or c1 == 0.0:
            return node
        if self.max_depth is not None and depth >= self.max_depth:
            return node
        if y.shape[0] < 2 * self.min_leaf:
            return node

        n_feat = X.shape[1]
        if max_features is not None and max_features < n_feat:
            if rng is None:
                raise ValueError("max_features needs a feature_rng")
            feature_ids = np.sort(rng.choice(n_feat, size=max_features, replace=False))
        else:
            feature_ids = np.arange(n_feat)

        found = _best_split(X, y, w, feature_ids, self.min_leaf)
        if found is None:
            return node
        f, t, _ = found
        go_left = X[:, f] <= t
        self._tree.feature[node] = f
        self._tree.threshold[node] = t
        self._tree.left[node] = self._grow(
            X[go_left], y[go_left], w[go_left], depth + 1, rng, max_features
        )
        self._tree.right[node] = self._grow(
            X[~go_left], y[~go_left], w[~go_left], depth + 1, rng, max_features
        )
        return node

    def _leaf_indices(self, X) -> np.ndarray:
        X = tensor.as_matrix(X, "X")
        if X.shape[1] != self._n_features:
            raise ShapeError(f"X has {X.shape[1]} features, tree was fit on {self._n_features}")
        t = self._tree
        feature = np.asarray(t.feature)
        threshold = np.asarray(t.threshold)
        left = np.asarray(t.left)
        right = np.asarray(t.right)
        idx = np.zeros(X.shape[0], dtype=np.int64)
        active = feature[idx] >= 0
        while np.any(active):
            rows = np.flatnonzero(active)
            cur = idx[rows]
            go_left = X[rows, feature[cur]] <= threshold[cur]
            idx[rows] = np.where(go_left, left[cur], right[cur])
            active = feature[idx] >= 0
        return idx

    def predict(self, X) -> np.ndarray:
        if self._tree is None:
            raise RuntimeError("predict before fit")
        leaves = self._leaf_indices(X)
        return np.asarray(self._tree.pred, dtype=np.int64)[leaves]

    def predict_score(self, X) -> np.ndarray:
        leaves = self._leaf_indices(X)
        c0 = np.asarray(self._tree.count0)[leaves]
        c1 = np.asarray(self._tree.count1)[leaves]
        total = c0 + c1
        return np.divide(c1, total, out=np.full(len(leaves), 0.5), where=total > 0)

    @property
    def n_nodes(self) -> int:
        return len(self._tree.feature) if self._tree else 0

    @property
    def root_split(self) -> tuple[int, float] | None:
        """(feature, threshold) at the root, or None for a leaf-only tree."""
        if self._tree is None or self._tree.feature[0] < 0:
            return None
        return self._tree.feature[0], self._tree.threshold[0]

    def get_config(self) -> dict:
        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf}

    def to_entries(self) -> list:
        return [("tree", self._tree.to_matrix())]

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "DecisionTree":
        model = cls(max_depth=config.get("max_depth"), min_leaf=config.get("min_leaf", 1))
        model._tree = _TreeArrays.from_matrix(entries["tree"])
        model._n_features = int(config["n_features"])
        return model

    def metadata(self) -> dict:
        meta = super().metadata()
        meta["config"]["n_features"] = self._n_features
        meta["n_nodes"] = self.n_nodes
        return meta


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


class RandomForest(Classifier):
    """Bootstrap-aggregated trees with per-split feature subsampling.

    Per-tree RNG streams are spawned from the master seed, so results do
    not depend on training order.  Majority vote; ties go licit.
    """

    family = "random_forest"

    def __init__(
        self,
        n_trees: int = 100,
        max_depth: int | None = None,
        min_leaf: int = 1,
        max_features: int | str | None = "sqrt",
        bootstrap: bool = True,
        seed: int = 0,
    ):
        if n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {n_trees}")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed
        self.trees: list[DecisionTree] = []
        self._n_features = 0

    def _resolve_max_features(self, n_feat: int) -> int | None:
        if self.max_features is None:
            return None
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_feat)))
        m = int(self.max_features)
        if not 1 <= m <= n_feat:
            raise ValueError(f"max_features {m} outside [1, {n_feat}]")
        return m

    def fit(self, X, y) -> "RandomForest":
        X, y = _check_xy(X, y)
        self._n_features = X.shape[1]
        m = self._resolve_max_features(X.shape[1])
        self.trees = []
        for child_seq in np.random.SeedSequence(self.seed).spawn(self.n_trees):
            rng = np.random.default_rng(child_seq)
            if self.bootstrap:
                rows = rng.integers(0, X.shape[0], size=X.shape[0])
            else:
                rows = np.arange(X.shape[0])
            tree = DecisionTree(max_depth=self.max_depth, min_leaf=self.min_leaf)
            tree.fit(
                X[rows],
                y[rows],
                feature_rng=rng,
                max_features=None if (m is None or m >= X.shape[1]) else m,
            )
            self.trees.append(tree)
        return self

    def _votes(self, X) -> np.ndarray:
        votes = np.zeros(np.asarray(X).shape[0], dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        return votes

    def predict(self, X) -> np.ndarray:
        if not self.trees:
            raise RuntimeError("predict before fit")
        return (2 * self._votes(X) > self.n_trees).astype(np.int64)

    def predict_score(self, X) -> np.ndarray:
        return self._votes(X) / float(self.n_trees)

    def get_config(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }

    def to_entries(self) -> list:
        return [(f"tree{i}", t._tree.to_matrix()) for i, t in enumerate(self.trees)]

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "RandomForest":
        cfg = dict(config)
        n_features = int(cfg.pop("n_features"))
        model = cls(**cfg)
        model._n_features = n_features
        model.trees = []
        for i in range(model.n_trees):
            t = DecisionTree(max_depth=model.max_depth, min_leaf=model.min_leaf)
            t._tree = _TreeArrays.from_matrix(entries[f"tree{i}"])
            t._n_features = n_features
            model.trees.append(t)
        return model

    def metadata(self) -> dict:
        meta = super().metadata()
        meta["config"]["n_features"] = self._n_features
        return meta


# ---------------------------------------------------------------------------
# AdaBoost (discrete, depth-limited tree stumps)
# ---------------------------------------------------------------------------


class AdaBoost(Classifier):
    """Discrete AdaBoost over weighted tree stumps.

    alpha_t = 0.5 ln((1-eps_t)/eps_t); stops early on eps_t >= 0.5
    (stump discarded) or eps_t == 0 (perfect stump kept with capped
    weight).
    """

    family = "adaboost"

    _EPS_PERFECT = 1e-12

    def __init__(self, rounds: int = 100, stump_depth: int = 1):
        if rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {rounds}")
        if stump_depth < 1:
            raise ValueError(f"stump_depth must be >= 1, got {stump_depth}")
        self.rounds = rounds
        self.stump_depth = stump_depth
        self.stumps: list[DecisionTree] = []
        self.alphas: list[float] = []
        self._fallback = LICIT
        self._n_features = 0

    def fit(self, X, y) -> "AdaBoost":
        X, y = _check_xy(X, y)
        if X.shape[0] == 0:
            raise ValueError("cannot fit on zero samples")
        self._n_features = X.shape[1]
        n1 = int((y == ILLICIT).sum())
        self._fallback = ILLICIT if 2 * n1 > y.size else LICIT
        w = np.full(X.shape[0], 1.0 / X.shape[0])
        self.stumps, self.alphas = [], []
        for _ in range(self.rounds):
            stump = DecisionTree(max_depth=self.stump_depth, min_leaf=1).fit(
                X, y, sample_weight=w
            )
            pred = stump.predict(X)
            err = float(w[pred != y].sum())
            if err >= 0.5:
                break
            if err == 0.0:
                self.stumps.append(stump)
                self.alphas.append(0.5 * np.log((1 - self._EPS_PERFECT) / self._EPS_PERFECT))
                break
            alpha = 0.5 * np.log((1.0 - err) / err)
            self.stumps.append(stump)
            self.alphas.append(alpha)
            agree = np.where(pred == y, 1.0, -1.0)
            w = w * np.exp(-alpha * agree)
            w = w / w.sum()
        return self

    def decision_value(self, X) -> np.ndarray:
        """Signed weighted vote; > 0 means illicit."""
        X = tensor.as_matrix(X, "X")
        total = np.zeros(X.shape[0])
        for stump, alpha in zip(self.stumps, self.alphas):
            total += alpha * (2.0 * stump.predict(X) - 1.0)
        return total

    def predict(self, X) -> np.ndarray:
        if not self.stumps:
            X = tensor.as_matrix(X, "X")
            return np.full(X.shape[0], self._fallback, dtype=np.int64)
        return (self.decision_value(X) > 0).astype(np.int64)

    def predict_score(self, X) -> np.ndarray:
        if not self.stumps:
            X = tensor.as_matrix(X, "X")
            return np.full(X.shape[0], float(self._fallback))
        alpha_sum = float(np.sum(self.alphas))
        votes = np.zeros(np.asarray(X).shape[0])
        for stump, alpha in zip(self.stumps, self.alphas):
            votes += alpha * stump.predict(X)
        return votes / alpha_sum

    def get_config(self) -> dict:
        return {"rounds": self.rounds, "stump_depth": self.stump_depth}

    def to_entries(self) -> list:
        entries = [(f"stump{i}", s._tree.to_matrix()) for i, s in enumerate(self.stumps)]
        entries.append(("alphas", np.asarray(self.alphas, dtype=np.float64)))
        entries.append(("fallback", np.array([float(self._fallback)])))
        return entries

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "AdaBoost":
        cfg = dict(config)
        n_features = int(cfg.pop("n_features"))
        model = cls(**cfg)
        model._n_features = n_features
        model.alphas = [float(v) for v in np.asarray(entries["alphas"]).ravel()]
        model._fallback = int(entries["fallback"].ravel()[0])
        model.stumps = []
        for i in range(len(model.alphas)):
            t = DecisionTree(max_depth=model.stump_depth, min_leaf=1)
            t._tree = _TreeArrays.from_matrix(entries[f"stump{i}"])
            t._n_features = n_features
            model.stumps.append(t)
        return model

    def metadata(self) -> dict:
        meta = super().metadata()
        meta["config"]["n_features"] = self._n_features
        meta["rounds_used"] = len(self.stumps)
        return meta


# ---------------------------------------------------------------------------
# Logistic regression (full-batch gradient descent)
# ---------------------------------------------------------------------------


def logistic_loss(w, b, X, y, sample_weights, l2):
    """Weighted-mean log loss + L2 on w (bias unregularized).

    Returns (loss, grad_w, grad_b); stable via logaddexp.
    """
    z = X @ w + b
    sw = sample_weights / sample_weights.sum()
    per = y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z)
    loss = float(sw @ per + 0.5 * l2 * (w @ w))
    p = 1.0 / (1.0 + np.exp(-z))
    gz = sw * (p - y)
    grad_w = X.T @ gz + l2 * w
    grad_b = float(gz.sum())
    return loss, grad_w, grad_b


class LogisticRegression(Classifier):
    family = "logreg"

    def __init__(
        self,
        lr: float = 0.5,
        epochs: int = 500,
        l2: float = 1e-4,
        class_weights=DEFAULT_CLASS_WEIGHTS,
        standardize: bool = True,
    ):
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2
        self.class_weights = tuple(class_weights)
        self.standardize = standardize
        self.w: np.ndarray | None = None
        self.b = 0.0
        self.scaler = Standardizer()
        self.loss_history: list[float] = []

    def fit(self, X, y) -> "LogisticRegression":
        X, y = _check_xy(X, y)
        Xs = self.scaler.fit(X).transform(X) if self.standardize else X
        sw = _sample_weights(y, self.class_weights)
        self.w = np.zeros(X.shape[1])
        self.b = 0.0
        self.loss_history = []
        for _ in range(self.epochs):
            loss, gw, gb = logistic_loss(self.w, self.b, Xs, y, sw, self.l2)
            self.loss_history.append(loss)
            self.w -= self.lr * gw
            self.b -= self.lr * gb
        return self

    def predict_score(self, X) -> np.ndarray:
        X = tensor.as_matrix(X, "X")
        Xs = self.scaler.transform(X) if self.standardize else X
        return 1.0 / (1.0 + np.exp(-(Xs @ self.w + self.b)))

    def predict(self, X) -> np.ndarray:
        return (self.predict_score(X) >= 0.5).astype(np.int64)

    def get_config(self) -> dict:
        return {
            "lr": self.lr,
            "epochs": self.epochs,
            "l2": self.l2,
            "class_weights": list(self.class_weights),
            "standardize": self.standardize,
        }

    def to_entries(self) -> list:
        return [
            ("w", self.w),
            ("b", np.array([self.b])),
            ("mean", self.scaler.mean if self.scaler.mean is not None else np.zeros_like(self.w)),
            ("std", self.scaler.std if self.scaler.std is not None else np.ones_like(self.w)),
        ]

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "LogisticRegression":
        cfg = dict(config)
        cfg.pop("n_features", None)
        cfg["class_weights"] = tuple(cfg.get("class_weights", DEFAULT_CLASS_WEIGHTS))
        model = cls(**cfg)
        model.w = entries["w"].ravel().astype(np.float64)
        model.b = float(entries["b"].ravel()[0])
        model.scaler.mean = entries["mean"].ravel().astype(np.float64)
        model.scaler.std = entries["std"].ravel().astype(np.float64)
        return model

    def metadata(self) -> dict:
        meta = super().metadata()
        meta["config"]["n_features"] = int(self.w.shape[0]) if self.w is not None else 0
        return meta


# ---------------------------------------------------------------------------
# Linear SVC (hinge + L2, deterministic Pegasos-style schedule)
# ---------------------------------------------------------------------------


class LinearSVC(Classifier):
    """Full-batch subgradient descent on weighted hinge loss + L2.

    Learning rate 1/(l2 * t + 1), the Pegasos hyperbola shifted by one so
    the first steps stay bounded, with projection onto the 1/sqrt(l2)
    ball; the returned weights are the average of the iterates.
    """

    family = "svc"

    def __init__(
        self,
        l2: float = 1e-4,
        epochs: int = 500,
        class_weights=DEFAULT_CLASS_WEIGHTS,
        standardize: bool = True,
    ):
        if l2 <= 0:
            raise ValueError(f"l2 must be > 0, got {l2}")
        self.l2 = l2
        self.epochs = epochs
        self.class_weights = tuple(class_weights)
        self.standardize = standardize
        self.w: np.ndarray | None = None
        self.b = 0.0
        self.scaler = Standardizer()
        self.objective_history: list[float] = []

    def _objective(self, w, b, X, y_pm, sw) -> float:
        margins = y_pm * (X @ w + b)
        hinge = np.maximum(0.0, 1.0 - margins)
        return float(0.5 * self.l2 * (w @ w) + sw @ hinge)

    def fit(self, X, y) -> "LinearSVC":
        X, y = _check_xy(X, y)
        Xs = self.scaler.fit(X).transform(X) if self.standardize else X
        y_pm = 2.0 * y - 1.0
        sw = _sample_weights(y, self.class_weights)
        sw = sw / sw.sum()
        w = np.zeros(X.shape[1])
        b = 0.0
        w_sum = np.zeros_like(w)
        b_sum = 0.0
        radius = 1.0 / np.sqrt(self.l2)
        self.objective_history = []
        for t in range(1, self.epochs + 1):
            eta = 1.0 / (self.l2 * t + 1.0)
            margins = y_pm * (Xs @ w + b)
            viol = margins < 1.0
            coef = sw * viol * y_pm
            grad_w = self.l2 * w - Xs.T @ coef
            grad_b = -float(coef.sum())
            w = w - eta * grad_w
            b = b - eta * grad_b
            norm = float(np.sqrt(w @ w))
            if norm > radius:
                w = w * (radius / norm)
            w_sum += w
            b_sum += b
            self.objective_history.append(self._objective(w_sum / t, b_sum / t, Xs, y_pm, sw))
        self.w = w_sum / self.epochs
        self.b = b_sum / self.epochs
        return self

    def decision_value(self, X) -> np.ndarray:
        X = tensor.as_matrix(X, "X")
        Xs = self.scaler.transform(X) if self.standardize else X
        return Xs @ self.w + self.b

    def predict(self, X) -> np.ndarray:
        return (self.decision_value(X) > 0).astype(np.int64)

    def predict_score(self, X) -> np.ndarray:
        return self.decision_value(X)

    def get_config(self) -> dict:
        return {
            "l2": self.l2,
            "epochs": self.epochs,
            "class_weights": list(self.class_weights),
            "standardize": self.standardize,
        }

    def to_entries(self) -> list:
        return [
            ("w", self.w),
            ("b", np.array([self.b])),
            ("mean", self.scaler.mean if self.scaler.mean is not None else np.zeros_like(self.w)),
            ("std", self.scaler.std if self.scaler.std is not None else np.ones_like(self.w)),
        ]

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "LinearSVC":
        cfg = dict(config)
        cfg.pop("n_features", None)
        cfg["class_weights"] = tuple(cfg.get("class_weights", DEFAULT_CLASS_WEIGHTS))
        model = cls(**cfg)
        model.w = entries["w"].ravel().astype(np.float64)
        model.b = float(entries["b"].ravel()[0])
        model.scaler.mean = entries["mean"].ravel().astype(np.float64)
        model.scaler.std = entries["std"].ravel().astype(np.float64)
        return model

    def metadata(self) -> dict:
        meta = super().metadata()
        meta["config"]["n_features"] = int(self.w.shape[0]) if self.w is not None else 0
        return meta


# ---------------------------------------------------------------------------
# k-nearest neighbors
# ---------------------------------------------------------------------------


class KNearestNeighbors(Classifier):
    """Euclidean k-NN on standardized features, majority vote.

    Vote ties go licit; equal distances are broken toward the lower
    training-row index.
    """

    family = "knn"

    def __init__(self, k: int = 5, standardize: bool = True, chunk_rows: int = 256):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self.standardize = standardize
        self.chunk_rows = chunk_rows
        self.X_train: np.ndarray | None = None
        self.y_train: np.ndarray | None = None
        self.scaler = Standardizer()

    def fit(self, X, y) -> "KNearestNeighbors":
        X, y = _check_xy(X, y)
        if X.shape[0] < 1:
            raise ValueError("cannot fit on zero samples")
        if self.k > X.shape[0]:
            raise ValueError(f"k={self.k} exceeds training size {X.shape[0]}")
        self.X_train = self.scaler.fit(X).transform(X) if self.standardize else X.copy()
        self.y_train = y
        return self

    def _neighbor_votes(self, X) -> np.ndarray:
        X = tensor.as_matrix(X, "X")
        Xs = self.scaler.transform(X) if self.standardize else X
        train = self.X_train
        train_sq = (train * train).sum(axis=1)
        k = self.k
        votes = np.empty(Xs.shape[0], dtype=np.int64)
        for start in range(0, Xs.shape[0], self.chunk_rows):
            chunk = Xs[start : start + self.chunk_rows]
            d2 = (chunk * chunk).sum(axis=1)[:, None] + train_sq[None, :] - 2.0 * (chunk @ train.T)
            for i in range(chunk.shape[0]):
                row = d2[i]
                kth = np.partition(row, k - 1)[k - 1]
                cand = np.flatnonzero(row <= kth)
                cand = cand[np.lexsort((cand, row[cand]))][:k]
                votes[start + i] = int(self.y_train[cand].sum())
        return votes

    def predict(self, X) -> np.ndarray:
        if self.X_train is None:
            raise RuntimeError("predict before fit")
        votes = self._neighbor_votes(X)
        return (2 * votes > self.k).astype(np.int64)

    def predict_score(self, X) -> np.ndarray:
        return self._neighbor_votes(X) / float(self.k)

    def get_config(self) -> dict:
        return {"k": self.k, "standardize": self.standardize}

    def to_entries(self) -> list:
        return [
            ("X_train", self.X_train),
            ("y_train", self.y_train.astype(np.float64)),
            ("mean", self.scaler.mean if self.scaler.mean is not None else np.zeros(self.X_train.shape[1])),
            ("std", self.scaler.std if self.scaler.std is not None else np.ones(self.X_train.shape[1])),
        ]

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "KNearestNeighbors":
        cfg = dict(config)
        cfg.pop("n_features", None)
        model = cls(**cfg)
        model.X_train = entries["X_train"].astype(np.float64)
        model.y_train = entries["y_train"].ravel().astype(np.int64)
        model.scaler.mean = entries["mean"].ravel().astype(np.float64)
        model.scaler.std = entries["std"].ravel().astype(np.float64)
        return model

    def metadata(self) -> dict:
        meta = super().metadata()
        if self.X_train is not None:
            meta["config"]["n_features"] = int(self.X_train.shape[1])
        return meta


# ---------------------------------------------------------------------------
# MLP on the shared numeric core
# ---------------------------------------------------------------------------


class MlpClassifier(Classifier):
    """Two hidden ReLU layers and a softmax head, trained full-batch with
    RMSprop and class-weighted cross-entropy."""

    family = "mlp"

    def __init__(
        self,
        hidden=(64, 32),
        epochs: int = 200,
        lr: float = 1e-3,
        class_weights=DEFAULT_CLASS_WEIGHTS,
        standardize: bool = True,
        seed: int = 0,
    ):
        if len(hidden) != 2:
            raise ValueError("hidden must name exactly two layer widths")
        self.hidden = tuple(int(h) for h in hidden)
        self.epochs = epochs
        self.lr = lr
        self.class_weights = tuple(class_weights)
        self.standardize = standardize
        self.seed = seed
        self.layers: list | None = None
        self.scaler = Standardizer()
        self.loss_history: list[float] = []

    def _build(self, n_features: int) -> None:
        rng = np.random.default_rng(self.seed)
        h1, h2 = self.hidden
        self.layers = [
            tensor.Dense(n_features, h1, rng, name="mlp0"),
            tensor.Relu(),
            tensor.Dense(h1, h2, rng, name="mlp1"),
            tensor.Relu(),
            tensor.Dense(h2, 2, rng, name="mlp_out"),
        ]

    def _forward(self, X: np.ndarray, train: bool = False) -> np.ndarray:
        out = X
        for layer in self.layers:
            out = layer.forward(out, train=train)
        return out

    def fit(self, X, y) -> "MlpClassifier":
        X, y = _check_xy(X, y)
        Xs = self.scaler.fit(X).transform(X) if self.standardize else X
        self._build(X.shape[1])
        sw = _sample_weights(y, self.class_weights)
        params = [p for layer in self.layers for p in layer.params()]
        state = tensor.RmsPropState.for_params(params, lr=self.lr)
        self.loss_history = []
        for _ in range(self.epochs):
            logits = self._forward(Xs, train=True)
            loss, d_logits = tensor.softmax_xent(logits, y, sw)
            self.loss_history.append(loss)
            grad = d_logits
            for layer in reversed(self.layers):
                grad = layer.backward(grad)
            grads = [g for layer in self.layers for g in layer.grads()]
            tensor.rmsprop_step(params, grads, state)
        return self

    def _logits(self, X) -> np.ndarray:
        if self.layers is None:
            raise RuntimeError("predict before fit")
        X = tensor.as_matrix(X, "X")
        Xs = self.scaler.transform(X) if self.standardize else X
        return self._forward(Xs, train=False)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self._logits(X), axis=1).astype(np.int64)

    def predict_score(self, X) -> np.ndarray:
        return tensor.softmax(self._logits(X))[:, ILLICIT]

    def get_config(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "epochs": self.epochs,
            "lr": self.lr,
            "class_weights": list(self.class_weights),
            "standardize": self.standardize,
            "seed": self.seed,
        }

    def to_entries(self) -> list:
        entries = [(name, arr) for layer in self.layers for name, arr in layer.named_params()]
        entries.append(("mean", self.scaler.mean))
        entries.append(("std", self.scaler.std))
        return entries

    @classmethod
    def from_state(cls, config: dict, entries: dict) -> "MlpClassifier":
        cfg = dict(config)
        n_features = int(cfg.pop("n_features"))
        cfg["hidden"] = tuple(cfg.get("hidden", (64, 32)))
        cfg["class_weights"] = tuple(cfg.get("class_weights", DEFAULT_CLASS_WEIGHTS))
        model = cls(**cfg)
        model._build(n_features)
        for layer in model.layers:
            for name, arr in layer.named_params():
                stored = entries[name]
                arr[...] = stored.reshape(arr.shape)
        model.scaler.mean = entries["mean"].ravel().astype(np.float64)
        model.scaler.std = entries["std"].ravel().astype(np.float64)
        return model

    def metadata(self) -> dict:
        meta = super().metadata()
        if self.layers is not None:
            meta["config"]["n_features"] = int(self.layers[0].weight.shape[0])
        return meta


# ---------------------------------------------------------------------------
# Training entry points and the family registry
# ---------------------------------------------------------------------------


def train_decision_tree(X, y, max_depth=None, min_leaf=1) -> DecisionTree:
    return DecisionTree(max_depth=max_depth, min_leaf=min_leaf).fit(X, y)


def train_random_forest(X, y, **kwargs) -> RandomForest:
    return RandomForest(**kwargs).fit(X, y)


def train_adaboost(X, y, rounds=100, stump_depth=1) -> AdaBoost:
    return AdaBoost(rounds=rounds, stump_depth=stump_depth).fit(X, y)


def train_logreg(X, y, **kwargs) -> LogisticRegression:
    return LogisticRegression(**kwargs).fit(X, y)


def train_svc(X, y, **kwargs) -> LinearSVC:
    return LinearSVC(**kwargs).fit(X, y)


def train_knn(X, y, **kwargs) -> KNearestNeighbors:
    return KNearestNeighbors(**kwargs).fit(X, y)


def train_mlp(X, y, **kwargs) -> MlpClassifier:
    return MlpClassifier(**kwargs).fit(X, y)


BASELINE_FAMILIES: dict[str, type[Classifier]] = {
    cls.family: cls
    for cls in (
        DecisionTree,
        RandomForest,
        AdaBoost,
        LogisticRegression,
        LinearSVC,
        KNearestNeighbors,
        MlpClassifier,
    )
}
