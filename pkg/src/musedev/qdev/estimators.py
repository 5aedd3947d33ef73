"""Regression estimators for the rating model, written against a small
sklearn-style surface (fit/predict/get_params/set_params) so they compose
with pipeline tooling without depending on it.

Kinds: ordinary least squares, evidence-optimized Bayesian ridge, a
logistic-link rater fitted by IRLS, epsilon-insensitive linear SVR trained
by subgradient descent, and a CART random forest. Linear-family models
standardize features internally; trees run on raw features (the timbre and
loudness components are orders of magnitude larger than pitch and rhythm).
"""
from __future__ import annotations

import inspect

import numpy as np

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover
    _njit = None


def _tree_values_kernel(feature, threshold, left, right, value, roots, x, out):
    for t in range(roots.size):
        node = roots[t]
        while feature[node] >= 0:
            if x[feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[t] = value[node]


if _njit is not None:
    _tree_values_kernel = _njit(cache=True)(_tree_values_kernel)


def check_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError("X must be 2-D (n_samples, n_features)")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X


def check_X_y(X, y):
    X = check_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValueError("y must be 1-D and match X rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return X, y


class BaseEstimator:
    """get_params/set_params over the __init__ signature, sklearn-style."""

    @classmethod
    def _param_names(cls):
        return [p for p in inspect.signature(cls.__init__).parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class _StandardizedLinear(BaseEstimator):
    """Shared z-scoring plus affine prediction for the linear-family models."""

    def _standardize_fit(self, X):
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
        self.scale_ = scale
        return (X - self.mean_) / self.scale_

    def _standardize(self, X):
        return (X - self.mean_) / self.scale_

    def predict(self, X) -> np.ndarray:
        X = check_matrix(X)
        return self._standardize(X) @ self.coef_ + self.intercept_

    def raw_coefficients(self):
        """(coef, intercept) expressed in raw feature space."""
        coef = self.coef_ / self.scale_
        return coef, float(self.intercept_ - coef @ self.mean_)

    def to_dict(self) -> dict:
        return {
            "coef": self.coef_.tolist(),
            "intercept": float(self.intercept_),
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
        }

    def _load_dict(self, state: dict):
        self.coef_ = np.array(state["coef"], dtype=np.float64)
        self.intercept_ = float(state["intercept"])
        self.mean_ = np.array(state["mean"], dtype=np.float64)
        self.scale_ = np.array(state["scale"], dtype=np.float64)
        return self


class LinearRegressor(_StandardizedLinear):
    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        Xs = self._standardize_fit(X)
        design = np.column_stack([np.ones(len(y)), Xs])
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        return self

    @classmethod
    def from_dict(cls, state, params):
        return cls(**params)._load_dict(state)


class BayesianRidgeRegressor(_StandardizedLinear):
    """Ridge with evidence-maximized precisions; falls back to a fixed
    penalty of 1.0 if the iteration leaves the finite range."""

    def __init__(self, max_iter: int = 300, tol: float = 1e-4, seed: int = 0):
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        Xs = self._standardize_fit(X)
        y_mean = y.mean()
        yc = y - y_mean
        n, p = Xs.shape
        gram = Xs.T @ Xs
        xty = Xs.T @ yc
        y_var = yc.var()
        alpha = 1.0 / y_var if y_var > 0 else 1.0
        lam = 1.0
        coef = np.zeros(p)
        converged = False
        for _ in range(self.max_iter):
            a_inv = np.linalg.inv(lam * np.eye(p) + alpha * gram)
            coef = alpha * a_inv @ xty
            if not np.all(np.isfinite(coef)):
                break
            gamma = p - lam * np.trace(a_inv)
            sq_norm = float(coef @ coef)
            residual = float(np.sum((yc - Xs @ coef) ** 2))
            new_lam = gamma / sq_norm if sq_norm > 0 else lam
            new_alpha = (n - gamma) / residual if residual > 0 else alpha
            if not (np.isfinite(new_lam) and np.isfinite(new_alpha)) or new_lam <= 0 or new_alpha <= 0:
                break
            if abs(new_lam - lam) < self.tol * max(1.0, lam):
                lam, alpha = new_lam, new_alpha
                converged = True
                break
            lam, alpha = new_lam, new_alpha
        if not (converged and np.all(np.isfinite(coef))):
            lam = 1.0
            coef = np.linalg.solve(lam * np.eye(p) + gram, xty)
        self.lambda_ = float(lam)
        self.coef_ = coef
        self.intercept_ = float(y_mean)
        return self

    def to_dict(self):
        state = super().to_dict()
        state["lambda"] = self.lambda_
        return state

    @classmethod
    def from_dict(cls, state, params):
        model = cls(**params)._load_dict(state)
        model.lambda_ = float(state["lambda"])
        return model


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


class LogisticRater(_StandardizedLinear):
    """Logistic-link regression on rating/rating_max fitted by IRLS."""

    def __init__(self, rating_max: float = 5.0, max_iter: int = 100, tol: float = 1e-8, seed: int = 0):
        self.rating_max = rating_max
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        Xs = self._standardize_fit(X)
        target = np.clip(y / self.rating_max, 1e-6, 1.0 - 1e-6)
        design = np.column_stack([np.ones(len(y)), Xs])
        beta = np.zeros(design.shape[1])
        for _ in range(self.max_iter):
            eta = design @ beta
            mu = _sigmoid(eta)
            w = np.maximum(mu * (1.0 - mu), 1e-8)
            z = eta + (target - mu) / w
            wd = design * w[:, None]
            new_beta = np.linalg.solve(design.T @ wd + 1e-10 * np.eye(design.shape[1]), design.T @ (w * z))
            if np.max(np.abs(new_beta - beta)) < self.tol:
                beta = new_beta
                break
            beta = new_beta
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        return self

    def predict(self, X):
        X = check_matrix(X)
        return self.rating_max * _sigmoid(self._standardize(X) @ self.coef_ + self.intercept_)

    @classmethod
    def from_dict(cls, state, params):
        return cls(**params)._load_dict(state)


class LinearSVR(_StandardizedLinear):
    """Epsilon-insensitive linear SVR trained by seeded subgradient descent."""

    def __init__(self, epsilon: float = 0.1, epochs: int = 500, learning_rate: float = 0.05,
                 reg: float = 1e-4, seed: int = 0):
        self.epsilon = epsilon
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.reg = reg
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        Xs = self._standardize_fit(X)
        n, p = Xs.shape
        rng = np.random.default_rng(self.seed)
        w = np.zeros(p)
        b = float(y.mean())
        for epoch in range(self.epochs):
            lr = self.learning_rate / (1.0 + 0.01 * epoch)
            for i in rng.permutation(n):
                err = Xs[i] @ w + b - y[i]
                w *= 1.0 - lr * self.reg
                if err > self.epsilon:
                    w -= lr * Xs[i]
                    b -= lr
                elif err < -self.epsilon:
                    w += lr * Xs[i]
                    b += lr
        self.coef_ = w
        self.intercept_ = b
        return self

    @classmethod
    def from_dict(cls, state, params):
        return cls(**params)._load_dict(state)


# ---------------------------------------------------------------------------
# CART forest


class RegressionTree:
    """CART regression tree stored as flat node arrays (maps 1:1 to the
    serialized form): feature[i] == -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    def predict_one(self, x) -> float:
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return float(self.value[node])

    def predict(self, X) -> np.ndarray:
        X = check_matrix(X)
        return np.array([self.predict_one(row) for row in X])

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, state):
        return cls(state["feature"], state["threshold"], state["left"], state["right"], state["value"])


class _TreeBuilder:
    def __init__(self, max_features, min_samples_leaf, max_depth, rng):
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.rng = rng
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, X, y, depth=0):
        node = self._new_node()
        self.value[node] = float(y.mean())
        n = len(y)
        if n < 2 * self.min_samples_leaf or np.ptp(y) == 0.0:
            return node
        if self.max_depth is not None and depth >= self.max_depth:
            return node
        split = self._best_split(X, y)
        if split is None:
            return node
        feat, thr = split
        mask = X[:, feat] <= thr
        self.feature[node] = feat
        self.threshold[node] = thr
        self.left[node] = self.build(X[mask], y[mask], depth + 1)
        self.right[node] = self.build(X[~mask], y[~mask], depth + 1)
        return node

    def _best_split(self, X, y):
        n, p = X.shape
        k = min(self.max_features, p)
        candidates = self.rng.permutation(p)[:k]
        best = None
        best_sse = np.inf
        min_leaf = self.min_samples_leaf
        for feat in candidates:
            order = np.argsort(X[:, feat], kind="stable")
            xs = X[order, feat]
            ys = y[order]
            cum = np.cumsum(ys)
            cum_sq = np.cumsum(ys * ys)
            total = cum[-1]
            total_sq = cum_sq[-1]
            sizes = np.arange(1, n)
            valid = (xs[:-1] < xs[1:]) & (sizes >= min_leaf) & (n - sizes >= min_leaf)
            if not valid.any():
                continue
            left_sse = cum_sq[:-1] - cum[:-1] ** 2 / sizes
            right_cnt = n - sizes
            right_sum = total - cum[:-1]
            right_sse = (total_sq - cum_sq[:-1]) - right_sum**2 / right_cnt
            sse = np.where(valid, left_sse + right_sse, np.inf)
            idx = int(np.argmin(sse))
            if sse[idx] < best_sse - 1e-12:
                best_sse = sse[idx]
                best = (int(feat), float((xs[idx] + xs[idx + 1]) / 2.0))
        return best

    def finish(self) -> RegressionTree:
        return RegressionTree(self.feature, self.threshold, self.left, self.right, self.value)


class RandomForestRegressor(BaseEstimator):
    """Bagged CART trees; prediction is the exact mean over trees."""

    def __init__(self, n_trees: int = 100, max_features: int = 3, min_samples_leaf: int = 2,
                 max_depth: int | None = None, bootstrap: bool = True, seed: int = 0):
        self.n_trees = n_trees
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        n = len(y)
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees_ = []
        for seq in seeds:
            rng = np.random.default_rng(seq)
            idx = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            builder = _TreeBuilder(self.max_features, self.min_samples_leaf, self.max_depth, rng)
            builder.build(X[idx], y[idx])
            self.trees_.append(builder.finish())
        self._flat = None
        return self

    def _flattened(self):
        """All trees concatenated with child pointers rebased, for the fast
        traversal kernel; prediction values are unchanged."""
        if getattr(self, "_flat", None) is None:
            roots = np.zeros(len(self.trees_), dtype=np.int64)
            offset = 0
            parts = {"feature": [], "threshold": [], "left": [], "right": [], "value": []}
            for i, tree in enumerate(self.trees_):
                roots[i] = offset
                internal = tree.feature >= 0
                parts["feature"].append(tree.feature.astype(np.int64))
                parts["threshold"].append(tree.threshold)
                parts["left"].append(np.where(internal, tree.left + offset, -1).astype(np.int64))
                parts["right"].append(np.where(internal, tree.right + offset, -1).astype(np.int64))
                parts["value"].append(tree.value)
                offset += tree.feature.size
            self._flat = tuple(np.concatenate(parts[k]) for k in
                               ("feature", "threshold", "left", "right", "value")) + (roots,)
        return self._flat

    def predict(self, X) -> np.ndarray:
        X = check_matrix(X)
        feature, threshold, left, right, value, roots = self._flattened()
        out = np.empty(len(X))
        votes = np.empty(len(self.trees_))
        for i, row in enumerate(np.ascontiguousarray(X)):
            _tree_values_kernel(feature, threshold, left, right, value, roots, row, votes)
            out[i] = votes.mean()
        return out

    def to_dict(self):
        return {"trees": [tree.to_dict() for tree in self.trees_]}

    @classmethod
    def from_dict(cls, state, params):
        model = cls(**params)
        model.trees_ = [RegressionTree.from_dict(t) for t in state["trees"]]
        model._flat = None
        return model


MODEL_KINDS = {
    "linear": LinearRegressor,
    "bayesian_ridge": BayesianRidgeRegressor,
    "logistic": LogisticRater,
    "linear_svr": LinearSVR,
    "random_forest": RandomForestRegressor,
}
