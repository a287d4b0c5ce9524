"""Local regression models and the division router.

Every local model supports a full ``fit`` and a cheap ``update`` that only
consumes newly arrived samples:

* random forest: a random third of the trees are refit on their own
  bootstrap sample extended by the new data;
* kNN: new samples join the neighbour set;
* linear regression: one recursive least-squares step per new sample.
"""

from __future__ import annotations

import enum
import hashlib
from typing import Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.tree import DecisionTreeRegressor

from .core import ConfigurationSample, Division, features_matrix, targets_vector


class ModelKind(str, enum.Enum):
    RF = "rf"
    KNN = "knn"
    LR = "lr"


def _check_arity(X: np.ndarray, arity: int) -> None:
    if X.shape[1] != arity:
        raise ValueError(f"arity mismatch: model expects {arity} options, got {X.shape[1]}")


def _as_2d(X) -> np.ndarray:
    return np.atleast_2d(np.asarray(X, dtype=float))


class LocalModel:
    kind: ModelKind

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.arity = -1
        self.trained_on_count = 0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LocalModel":
        raise NotImplementedError

    def update(self, X: np.ndarray, y: np.ndarray) -> "LocalModel":
        raise NotImplementedError

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _params(self) -> list[np.ndarray]:
        raise NotImplementedError

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.kind.value.encode())
        for arr in self._params():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def _start_fit(self, X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X, y = _as_2d(X), np.asarray(y, dtype=float)
        if len(y) < 2:
            raise ValueError(f"a local model needs >= 2 samples, got {len(y)}; merge small divisions first")
        if len(X) != len(y):
            raise ValueError("features and targets differ in length")
        self.arity = X.shape[1]
        self.trained_on_count = len(y)
        return X, y

    def _start_update(self, X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
        if X.size:
            X = _as_2d(X)
            _check_arity(X, self.arity)
        self.trained_on_count += len(y)
        return X, y


class RandomForestModel(LocalModel):
    kind = ModelKind.RF

    def __init__(self, n_trees: int = 20, update_fraction: float = 1.0 / 3.0, max_features: str | float = "sqrt",
                 seed: int = 0) -> None:
        super().__init__(seed)
        if n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {n_trees}")
        self.n_trees = n_trees
        self.update_fraction = update_fraction
        self.max_features = max_features
        self.trees: list[DecisionTreeRegressor] = []
        self.subsets: list[tuple[np.ndarray, np.ndarray]] = []
        self._rng = np.random.default_rng(seed)

    def _grow(self, X: np.ndarray, y: np.ndarray) -> DecisionTreeRegressor:
        tree = DecisionTreeRegressor(max_features=self.max_features, min_samples_leaf=1,
                                     random_state=int(self._rng.integers(2**31 - 1)))
        return tree.fit(X, y)

    def fit(self, X, y):
        X, y = self._start_fit(X, y)
        self._rng = np.random.default_rng(self.seed)
        self.trees, self.subsets = [], []
        n = len(y)
        for _ in range(self.n_trees):
            idx = self._rng.integers(0, n, size=n)
            self.subsets.append((X[idx], y[idx]))
            self.trees.append(self._grow(X[idx], y[idx]))
        return self

    def update(self, X, y):
        X, y = self._start_update(X, y)
        if len(y) == 0:
            return self
        k = max(1, int(round(self.n_trees * self.update_fraction)))
        for t in sorted(self._rng.choice(self.n_trees, size=min(k, self.n_trees), replace=False)):
            Xs, ys = self.subsets[t]
            Xs, ys = np.vstack([Xs, X]), np.concatenate([ys, y])
            self.subsets[t] = (Xs, ys)
            self.trees[t] = self._grow(Xs, ys)
        return self

    def tree_predictions(self, X) -> np.ndarray:
        X = _as_2d(X)
        _check_arity(X, self.arity)
        return np.array([t.predict(X) for t in self.trees])

    def predict(self, X):
        return self.tree_predictions(X).mean(axis=0)

    def _params(self):
        out = []
        for t in self.trees:
            tr = t.tree_
            out += [tr.feature, tr.threshold, tr.value]
        return out


class KNNModel(LocalModel):
    kind = ModelKind.KNN

    def __init__(self, k: int = 5, seed: int = 0) -> None:
        super().__init__(seed)
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self.X = np.empty((0, 0))
        self.y = np.empty(0)
        self.lo = np.empty(0)
        self.span = np.empty(0)

    def fit(self, X, y):
        X, y = self._start_fit(X, y)
        self.X, self.y = X.copy(), y.copy()
        self.lo = X.min(axis=0)
        span = X.max(axis=0) - self.lo
        self.span = np.where(span > 0, span, 1.0)
        return self

    def update(self, X, y):
        X, y = self._start_update(X, y)
        if len(y):
            self.X = np.vstack([self.X, X])
            self.y = np.concatenate([self.y, y])
        return self

    def predict(self, X):
        X = _as_2d(X)
        _check_arity(X, self.arity)
        ref = (self.X - self.lo) / self.span
        q = (X - self.lo) / self.span
        d2 = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        k = min(self.k, len(self.y))
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return self.y[nearest].mean(axis=1)

    def _params(self):
        return [self.X, self.y, self.lo, self.span]


class LinearModel(LocalModel):
    """Least squares with an intercept, kept current by recursive least squares."""

    kind = ModelKind.LR

    def __init__(self, ridge: float = 1e-8, seed: int = 0) -> None:
        super().__init__(seed)
        self.ridge = ridge
        self.theta = np.empty(0)  # intercept first
        self.P = np.empty((0, 0))

    @staticmethod
    def _design(X: np.ndarray) -> np.ndarray:
        return np.hstack([np.ones((len(X), 1)), X])

    def fit(self, X, y):
        X, y = self._start_fit(X, y)
        A = self._design(X)
        self.theta = np.linalg.lstsq(A, y, rcond=None)[0]
        self.P = np.linalg.pinv(A.T @ A + self.ridge * np.eye(A.shape[1]))
        return self

    def update(self, X, y):
        X, y = self._start_update(X, y)
        for a, target in zip(self._design(X) if len(y) else [], y):
            Pa = self.P @ a
            gain = Pa / (1.0 + a @ Pa)
            self.theta = self.theta + gain * (target - a @ self.theta)
            self.P = self.P - np.outer(gain, Pa)
        return self

    @property
    def intercept(self) -> float:
        return float(self.theta[0])

    @property
    def coefficients(self) -> np.ndarray:
        return self.theta[1:]

    def predict(self, X):
        X = _as_2d(X)
        _check_arity(X, self.arity)
        return X @ self.coefficients + self.intercept

    def _params(self):
        return [self.theta, self.P]


def make_model(kind: ModelKind | str, seed: int = 0, **params) -> LocalModel:
    kind = ModelKind(kind)
    if kind is ModelKind.RF:
        return RandomForestModel(seed=seed, **params)
    if kind is ModelKind.KNN:
        return KNNModel(seed=seed, **params)
    return LinearModel(seed=seed, **params)


def train_local(samples: Sequence[ConfigurationSample], kind: ModelKind | str = ModelKind.RF, seed: int = 0,
                **params) -> LocalModel:
    return make_model(kind, seed, **params).fit(features_matrix(samples), targets_vector(samples))


def update_local(model: LocalModel, new_samples: Sequence[ConfigurationSample]) -> LocalModel:
    if not new_samples:
        return model
    return model.update(features_matrix(new_samples), targets_vector(new_samples))


def predict_local(model: LocalModel, features: Sequence[float]) -> float:
    return float(model.predict(np.asarray(features, dtype=float)[None, :])[0])


class RouterClassifier:
    """Random forest mapping configurations to division ids."""

    def __init__(self, n_trees: int = 10, seed: int = 0) -> None:
        self.n_trees = n_trees
        self.seed = seed
        self.classes: list[int] = []
        self.arity = -1
        self._forest: RandomForestClassifier | None = None

    def fit(self, X: np.ndarray, labels: np.ndarray) -> "RouterClassifier":
        X, labels = _as_2d(X), np.asarray(labels, dtype=int)
        if len(labels) == 0:
            raise ValueError("router needs at least one labelled sample")
        self.arity = X.shape[1]
        self.classes = sorted(int(c) for c in np.unique(labels))
        if len(self.classes) == 1:
            self._forest = None
        else:
            self._forest = RandomForestClassifier(n_estimators=self.n_trees, random_state=self.seed).fit(X, labels)
        return self

    def route_many(self, X) -> np.ndarray:
        X = _as_2d(X)
        _check_arity(X, self.arity)
        if self._forest is None:
            return np.full(len(X), self.classes[0], dtype=int)
        return self._forest.predict(X).astype(int)

    def route(self, features: Sequence[float]) -> int:
        return int(self.route_many(np.asarray(features, dtype=float)[None, :])[0])

    def fingerprint(self) -> str:
        h = hashlib.sha256(np.array(self.classes, dtype=np.int64).tobytes())
        if self._forest is not None:
            for est in self._forest.estimators_:
                h.update(est.tree_.feature.tobytes())
                h.update(est.tree_.threshold.tobytes())
        return h.hexdigest()


def train_router(divisions: Sequence[Division], seed: int = 0, n_trees: int = 10) -> RouterClassifier:
    if not divisions:
        raise ValueError("router needs at least one division")
    if any(len(d) == 0 for d in divisions):
        raise ValueError("every division must hold samples")
    X = np.vstack([features_matrix(d.samples) for d in divisions])
    labels = np.concatenate([np.full(len(d), d.id) for d in divisions])
    return RouterClassifier(n_trees=n_trees, seed=seed).fit(X, labels)


def route(router: RouterClassifier, features: Sequence[float]) -> int:
    return router.route(features)
