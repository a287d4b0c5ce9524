"""Variance-reduction CART, division extraction and global drift detection.

The tree here only serves to divide the configuration space, so it is grown
no deeper than the division depth. Importance ``G`` is the share of the root
sum of squares removed by the splits, which keeps it on a [0, 1] scale that is
comparable between windows of different sizes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigurationSample, Division, features_matrix, targets_vector

# Relative slack used when comparing split gains; gains within it count as ties.
GAIN_RTOL = 1e-12


@dataclass(frozen=True)
class GlobalDriftConfig:
    delta: float = 0.05
    depth: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")


@dataclass
class TreeNode:
    depth: int
    n: int
    mean: float
    impurity: float  # variance of the node's targets
    indices: np.ndarray
    feature: int = -1
    threshold: float = math.nan
    left: int = -1
    right: int = -1
    decrease: float = 0.0  # n*var - nL*varL - nR*varR

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass
class RegressionTree:
    nodes: list[TreeNode]
    max_depth: int
    n_features: int

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def leaves(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if nd.is_leaf]

    def internal(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if not nd.is_leaf]

    def depth(self) -> int:
        return max(nd.depth for nd in self.leaves())

    def splits(self) -> list[tuple[int, int, float]]:
        """``(node depth, option index, threshold)`` for each internal node in build order."""
        return [(nd.depth, nd.feature, nd.threshold) for nd in self.internal()]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X), dtype=int)
        stack = [(0, np.arange(len(X)))]
        while stack:
            i, rows = stack.pop()
            nd = self.nodes[i]
            if nd.is_leaf or rows.size == 0:
                out[rows] = i
                continue
            left = X[rows, nd.feature] <= nd.threshold
            stack.append((nd.left, rows[left]))
            stack.append((nd.right, rows[~left]))
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.nodes[i].mean for i in self.apply(X)])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for nd in self.nodes:
            h.update(np.array([nd.depth, nd.n, nd.feature, nd.left, nd.right], dtype=np.int64).tobytes())
            h.update(np.array([nd.mean, nd.impurity, nd.threshold, nd.decrease], dtype=float).tobytes())
        return h.hexdigest()


def best_split(X: np.ndarray, y: np.ndarray) -> tuple[int, float, float] | None:
    """Return ``(option, threshold, gain)`` of the best variance-reduction split.

    Candidates are midpoints between consecutive distinct values of each
    option. Gains within ``GAIN_RTOL`` of the best count as ties, which go to
    the lowest option index and then the smallest threshold. ``None`` when no
    split has positive gain.
    """
    n = len(y)
    if n < 2:
        return None
    yc = y - y.mean()
    sse = float(yc @ yc)
    if sse <= 0.0:
        return None
    cands: list[tuple[int, np.ndarray, np.ndarray]] = []
    top = -math.inf
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        valid = np.flatnonzero(xs[1:] > xs[:-1])  # split after position i
        if valid.size == 0:
            continue
        cs = np.cumsum(yc[order])
        total = cs[-1]
        n_left = valid + 1.0
        s_left = cs[valid]
        s_right = total - s_left
        gains = s_left**2 / n_left + s_right**2 / (n - n_left) - total**2 / n
        thresholds = (xs[valid] + xs[valid + 1]) / 2.0
        cands.append((j, thresholds, gains))
        top = max(top, float(gains.max()))
    tol = GAIN_RTOL * sse
    if not cands or top <= tol:
        return None
    for j, thresholds, gains in cands:
        hit = np.flatnonzero(gains >= top - tol)
        if hit.size:
            k = hit[0]
            return j, float(thresholds[k]), float(gains[k])
    return None  # pragma: no cover


def fit_cart(X: np.ndarray, y: np.ndarray, depth: int) -> RegressionTree:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot train a CART on zero samples")
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")

    def make(idx: np.ndarray, d: int) -> TreeNode:
        yy = y[idx]
        return TreeNode(depth=d, n=len(idx), mean=float(yy.mean()), impurity=float(yy.var()), indices=idx)

    nodes = [make(np.arange(len(y)), 0)]
    frontier = [0]
    while frontier:
        i = frontier.pop(0)
        nd = nodes[i]
        if nd.depth >= depth:
            continue
        found = best_split(X[nd.indices], y[nd.indices])
        if found is None:
            continue
        j, thr, gain = found
        go_left = X[nd.indices, j] <= thr
        left, right = make(nd.indices[go_left], nd.depth + 1), make(nd.indices[~go_left], nd.depth + 1)
        nd.feature, nd.threshold = j, thr
        nd.decrease = max(gain, 0.0)
        nd.left, nd.right = len(nodes), len(nodes) + 1
        nodes.extend([left, right])
        frontier.extend([nd.left, nd.right])
    return RegressionTree(nodes=nodes, max_depth=depth, n_features=X.shape[1])


def train_cart(samples: Sequence[ConfigurationSample], depth: int) -> RegressionTree:
    if not samples:
        raise ValueError("cannot train a CART on zero samples")
    return fit_cart(features_matrix(samples), targets_vector(samples), depth)


def total_importance(tree: RegressionTree, normalize: bool = True) -> float:
    """Total importance ``G`` of the tree.

    With ``normalize`` (default) this is the fraction of the root sum of
    squares explained by all splits. Otherwise it is the raw impurity
    decrease per root sample (the unnormalized sum of feature importances).
    """
    root = tree.root
    removed = sum(nd.decrease for nd in tree.internal())
    if normalize:
        root_sse = root.impurity * root.n
        if root_sse <= 0.0:
            return 0.0
        return min(max(removed / root_sse, 0.0), 1.0)
    return removed / root.n


@dataclass
class Partition:
    """Divisions cut from a tree, plus the node-to-division routing table."""

    tree: RegressionTree
    depth: int
    divisions: list[Division]
    node_division: dict[int, int] = field(default_factory=dict)

    def assign(self, X: np.ndarray) -> np.ndarray:
        """Division id for every row of ``X`` by walking the tree paths."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(len(X), -1, dtype=int)
        stack = [(0, np.arange(len(X)))]
        while stack:
            i, rows = stack.pop()
            if rows.size == 0:
                continue
            if i in self.node_division:
                out[rows] = self.node_division[i]
                continue
            nd = self.tree.nodes[i]
            left = X[rows, nd.feature] <= nd.threshold
            stack.append((nd.left, rows[left]))
            stack.append((nd.right, rows[~left]))
        return out

    def sizes(self) -> list[int]:
        return [len(d) for d in self.divisions]


def build_partition(tree: RegressionTree, samples: Sequence[ConfigurationSample], depth: int,
                    min_size: int = 2) -> Partition:
    """Cut ``tree`` at ``depth`` into divisions of ``samples`` (the training set).

    A split whose child would hold fewer than ``min_size`` samples is
    collapsed, so the undersized child is merged with its sibling.
    """
    node_division: dict[int, int] = {}
    divisions: list[Division] = []

    def visit(i: int, path: list[tuple[int, float, bool]]) -> None:
        nd = tree.nodes[i]
        stop = nd.is_leaf or nd.depth >= depth
        if not stop:
            small = min(tree.nodes[nd.left].n, tree.nodes[nd.right].n) < min_size
            stop = small
        if stop:
            div_id = len(divisions)
            node_division[i] = div_id
            divisions.append(Division(div_id, [samples[k] for k in nd.indices], list(path)))
            return
        visit(nd.left, path + [(nd.feature, nd.threshold, True)])
        visit(nd.right, path + [(nd.feature, nd.threshold, False)])

    visit(0, [])
    return Partition(tree=tree, depth=depth, divisions=divisions, node_division=node_division)


def extract_divisions(tree: RegressionTree, depth: int, samples: Sequence[ConfigurationSample],
                      min_size: int = 2) -> list[Division]:
    return build_partition(tree, samples, depth, min_size).divisions


def hoeffding_epsilon(division_sizes: Sequence[int], delta: float) -> float:
    """Hoeffding threshold with ``h`` the harmonic mean of the division sizes."""
    if not division_sizes:
        raise ValueError("need at least one division size")
    if any(n < 1 for n in division_sizes):
        raise ValueError(f"every division needs >= 1 sample, got sizes {list(division_sizes)}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    h = len(division_sizes) / sum(1.0 / n for n in division_sizes)
    return math.sqrt(math.log(1.0 / delta) / (2.0 * h))


def detect_global_drift(g_new: float, g_cur: float, epsilon: float) -> bool:
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return (g_new - g_cur) > epsilon
