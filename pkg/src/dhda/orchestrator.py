"""The two-level drift-adaptive engine.

Each timestep the engine

1. grows the global window and refits a candidate CART on it,
2. routes the new samples into division windows using the *accepted* tree,
   then refits the router,
3. compares the candidate's importance with the accepted tree's; a gain above
   the Hoeffding threshold redivides everything and retrains all models,
4. otherwise feeds each division's prediction errors to its ADWIN detector
   and, on drift, prunes that division back to its last warning and retrains,
5. maintains the remaining divisions that received data: incremental updates,
   with a full retrain every ``alpha`` data-bearing timesteps.
"""

from __future__ import annotations

import enum
import hashlib
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .core import Batch, ConfigurationSample, SlidingWindow, features_matrix, targets_vector, window_append, window_remove
from .local_adapt import AdwinDetector, DetectorState, prune_on_drift
from .models import LocalModel, ModelKind, RouterClassifier, make_model
from .partition import Partition, RegressionTree, build_partition, fit_cart, hoeffding_epsilon, total_importance


class Action(str, enum.Enum):
    INIT = "init"
    GLOBAL = "global"
    LOCAL = "local"
    RETRAIN = "retrain"
    INCREMENTAL = "incremental"
    NONE = "none"


class Maintenance(str, enum.Enum):
    INCREMENTAL = "incremental"
    RETRAIN = "retrain"


def maintenance_decision(t_prime: int, alpha: int) -> Maintenance:
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if t_prime < 1:
        raise ValueError(f"t_prime must be >= 1, got {t_prime}")
    return Maintenance.RETRAIN if t_prime % alpha == 0 else Maintenance.INCREMENTAL


@dataclass
class EngineConfig:
    depth: int = 1
    delta: float = 0.05
    alpha: int = 3
    local_model: str = "rf"
    seed: int = 0
    disable_upper: bool = False
    disable_lower: bool = False
    disable_hybrid: bool = False
    min_division_size: int = 2
    normalize_importance: bool = True
    window_capacity: Optional[int] = None
    router_trees: int = 10
    warning_confidence: float = 0.90
    drift_confidence: float = 0.99
    model_params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.min_division_size < 2:
            raise ValueError(f"min_division_size must be >= 2, got {self.min_division_size}")
        self.local_model = ModelKind(self.local_model).value

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class LocalState:
    model: LocalModel
    window: SlidingWindow
    detector: AdwinDetector
    t_prime: int = 0


@dataclass
class AdaptationReport:
    timestep: int
    actions: dict[int, Action]
    delta_g: float = float("nan")
    epsilon: float = float("nan")
    global_drift: bool = False
    detector_states: dict[int, str] = field(default_factory=dict)
    new_samples: dict[int, int] = field(default_factory=dict)
    adapt_seconds: float = 0.0

    def events(self) -> list[tuple[str, int]]:
        """``(action, division)`` pairs for every division that changed."""
        return [(a.value, i) for i, a in sorted(self.actions.items()) if a is not Action.NONE]


class DHDAEngine:
    """Online divide-and-learn model with global and local drift adaptation."""

    name = "DHDA"

    def __init__(self, config: Optional[EngineConfig] = None) -> None:
        self.config = config or EngineConfig()
        self.global_window = SlidingWindow(capacity=self.config.window_capacity)
        self.accepted_tree: Optional[RegressionTree] = None
        self.candidate_tree: Optional[RegressionTree] = None
        self.accepted_importance = 0.0
        self.partition: Optional[Partition] = None
        self.router: Optional[RouterClassifier] = None
        self.locals: list[LocalState] = []
        self.last_timestep = -1
        self.max_seen_arrival = -1
        self.history: list[AdaptationReport] = []

    # -- helpers -------------------------------------------------------------

    @property
    def initialized(self) -> bool:
        return self.accepted_tree is not None

    @property
    def divisions(self):
        return self.partition.divisions if self.partition else []

    def _new_model(self, division: int) -> LocalModel:
        cfg = self.config
        return make_model(cfg.local_model, seed=cfg.seed * 1009 + division, **cfg.model_params)

    def _new_detector(self) -> AdwinDetector:
        return AdwinDetector(self.config.warning_confidence, self.config.drift_confidence)

    def _fit(self, model: LocalModel, samples: Sequence[ConfigurationSample]) -> LocalModel:
        return model.fit(features_matrix(samples), targets_vector(samples))

    def _train_router(self) -> None:
        X = np.vstack([features_matrix(ls.window.samples) for ls in self.locals])
        labels = np.concatenate([np.full(len(ls.window), i) for i, ls in enumerate(self.locals)])
        self.router = RouterClassifier(self.config.router_trees, self.config.seed).fit(X, labels)

    def _redivide(self, tree: RegressionTree) -> None:
        """Accept ``tree`` and rebuild divisions, windows, detectors and models from the global window."""
        samples = self.global_window.samples
        partition = build_partition(tree, samples, self.config.depth, self.config.min_division_size)
        if any(len(d) < 2 for d in partition.divisions):
            raise ValueError(
                f"need >= {self.config.min_division_size} samples to train a local model, got {len(samples)}"
            )
        self.accepted_tree = tree
        self.accepted_importance = total_importance(tree, self.config.normalize_importance)
        self.partition = partition
        self.locals = []
        for d in partition.divisions:
            window = SlidingWindow(list(d.samples))
            model = self._fit(self._new_model(d.id), window.samples)
            self.locals.append(LocalState(model, window, self._new_detector()))
        self._train_router()

    def _global_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        samples = self.global_window.samples
        return features_matrix(samples), targets_vector(samples)

    # -- public API ----------------------------------------------------------

    def initialize(self, first_batch: Batch) -> AdaptationReport:
        if self.initialized:
            raise RuntimeError("engine is already initialized")
        start = time.perf_counter()
        if len(first_batch) < self.config.min_division_size:
            raise ValueError(
                f"first batch has {len(first_batch)} samples; at least {self.config.min_division_size} are needed"
            )
        window_append(self.global_window, first_batch)
        tree = fit_cart(*self._global_matrix(), self.config.depth)
        self.candidate_tree = tree
        self._redivide(tree)
        self.last_timestep = first_batch.timestep
        self.max_seen_arrival = max(s.arrival_index for s in first_batch.samples)
        report = AdaptationReport(
            timestep=first_batch.timestep,
            actions={i: Action.INIT for i in range(len(self.locals))},
            new_samples={i: len(ls.window) for i, ls in enumerate(self.locals)},
            detector_states={i: ls.detector.state.value for i, ls in enumerate(self.locals)},
            adapt_seconds=time.perf_counter() - start,
        )
        self.history.append(report)
        return report

    def observe_batch(self, batch: Batch) -> AdaptationReport:
        if not self.initialized:
            raise RuntimeError("engine is not initialized; call initialize() with the first batch")
        if batch.timestep <= self.last_timestep:
            raise ValueError(f"timestep {batch.timestep} does not follow {self.last_timestep}")
        cfg = self.config
        start = time.perf_counter()

        # 1. global window and candidate tree
        window_append(self.global_window, batch)
        self.candidate_tree = fit_cart(*self._global_matrix(), cfg.depth)

        # 2. route by the accepted tree into division windows; errors use the pre-update models
        X_new, y_new = batch.features(), batch.targets()
        assigned = self.partition.assign(X_new)
        assert (assigned >= 0).all() and (assigned < len(self.locals)).all()
        members: dict[int, np.ndarray] = {}
        errors: dict[int, np.ndarray] = {}
        for i in np.unique(assigned):
            rows = np.flatnonzero(assigned == i)
            ls = self.locals[i]
            members[int(i)] = rows
            if not cfg.disable_lower:
                pred = ls.model.predict(X_new[rows])
                errors[int(i)] = np.abs(y_new[rows] - pred) / np.abs(y_new[rows])
            window_append(ls.window, [batch.samples[k] for k in rows])
        self._train_router()

        actions = {i: Action.NONE for i in range(len(self.locals))}
        report = AdaptationReport(timestep=batch.timestep, actions=actions,
                                  new_samples={i: len(r) for i, r in members.items()})

        # 3. upper level
        sizes = [len(ls.window) for ls in self.locals]
        report.epsilon = hoeffding_epsilon(sizes, cfg.delta)
        report.delta_g = total_importance(self.candidate_tree, cfg.normalize_importance) - self.accepted_importance
        if not cfg.disable_upper and report.delta_g > report.epsilon:
            self._redivide(self.candidate_tree)
            report.global_drift = True
            report.actions = {i: Action.GLOBAL for i in range(len(self.locals))}
            report.new_samples = {}
            return self._finish(report, batch, start)

        # 4. lower level
        for i, rows in members.items():
            ls = self.locals[i]
            if cfg.disable_lower:
                continue
            for k, err in zip(rows, errors[i]):
                ls.detector.observe(float(err), batch.samples[k].arrival_index)
                if ls.detector.state is DetectorState.DRIFT:
                    break
            ls.detector.close_batch()
            if ls.detector.state is DetectorState.DRIFT:
                self._adapt_local(ls)
                actions[i] = Action.LOCAL

        # 5. hybrid maintenance
        if not cfg.disable_hybrid:
            for i, rows in members.items():
                if actions[i] is not Action.NONE:
                    continue
                ls = self.locals[i]
                ls.t_prime += 1
                if maintenance_decision(ls.t_prime, cfg.alpha) is Maintenance.INCREMENTAL:
                    ls.model.update(X_new[rows], y_new[rows])
                    actions[i] = Action.INCREMENTAL
                else:
                    self._fit(ls.model, ls.window.samples)
                    actions[i] = Action.RETRAIN
        return self._finish(report, batch, start)

    def _adapt_local(self, ls: LocalState) -> None:
        keep_at_least = self.config.min_division_size
        before = list(ls.window.samples)
        _, dropped = prune_on_drift(ls.window, ls.detector)
        if len(ls.window) < keep_at_least:
            # the timely part is too small to train on; keep the newest few
            ls.window.samples = before[-keep_at_least:]
            kept = {s.arrival_index for s in ls.window.samples}
            dropped = [a for a in dropped if a not in kept]
        window_remove(self.global_window, dropped)
        self._fit(ls.model, ls.window.samples)
        ls.detector.reset()
        ls.t_prime = 0

    def _finish(self, report: AdaptationReport, batch: Batch, start: float) -> AdaptationReport:
        report.detector_states = {i: ls.detector.state.value for i, ls in enumerate(self.locals)}
        self.last_timestep = batch.timestep
        self.max_seen_arrival = max(self.max_seen_arrival, max(s.arrival_index for s in batch.samples))
        report.adapt_seconds = time.perf_counter() - start
        self.history.append(report)
        return report

    def predict_many(self, X) -> np.ndarray:
        if not self.initialized:
            raise RuntimeError("engine is not initialized")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        routes = self.router.route_many(X)
        out = np.empty(len(X))
        for i in np.unique(routes):
            rows = routes == i
            out[rows] = self.locals[int(i)].model.predict(X[rows])
        return out

    def predict(self, features: Sequence[float]) -> float:
        return float(self.predict_many(np.asarray(features, dtype=float)[None, :])[0])

    def model_fingerprints(self) -> list[str]:
        return [ls.model.fingerprint() for ls in self.locals]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        if self.accepted_tree is not None:
            h.update(self.accepted_tree.fingerprint().encode())
        for ls in self.locals:
            h.update(ls.model.fingerprint().encode())
            h.update(np.array(ls.window.arrival_indices(), dtype=np.int64).tobytes())
        h.update(np.array(self.global_window.arrival_indices(), dtype=np.int64).tobytes())
        return h.hexdigest()


def initialize(first_batch: Batch, config: Optional[EngineConfig] = None) -> DHDAEngine:
    engine = DHDAEngine(config)
    engine.initialize(first_batch)
    return engine


def observe_batch(engine: DHDAEngine, batch: Batch) -> tuple[DHDAEngine, AdaptationReport]:
    return engine, engine.observe_batch(batch)


def predict(engine: DHDAEngine, features: Sequence[float]) -> float:
    return engine.predict(features)
