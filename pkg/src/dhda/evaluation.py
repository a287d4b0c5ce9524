"""Prequential (test-then-train) evaluation, baselines and multi-seed runs."""

from __future__ import annotations

import hashlib
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .core import Batch, ConfigurationSample, features_matrix, targets_vector
from .models import RandomForestModel, RouterClassifier, make_model
from .orchestrator import DHDAEngine, EngineConfig
from .partition import build_partition, fit_cart

log = logging.getLogger(__name__)


def mape(actuals: Sequence[float], predictions: Sequence[float]) -> float:
    y = np.asarray(actuals, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if y.shape != p.shape or y.size == 0:
        raise ValueError(f"need equal, nonzero lengths; got {y.size} actuals and {p.size} predictions")
    if (y <= 0).any():
        raise ValueError("MAPE is undefined for non-positive actual values")
    return float(np.mean(np.abs(y - p) / y))


def mmape(per_batch_mape: Sequence[float]) -> float:
    if len(per_batch_mape) == 0:
        raise ValueError("mMAPE needs at least one batch")
    return float(np.mean(per_batch_mape))


class Learner(Protocol):
    name: str
    max_seen_arrival: int

    def initialize(self, first_batch: Batch): ...

    def observe_batch(self, batch: Batch): ...

    def predict_many(self, X) -> np.ndarray: ...

    def fingerprint(self) -> str: ...


@dataclass
class StepReport:
    timestep: int
    event_list: list[tuple[str, int]] = field(default_factory=list)
    adapt_seconds: float = 0.0
    delta_g: float = float("nan")
    epsilon: float = float("nan")

    def events(self) -> list[tuple[str, int]]:
        return self.event_list


@dataclass
class EvaluationTrace:
    learner: str
    timesteps: list[int] = field(default_factory=list)
    per_timestep_mape: list[float] = field(default_factory=list)
    per_timestep_adapt_seconds: list[float] = field(default_factory=list)
    adaptation_events: list[tuple[int, str, int]] = field(default_factory=list)
    delta_g: list[float] = field(default_factory=list)
    epsilon: list[float] = field(default_factory=list)
    mmape: float = float("nan")
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def events_at(self, timestep: int) -> list[tuple[str, int]]:
        return [(k, d) for t, k, d in self.adaptation_events if t == timestep]


def run_prequential(learner: Learner, stream: Sequence[Batch]) -> EvaluationTrace:
    """Score each batch with the model learned from earlier batches, then learn from it."""
    if len(stream) < 2:
        raise ValueError("prequential evaluation needs at least two batches")
    trace = EvaluationTrace(learner=getattr(learner, "name", type(learner).__name__))
    learner.initialize(stream[0])
    for batch in stream[1:]:
        try:
            first_arrival = min(s.arrival_index for s in batch.samples)
            if learner.max_seen_arrival >= first_arrival:
                raise RuntimeError(
                    f"causality violated: learner saw arrival {learner.max_seen_arrival} "
                    f"before scoring batch {batch.timestep}"
                )
            predictions = learner.predict_many(batch.features())
            score = mape(batch.targets(), predictions)
            started = time.perf_counter()
            report = learner.observe_batch(batch)
            elapsed = time.perf_counter() - started
        except Exception as exc:  # fail loud: keep what was measured and say why it stopped
            trace.error = f"timestep {batch.timestep}: {exc!r}\n{traceback.format_exc()}"
            log.error("%s failed at timestep %d: %r", trace.learner, batch.timestep, exc)
            break
        trace.timesteps.append(batch.timestep)
        trace.per_timestep_mape.append(score)
        trace.per_timestep_adapt_seconds.append(elapsed)
        trace.adaptation_events.extend((batch.timestep, k, d) for k, d in report.events())
        trace.delta_g.append(float(getattr(report, "delta_g", float("nan"))))
        trace.epsilon.append(float(getattr(report, "epsilon", float("nan"))))
    if trace.per_timestep_mape:
        trace.mmape = mmape(trace.per_timestep_mape)
    return trace


# -- baselines ----------------------------------------------------------------


class _SampleStore:
    def __init__(self) -> None:
        self.samples: list[ConfigurationSample] = []
        self.max_seen_arrival = -1
        self._timestep = -1

    def add(self, batch: Batch) -> None:
        if batch.timestep <= self._timestep:
            raise ValueError(f"timestep {batch.timestep} does not follow {self._timestep}")
        self._timestep = batch.timestep
        self.samples.extend(batch.samples)
        self.max_seen_arrival = max(self.max_seen_arrival, max(s.arrival_index for s in batch.samples))


class DaLModel:
    """Offline divide-and-learn: CART divisions, one local model each, forest router."""

    def __init__(self, config: EngineConfig) -> None:
        self.config = config
        self.models = []
        self.router: Optional[RouterClassifier] = None
        self.tree = None

    def fit(self, samples: Sequence[ConfigurationSample]) -> "DaLModel":
        cfg = self.config
        X, y = features_matrix(samples), targets_vector(samples)
        self.tree = fit_cart(X, y, cfg.depth)
        partition = build_partition(self.tree, samples, cfg.depth, cfg.min_division_size)
        self.models = []
        for d in partition.divisions:
            m = make_model(cfg.local_model, seed=cfg.seed * 1009 + d.id, **cfg.model_params)
            self.models.append(m.fit(features_matrix(d.samples), targets_vector(d.samples)))
        labels = np.concatenate([np.full(len(d), d.id) for d in partition.divisions])
        Xd = np.vstack([features_matrix(d.samples) for d in partition.divisions])
        self.router = RouterClassifier(cfg.router_trees, cfg.seed).fit(Xd, labels)
        return self

    def predict_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        routes = self.router.route_many(X)
        out = np.empty(len(X))
        for i in np.unique(routes):
            out[routes == i] = self.models[int(i)].predict(X[routes == i])
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.tree.fingerprint().encode())
        for m in self.models:
            h.update(m.fingerprint().encode())
        return h.hexdigest()


class DaLLearner:
    """DaL retrained on everything seen, on a fixed schedule.

    ``schedule``: ``"every"`` retrains each timestep, ``"alpha"`` every
    ``alpha`` timesteps, ``"fixed"`` trains on the first ``fixed_samples``
    samples only and never again.
    """

    def __init__(self, schedule: str, config: Optional[EngineConfig] = None, fixed_samples: int = 50,
                 name: Optional[str] = None) -> None:
        if schedule not in ("every", "alpha", "fixed"):
            raise ValueError(f"unknown DaL schedule {schedule!r}")
        self.schedule = schedule
        self.config = config or EngineConfig()
        self.fixed_samples = fixed_samples
        self.name = name or {"every": "DaL", "alpha": "DaL_alpha", "fixed": "DaL_fixed"}[schedule]
        self._store = _SampleStore()
        self._steps = 0
        self._trained_on = 0
        self.model = DaLModel(self.config)

    @property
    def max_seen_arrival(self) -> int:
        return self._store.max_seen_arrival

    def _train(self) -> tuple[str, int]:
        data = self._store.samples
        if self.schedule == "fixed":
            data = data[: self.fixed_samples]
        self.model.fit(data)
        self._trained_on = len(data)
        return ("retrain", -1)

    def initialize(self, first_batch: Batch) -> StepReport:
        self._store.add(first_batch)
        self._train()
        return StepReport(first_batch.timestep, [("init", -1)])

    def observe_batch(self, batch: Batch) -> StepReport:
        start = time.perf_counter()
        self._store.add(batch)
        self._steps += 1
        events = []
        if self.schedule == "every":
            events.append(self._train())
        elif self.schedule == "alpha":
            if self._steps % self.config.alpha == 0:
                events.append(self._train())
        elif self._trained_on < self.fixed_samples and len(self._store.samples) > self._trained_on:
            events.append(self._train())
        return StepReport(batch.timestep, events, time.perf_counter() - start)

    def predict_many(self, X) -> np.ndarray:
        return self.model.predict_many(X)

    def fingerprint(self) -> str:
        return self.model.fingerprint()


class RFLearner:
    """A single random forest retrained on everything seen, every step or every ``alpha`` steps."""

    def __init__(self, schedule: str, config: Optional[EngineConfig] = None, name: Optional[str] = None) -> None:
        if schedule not in ("every", "alpha"):
            raise ValueError(f"unknown RF schedule {schedule!r}")
        self.schedule = schedule
        self.config = config or EngineConfig()
        self.name = name or {"every": "RF_r", "alpha": "RF_alpha"}[schedule]
        self._store = _SampleStore()
        self._steps = 0
        params = {k: v for k, v in self.config.model_params.items() if k in ("n_trees", "max_features")}
        self.model = RandomForestModel(seed=self.config.seed, **params)

    @property
    def max_seen_arrival(self) -> int:
        return self._store.max_seen_arrival

    def _train(self) -> tuple[str, int]:
        s = self._store.samples
        self.model.fit(features_matrix(s), targets_vector(s))
        return ("retrain", -1)

    def initialize(self, first_batch: Batch) -> StepReport:
        self._store.add(first_batch)
        self._train()
        return StepReport(first_batch.timestep, [("init", -1)])

    def observe_batch(self, batch: Batch) -> StepReport:
        start = time.perf_counter()
        self._store.add(batch)
        self._steps += 1
        events = []
        if self.schedule == "every" or self._steps % self.config.alpha == 0:
            events.append(self._train())
        return StepReport(batch.timestep, events, time.perf_counter() - start)

    def predict_many(self, X) -> np.ndarray:
        return self.model.predict(X)

    def fingerprint(self) -> str:
        return self.model.fingerprint()


BASELINES = {
    "DaL": ("dal", "every"),
    "DaL_retrain_every_step": ("dal", "every"),
    "DaL_fixed": ("dal", "fixed"),
    "DaL_fixed_50": ("dal", "fixed"),
    "DaL_alpha": ("dal", "alpha"),
    "RF_r": ("rf", "every"),
    "RF_retrain_every_step": ("rf", "every"),
    "RF_alpha": ("rf", "alpha"),
}

ABLATIONS = {"DHDA": {}, "DHDA_NU": {"disable_upper": True}, "DHDA_NL": {"disable_lower": True},
             "DHDA_NH": {"disable_hybrid": True}}

LEARNER_NAMES = tuple(ABLATIONS) + tuple(BASELINES)


def make_learner(name: str, config: Optional[EngineConfig] = None):
    config = config or EngineConfig()
    if name in ABLATIONS:
        engine = DHDAEngine(replace(config, **ABLATIONS[name]))
        engine.name = name
        return engine
    if name not in BASELINES:
        raise ValueError(f"unknown learner {name!r}; choose from {', '.join(LEARNER_NAMES)}")
    family, schedule = BASELINES[name]
    if family == "dal":
        return DaLLearner(schedule, config, name=name)
    return RFLearner(schedule, config, name=name)


def run_baseline(kind: str, stream: Sequence[Batch], config: Optional[EngineConfig] = None) -> EvaluationTrace:
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {', '.join(BASELINES)}")
    return run_prequential(make_learner(kind, config), stream)


# -- multi-seed driver --------------------------------------------------------


@dataclass
class RunResult:
    learner: str
    seed: int
    trace: EvaluationTrace


def _run_one(args: tuple[str, int, EngineConfig, Callable[[int], Sequence[Batch]]]) -> RunResult:
    name, seed, config, stream_factory = args
    learner = make_learner(name, replace(config, seed=seed))
    return RunResult(name, seed, run_prequential(learner, stream_factory(seed)))


def run_many(learners: Sequence[str], seeds: Sequence[int], stream_factory: Callable[[int], Sequence[Batch]],
             config: Optional[EngineConfig] = None, jobs: int = 1) -> list[RunResult]:
    """Every (learner, seed) pair on ``stream_factory(seed)``; results in submission order.

    ``stream_factory`` must be picklable when ``jobs > 1``.
    """
    if len(set(learners)) != len(learners):
        raise ValueError(f"duplicate learner names in {list(learners)}")
    config = config or EngineConfig()
    work = [(name, seed, config, stream_factory) for seed in seeds for name in learners]
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))


def summarize(results: Sequence[RunResult]) -> dict[str, dict]:
    """Median and interquartile range of mMAPE per learner."""
    by_learner: dict[str, list[float]] = {}
    for r in results:
        by_learner.setdefault(r.learner, []).append(r.trace.mmape)
    out = {}
    for name, values in by_learner.items():
        arr = np.asarray(values, dtype=float)
        q1, med, q3 = np.percentile(arr, [25, 50, 75])
        out[name] = {"median": float(med), "iqr": float(q3 - q1), "runs": len(arr), "mmape": [float(v) for v in arr]}
    return out
