import numpy as np
import pytest

from dhda.core import Batch, make_sample
from dhda.evaluation import (
    DaLLearner,
    make_learner,
    mape,
    mmape,
    run_baseline,
    run_many,
    run_prequential,
    summarize,
)
from dhda.orchestrator import EngineConfig
from dhda.stream import Concept, SynthSpec, scenario, synth_stream


def test_mape_examples():
    assert mape([100], [110]) == pytest.approx(0.10, abs=1e-15)
    assert mape([3.0, 7.0], [3.0, 7.0]) == 0.0
    assert mape([2, 4], [1, 2]) == 0.5
    with pytest.raises(ValueError, match="non-positive"):
        mape([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError, match="equal"):
        mape([1.0], [1.0, 2.0])


def test_mmape_examples():
    assert mmape([0.1, 0.2, 0.3]) == pytest.approx(0.2, abs=1e-15)
    assert mmape([0.37]) == 0.37
    # batch sizes do not matter: each batch counts once
    small, large = mape([1.0], [1.0]), mape([1.0] * 1000, [2.0] * 1000)
    assert mmape([small, large]) == 0.5
    with pytest.raises(ValueError):
        mmape([])


class Memorizer:
    """Predicts remembered values exactly and 1.0 for anything new."""

    name = "memorizer"

    def __init__(self, cheat=False):
        self.table, self.max_seen_arrival, self.cheat = {}, -1, cheat

    def _learn(self, batch):
        for s in batch.samples:
            self.table[s.features] = s.performance
            self.max_seen_arrival = max(self.max_seen_arrival, s.arrival_index)
        if self.cheat:
            self.max_seen_arrival += 1

    def initialize(self, batch):
        self._learn(batch)

    def observe_batch(self, batch):
        self._learn(batch)
        return type("R", (), {"events": lambda self: []})()

    def predict_many(self, X):
        return np.array([self.table.get(tuple(x), 1.0) for x in np.asarray(X, float)])

    def fingerprint(self):
        return str(len(self.table))


def _unique_stream(n_batches=5, size=4):
    return [Batch(tuple(make_sample([t * size + k], 10.0, t * size + k) for k in range(size)), t)
            for t in range(n_batches)]


def test_each_batch_is_scored_before_it_is_learned():
    trace = run_prequential(Memorizer(), _unique_stream())
    assert trace.per_timestep_mape == [0.9] * 4
    assert trace.timesteps == [1, 2, 3, 4]


def test_causality_violation_is_reported():
    trace = run_prequential(Memorizer(cheat=True), _unique_stream())
    assert not trace.ok and "causality" in trace.error
    assert trace.timesteps == []


class Breaks(Memorizer):
    def observe_batch(self, batch):
        if batch.timestep == 3:
            raise RuntimeError("out of memory")
        return super().observe_batch(batch)


def test_failure_truncates_the_trace_loudly():
    trace = run_prequential(Breaks(), _unique_stream())
    assert trace.timesteps == [1, 2]
    assert "timestep 3" in trace.error and "out of memory" in trace.error
    assert trace.mmape == pytest.approx(0.9)


def test_prequential_needs_two_batches():
    with pytest.raises(ValueError, match="two batches"):
        run_prequential(Memorizer(), _unique_stream(1))


def test_trace_bookkeeping_for_the_engine():
    stream, _ = synth_stream(scenario("global", 24), 0)
    trace = run_prequential(make_learner("DHDA"), stream)
    assert trace.ok and len(trace.per_timestep_mape) == len(stream) - 1
    assert len(trace.per_timestep_adapt_seconds) == len(trace.delta_g) == len(trace.epsilon) == 23
    assert abs(trace.mmape - float(np.mean(trace.per_timestep_mape))) <= 1e-12
    assert {k for _, k, _ in trace.adaptation_events} <= {"incremental", "retrain", "local", "global"}


def test_noise_free_learning_converges():
    spec = SynthSpec(Concept(10, {0: 3.0, 1: -2.0, 2: 1.0}), n_binary=3, n_batches=15, noise=0.0)
    stream, _ = synth_stream(spec, 0)
    trace = run_baseline("DaL_retrain_every_step", stream)
    assert max(trace.per_timestep_mape[-5:]) < 1e-9


def test_engine_error_falls_on_a_noise_free_stationary_stream():
    stream, _ = synth_stream(scenario("stationary", 41, noise=0.0), 0)
    trace = run_prequential(make_learner("DHDA"), stream)
    medians = [np.median(trace.per_timestep_mape[k:k + 10]) for k in range(0, 40, 10)]
    assert all(b <= a for a, b in zip(medians, medians[1:]))


def test_fixed_dal_stops_changing_after_fifty_samples():
    stream, _ = synth_stream(scenario("mixed", 8), 0)
    learner = DaLLearner("fixed", fixed_samples=50)
    learner.initialize(stream[0])
    prints = []
    for b in stream[1:]:
        learner.observe_batch(b)
        prints.append(learner.fingerprint())
    assert len(set(prints)) == 1
    assert learner._trained_on == 50


@pytest.mark.parametrize("n_batches", [10, 11, 12])
def test_rf_alpha_retrain_count(n_batches):
    stream, _ = synth_stream(scenario("stationary", n_batches), 0)
    trace = run_baseline("RF_alpha", stream, EngineConfig(alpha=3))
    assert len(trace.adaptation_events) == (n_batches - 1) // 3


def test_full_retraining_matches_engine_without_drift():
    stream, _ = synth_stream(scenario("stationary", 30), 0)
    engine = run_prequential(make_learner("DHDA"), stream).mmape
    dal = run_baseline("DaL_retrain_every_step", stream).mmape
    assert abs(dal - engine) <= 0.2 * engine


def test_unknown_learner_and_duplicates():
    with pytest.raises(ValueError, match="unknown learner"):
        make_learner("ARF")
    with pytest.raises(ValueError, match="unknown baseline"):
        run_baseline("DHDA", [])
    with pytest.raises(ValueError, match="duplicate"):
        run_many(["DHDA", "DHDA"], [0], lambda s: [])


def _tiny(seed):
    return synth_stream(scenario("global", 6), seed)[0]


def test_summary_median_and_iqr():
    results = run_many(["DaL_fixed_50", "RF_r"], [0], _tiny)
    summary = summarize(results)
    assert set(summary) == {"DaL_fixed_50", "RF_r"}
    assert all(row["iqr"] == 0.0 and row["runs"] == 1 for row in summary.values())
    three = summarize(run_many(["RF_r"], [0, 1, 2], _tiny))["RF_r"]
    assert three["median"] == pytest.approx(float(np.median(three["mmape"])))


def test_parallel_runs_match_serial():
    serial = run_many(["DaL", "DHDA_NH"], [0, 1], _tiny)
    parallel = run_many(["DaL", "DHDA_NH"], [0, 1], _tiny, jobs=2)
    assert [r.trace.per_timestep_mape for r in serial] == [r.trace.per_timestep_mape for r in parallel]
