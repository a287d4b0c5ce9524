import numpy as np
import pytest

from dhda.core import Batch, make_sample


def samples_from(X, y, start=0):
    return [make_sample(x, p, start + k) for k, (x, p) in enumerate(zip(np.asarray(X, float), y))]


def batch_from(X, y, timestep, start=None):
    start = timestep * len(y) if start is None else start
    return Batch(tuple(samples_from(X, y, start)), timestep)


def linear_stream(fn, n_batches, batch_size=32, arity=4, seed=0, noise=0.0):
    """Binary-option batches whose performance is ``fn(X)`` times (1 + noise)."""
    rng = np.random.default_rng(seed)
    out = []
    for t in range(n_batches):
        X = rng.integers(0, 2, size=(batch_size, arity)).astype(float)
        y = fn(X) * (1.0 + noise * rng.standard_normal(batch_size))
        out.append(batch_from(X, y, t))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS: list[str] = []


def verdict(label, ok, detail):
    """Record and print one acceptance line, then fail the test if it did not hold."""
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
