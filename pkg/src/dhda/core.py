"""Shared domain types: configuration samples, batches, windows and divisions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfigurationSample:
    """One measured configuration.

    Attributes:
        features: Option values, already encoded as numerics.
        performance: Measured performance of the configuration.
        arrival_index: Position in the stream, assigned at ingestion.
        origin: Optional ``(environment, row)`` provenance used for audits.
    """

    features: tuple[float, ...]
    performance: float
    arrival_index: int = 0
    origin: Optional[tuple[str, int]] = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.performance):
            raise ValueError(f"non-finite performance {self.performance!r} at arrival {self.arrival_index}")
        if self.arrival_index < 0:
            raise ValueError(f"negative arrival index {self.arrival_index}")

    @property
    def arity(self) -> int:
        return len(self.features)


def make_sample(features: Iterable[float], performance: float, arrival_index: int = 0,
                origin: Optional[tuple[str, int]] = None) -> ConfigurationSample:
    return ConfigurationSample(tuple(float(v) for v in features), float(performance), int(arrival_index), origin)


@dataclass(frozen=True)
class Batch:
    """Samples that arrive together at one timestep."""

    samples: tuple[ConfigurationSample, ...]
    timestep: int

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError(f"batch at timestep {self.timestep} is empty")
        arities = {s.arity for s in self.samples}
        if len(arities) != 1:
            raise ValueError(f"batch at timestep {self.timestep} mixes feature arities {sorted(arities)}")
        if self.timestep < 0:
            raise ValueError(f"negative timestep {self.timestep}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def arity(self) -> int:
        return self.samples[0].arity

    def features(self) -> np.ndarray:
        return features_matrix(self.samples)

    def targets(self) -> np.ndarray:
        return targets_vector(self.samples)


def features_matrix(samples: Sequence[ConfigurationSample]) -> np.ndarray:
    if not samples:
        return np.empty((0, 0))
    return np.array([s.features for s in samples], dtype=float)


def targets_vector(samples: Sequence[ConfigurationSample]) -> np.ndarray:
    return np.array([s.performance for s in samples], dtype=float)


@dataclass
class SlidingWindow:
    """Ordered sample buffer keyed by arrival index.

    ``capacity`` bounds the length (oldest evicted first); ``None`` means
    unbounded, in which case only drift pruning forgets data.
    """

    samples: list[ConfigurationSample] = field(default_factory=list)
    capacity: Optional[int] = None
    markers: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capacity is not None and self.capacity < 1:
            raise ValueError(f"window capacity must be positive, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def arity(self) -> Optional[int]:
        return self.samples[0].arity if self.samples else None

    def arrival_indices(self) -> list[int]:
        return [s.arrival_index for s in self.samples]

    def copy(self) -> "SlidingWindow":
        return SlidingWindow(list(self.samples), self.capacity, dict(self.markers))


def window_append(window: SlidingWindow, batch: Batch | Sequence[ConfigurationSample]) -> SlidingWindow:
    """Append samples in arrival order, evicting the oldest past capacity.

    The window is mutated in place and also returned.
    """
    samples = batch.samples if isinstance(batch, Batch) else tuple(batch)
    if not samples:
        return window
    arity = window.arity
    last = window.samples[-1].arrival_index if window.samples else -1
    for s in samples:
        if arity is not None and s.arity != arity:
            raise ValueError(
                f"arity mismatch: window holds {arity} options, sample {s.arrival_index} has {s.arity}"
            )
        if s.arrival_index <= last:
            raise ValueError(
                f"arrival index {s.arrival_index} does not follow window tail {last}"
            )
        last = s.arrival_index
        arity = s.arity
    window.samples.extend(samples)
    if window.capacity is not None and len(window.samples) > window.capacity:
        del window.samples[: len(window.samples) - window.capacity]
        oldest = window.samples[0].arrival_index
        window.markers = {k: v for k, v in window.markers.items() if v >= oldest}
    return window


def window_discard_before(window: SlidingWindow, cutoff: int) -> SlidingWindow:
    """Keep exactly the samples with ``arrival_index >= cutoff`` (in place)."""
    window.samples = [s for s in window.samples if s.arrival_index >= cutoff]
    window.markers = {k: v for k, v in window.markers.items() if v >= cutoff}
    return window


def window_remove(window: SlidingWindow, arrivals: Iterable[int]) -> SlidingWindow:
    """Drop the given arrival indices from the window (in place)."""
    drop = set(arrivals)
    if drop:
        window.samples = [s for s in window.samples if s.arrival_index not in drop]
    return window


@dataclass
class Division:
    """Samples sharing one depth-bounded tree path.

    ``path`` holds ``(option index, threshold, goes_left)`` triples; a sample
    belongs when ``(x[option] <= threshold) == goes_left`` for every triple.
    """

    id: int
    samples: list[ConfigurationSample]
    path: list[tuple[int, float, bool]]

    def contains(self, features: Sequence[float]) -> bool:
        return all((features[j] <= thr) == left for j, thr, left in self.path)

    def __len__(self) -> int:
        return len(self.samples)
