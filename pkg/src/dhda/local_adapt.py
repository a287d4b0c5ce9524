"""Per-division local drift detection.

An ADWIN exponential histogram watches each division's error stream. A cut
between the older and newer parts of the window only counts when the newer
part is worse (the trace filter). Crossing the relaxed confidence flags a
warning and remembers where it happened; crossing the strict confidence while
a warning is already flagged declares drift. Significant *improvements* still
shrink the window, so stale high-error history cannot mask a later rise, but
they never raise an alarm.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import SlidingWindow, window_discard_before


class DetectorState(str, enum.Enum):
    STABLE = "stable"
    WARNING = "warning"
    DRIFT = "drift"


@dataclass(frozen=True)
class CutInfo:
    """The most significant degrading cut seen at the last alarm."""

    newer_start: int  # arrival index of the first observation in the newer sub-window
    older_mean: float
    newer_mean: float
    n_older: int
    n_newer: int


class AdwinDetector:
    """ADWIN over a nonnegative error stream with warning/drift staging.

    Args:
        warning_confidence: Confidence for flagging a warning (0.90 -> delta 0.1).
        drift_confidence: Confidence for declaring drift (0.99 -> delta 0.01).
        max_buckets: Buckets kept per histogram level before two are merged.
        min_sub_window: Smallest admissible size of either sub-window.
    """

    def __init__(self, warning_confidence: float = 0.90, drift_confidence: float = 0.99,
                 max_buckets: int = 5, min_sub_window: int = 5) -> None:
        for name, c in (("warning_confidence", warning_confidence), ("drift_confidence", drift_confidence)):
            if not 0.0 < c < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {c}")
        if drift_confidence < warning_confidence:
            raise ValueError("drift confidence must be at least the warning confidence")
        if max_buckets < 2:
            raise ValueError(f"max_buckets must be >= 2, got {max_buckets}")
        self.warning_confidence = warning_confidence
        self.drift_confidence = drift_confidence
        self.max_buckets = max_buckets
        self.min_sub_window = max(1, min_sub_window)
        self.reset()

    # -- state -----------------------------------------------------------

    def reset(self) -> "AdwinDetector":
        # levels[i] holds [total, m2] pairs for buckets of 2**i observations, oldest first
        self._levels: list[list[list[float]]] = [[]]
        self._arrivals: list[int] = []
        self._width = 0
        self._total = 0.0
        self._m2 = 0.0
        self.state = DetectorState.STABLE
        self.warning_arrival_index: Optional[int] = None
        self.last_cut: Optional[CutInfo] = None
        self._last_arrival: Optional[int] = None
        self._warned_this_batch = False
        self.n_observed = 0
        return self

    @property
    def width(self) -> int:
        return self._width

    @property
    def mean(self) -> float:
        return self._total / self._width if self._width else 0.0

    def bucket_count(self) -> int:
        return sum(len(level) for level in self._levels)

    def snapshot(self) -> dict:
        return {
            "state": self.state.value,
            "width": self._width,
            "mean": self.mean,
            "warning_arrival_index": self.warning_arrival_index,
            "buckets": self.bucket_count(),
        }

    # -- histogram maintenance -------------------------------------------

    def _insert(self, value: float) -> None:
        if self._width:
            mean = self._total / self._width
            self._m2 += self._width * (value - mean) ** 2 / (self._width + 1)
        self._width += 1
        self._total += value
        self._levels[0].append([value, 0.0])
        level = 0
        while len(self._levels[level]) > self.max_buckets:
            (t1, v1), (t2, v2) = self._levels[level][0], self._levels[level][1]
            size = 2.0**level
            merged_m2 = v1 + v2 + size * size * (t1 / size - t2 / size) ** 2 / (2 * size)
            del self._levels[level][:2]
            if level + 1 == len(self._levels):
                self._levels.append([])
            self._levels[level + 1].append([t1 + t2, merged_m2])
            level += 1

    def _drop_oldest(self, n_drop: int) -> None:
        """Remove whole buckets from the old end until ``n_drop`` observations are gone."""
        dropped = 0
        while dropped < n_drop and self._width:
            top = len(self._levels) - 1
            while top > 0 and not self._levels[top]:
                self._levels.pop()
                top -= 1
            total, m2 = self._levels[top].pop(0)
            size = 2**top
            rest = self._width - size
            if rest > 0:
                rest_total = self._total - total
                self._m2 -= m2 + size * rest * (total / size - rest_total / rest) ** 2 / (size + rest)
                self._m2 = max(self._m2, 0.0)
            else:
                self._m2 = 0.0
            self._width = rest
            self._total -= total
            dropped += size
        del self._arrivals[:dropped]
        while len(self._levels) > 1 and not self._levels[-1]:
            self._levels.pop()

    def _cuts(self) -> tuple[np.ndarray, np.ndarray]:
        """Sizes and sums of the older sub-window at every bucket boundary."""
        sizes, totals = [], []
        for level in range(len(self._levels) - 1, -1, -1):
            size = float(2**level)
            for total, _ in self._levels[level]:
                sizes.append(size)
                totals.append(total)
        n0 = np.cumsum(sizes)[:-1]
        s0 = np.cumsum(totals)[:-1]
        return n0, s0

    def _bound(self, n0: np.ndarray, n1: np.ndarray, delta: float) -> np.ndarray:
        n = self._width
        variance = self._m2 / n
        dd = math.log(2.0 * math.log(n) / delta)
        m = 1.0 / n0 + 1.0 / n1
        return np.sqrt(2.0 * m * variance * dd) + (2.0 / 3.0) * dd * m

    # -- observation -------------------------------------------------------

    def observe(self, error: float, arrival: int) -> DetectorState:
        """Add one error value and return the detector state afterwards."""
        if not math.isfinite(error):
            raise ValueError(f"non-finite error {error!r} at arrival {arrival}")
        if self._last_arrival is not None and arrival <= self._last_arrival:
            raise ValueError(f"arrival {arrival} is not after the previous arrival {self._last_arrival}")
        self._last_arrival = arrival
        self.n_observed += 1
        self._insert(float(error))
        self._arrivals.append(arrival)
        if self.state is DetectorState.DRIFT or self._width < 2 * self.min_sub_window:
            return self.state

        n0, s0 = self._cuts()
        n1 = self._width - n0
        ok = (n0 >= self.min_sub_window) & (n1 >= self.min_sub_window)
        if not ok.any():
            return self.state
        n0, s0, n1 = n0[ok], s0[ok], n1[ok]
        older = s0 / n0
        newer = (self._total - s0) / n1
        diff = newer - older
        warn_bound = self._bound(n0, n1, 1.0 - self.warning_confidence)
        drift_bound = self._bound(n0, n1, 1.0 - self.drift_confidence)

        was_warning = self.state is DetectorState.WARNING
        rising = diff > warn_bound
        if rising.any():
            k = int(np.argmax(diff / warn_bound * rising))
            self.last_cut = CutInfo(
                newer_start=self._arrivals[int(n0[k])],
                older_mean=float(older[k]),
                newer_mean=float(newer[k]),
                n_older=int(n0[k]),
                n_newer=int(n1[k]),
            )
            self._warned_this_batch = True
            if was_warning and (diff > drift_bound).any():
                self.state = DetectorState.DRIFT
                return self.state
            if not was_warning:
                self.state = DetectorState.WARNING
                self.warning_arrival_index = arrival
            return self.state

        falling = -diff > drift_bound
        if falling.any():
            # the model improved: forget the worse past without raising anything
            k = int(np.flatnonzero(falling)[-1])
            self._drop_oldest(int(n0[k]))
        return self.state

    def close_batch(self) -> DetectorState:
        """End of a timestep: a warning with no supporting cut this batch lapses."""
        if self.state is DetectorState.WARNING and not self._warned_this_batch:
            self.state = DetectorState.STABLE
            self.warning_arrival_index = None
        self._warned_this_batch = False
        return self.state


def adwin_observe(detector: AdwinDetector, error: float, arrival: int) -> tuple[AdwinDetector, DetectorState]:
    return detector, detector.observe(error, arrival)


def detector_reset(detector: AdwinDetector) -> AdwinDetector:
    return detector.reset()


def prune_on_drift(window: SlidingWindow, detector: AdwinDetector) -> tuple[SlidingWindow, list[int]]:
    """Discard samples older than the latest warning; returns the window and the dropped arrivals.

    Falls back to the ADWIN cut when no warning position survived.
    """
    if detector.state is not DetectorState.DRIFT:
        raise ValueError(f"prune_on_drift requires a drifting detector, state is {detector.state.value}")
    if detector.warning_arrival_index is not None:
        cutoff = detector.warning_arrival_index
    elif detector.last_cut is not None:
        cutoff = detector.last_cut.newer_start
    else:
        raise ValueError("drifting detector has neither a warning position nor a cut")
    dropped = [s.arrival_index for s in window.samples if s.arrival_index < cutoff]
    window_discard_before(window, cutoff)
    return window, dropped
