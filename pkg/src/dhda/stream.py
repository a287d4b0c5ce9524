"""Datasets, multi-environment stream construction and synthetic drift streams."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Batch, ConfigurationSample

log = logging.getLogger(__name__)


class StreamError(ValueError):
    pass


@dataclass
class EnvironmentTable:
    name: str
    option_names: list[str]
    samples: list[ConfigurationSample]

    @property
    def arity(self) -> int:
        return len(self.option_names)

    def __len__(self) -> int:
        return len(self.samples)


def load_dataset(path: str | Path, name: Optional[str] = None, drop_nonpositive: bool = True) -> EnvironmentTable:
    """Read one environment from a CSV: option columns, then the performance column.

    Rows whose performance is zero or negative cannot be scored by MAPE; they
    are dropped with a warning, or rejected when ``drop_nonpositive`` is off.
    """
    path = Path(path)
    name = name or path.stem
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise StreamError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise StreamError(f"{path}: need at least one option column and a performance column")
        samples: list[ConfigurationSample] = []
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise StreamError(f"{path}: row {line_no} has {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise StreamError(
                        f"{path}: row {line_no}, column {col + 1} ({header[col]!r}) is not numeric: {cell!r}"
                    ) from None
                if not np.isfinite(v):
                    raise StreamError(f"{path}: row {line_no}, column {col + 1} ({header[col]!r}) is not finite")
                values.append(v)
            perf = values[-1]
            if perf <= 0:
                if not drop_nonpositive:
                    raise StreamError(f"{path}: row {line_no} has non-positive performance {perf}")
                dropped += 1
                continue
            samples.append(ConfigurationSample(tuple(values[:-1]), perf, 0, (name, line_no - 2)))
    if dropped:
        log.warning("%s: dropped %d rows with non-positive performance", path, dropped)
    return EnvironmentTable(name=name, option_names=header[:-1], samples=samples)


def write_dataset(path: str | Path, option_names: Sequence[str], samples: Sequence[ConfigurationSample],
                  performance_name: str = "performance", comment: Optional[str] = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*option_names, performance_name])
        for s in samples:
            w.writerow([repr(float(v)) for v in (*s.features, s.performance)])


class Mixing(str, enum.Enum):
    RANDOM = "random"
    SEQUENTIAL = "sequential"
    CUSTOM = "custom"


@dataclass
class StreamSpec:
    """How environments are mixed into a stream.

    ``schedule`` is only used with ``Mixing.CUSTOM``: a list of
    ``(environment position, number of batches)`` segments; each segment
    draws (without replacement) from that environment only.
    """

    environments: list[EnvironmentTable]
    batch_size: int = 32
    cap_per_env: Optional[int] = 4000
    seed: int = 0
    mixing: Mixing = Mixing.RANDOM
    schedule: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.mixing = Mixing(self.mixing)
        if self.batch_size < 1:
            raise StreamError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.cap_per_env is not None and self.cap_per_env < 1:
            raise StreamError(f"cap_per_env must be positive, got {self.cap_per_env}")
        if not self.environments:
            raise StreamError("a stream needs at least one environment")
        arities = {e.arity for e in self.environments}
        if len(arities) != 1:
            raise StreamError(f"environments disagree on option count: {sorted(arities)}")


def _capped_rows(spec: StreamSpec, rng: np.random.Generator) -> list[list[ConfigurationSample]]:
    pools = []
    for env in spec.environments:
        n = len(env)
        cap = n if spec.cap_per_env is None else spec.cap_per_env
        if cap > n:
            log.warning("cap %d exceeds the %d samples of environment %s; using all", cap, n, env.name)
            cap = n
        pick = rng.permutation(n)[:cap]
        pools.append([env.samples[k] for k in pick])
    return pools


def build_stream(spec: StreamSpec) -> list[Batch]:
    """Draw samples without replacement into consecutive batches (the short tail is dropped)."""
    rng = np.random.default_rng(spec.seed)
    pools = _capped_rows(spec, rng)
    if spec.mixing is Mixing.RANDOM:
        flat = [s for pool in pools for s in pool]
        ordered = [flat[k] for k in rng.permutation(len(flat))]
    elif spec.mixing is Mixing.SEQUENTIAL:
        ordered = [s for pool in pools for s in pool]
    else:
        if not spec.schedule:
            raise StreamError("custom mixing needs a schedule")
        cursor = [0] * len(pools)
        ordered = []
        for env_pos, n_batches in spec.schedule:
            if not 0 <= env_pos < len(pools):
                raise StreamError(f"schedule names environment {env_pos}, only {len(pools)} exist")
            take = n_batches * spec.batch_size
            chunk = pools[env_pos][cursor[env_pos]: cursor[env_pos] + take]
            if len(chunk) < take:
                raise StreamError(f"environment {spec.environments[env_pos].name} runs out of samples")
            cursor[env_pos] += take
            ordered.extend(chunk)
    n_batches = len(ordered) // spec.batch_size
    if n_batches == 0:
        raise StreamError(f"{len(ordered)} samples cannot fill one batch of {spec.batch_size}")
    batches = []
    for t in range(n_batches):
        chunk = ordered[t * spec.batch_size:(t + 1) * spec.batch_size]
        samples = tuple(
            ConfigurationSample(s.features, s.performance, t * spec.batch_size + k, s.origin)
            for k, s in enumerate(chunk)
        )
        batches.append(Batch(samples, t))
    return batches


# -- synthetic streams --------------------------------------------------------


@dataclass
class Concept:
    """Performance from linear and pairwise option effects.

    ``additive``: ``intercept + sum(effects)``. ``multiplicative``:
    ``intercept * exp(sum(effects))``, where each effect is a relative change,
    the usual shape of option influence on runtimes.
    """

    intercept: float
    weights: dict[int, float] = field(default_factory=dict)
    interactions: list[tuple[int, int, float]] = field(default_factory=list)
    form: str = "additive"

    def __post_init__(self) -> None:
        if self.form not in ("additive", "multiplicative"):
            raise StreamError(f"unknown concept form {self.form!r}")

    def __call__(self, X: np.ndarray) -> np.ndarray:
        effect = np.zeros(len(X))
        for j, w in self.weights.items():
            effect += w * X[:, int(j)]
        for i, j, w in self.interactions:
            effect += w * X[:, int(i)] * X[:, int(j)]
        if self.form == "multiplicative":
            return float(self.intercept) * np.exp(effect)
        return float(self.intercept) + effect

    @classmethod
    def from_dict(cls, d: dict) -> "Concept":
        return cls(
            intercept=float(d["intercept"]),
            weights={int(k): float(v) for k, v in d.get("weights", {}).items()},
            interactions=[(int(i), int(j), float(w)) for i, j, w in d.get("interactions", [])],
            form=d.get("form", "additive"),
        )

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "weights": {str(k): v for k, v in self.weights.items()},
                "interactions": [list(t) for t in self.interactions], "form": self.form}


@dataclass
class ConceptChange:
    """From ``batch`` on, ``concept`` generates performance inside ``region``.

    ``region`` maps option index to required value; ``None`` makes the change
    global, which also clears every earlier local override.
    """

    batch: int
    concept: Concept
    region: Optional[dict[int, float]] = None

    @property
    def scope(self) -> str:
        return "global" if self.region is None else "local"

    def to_dict(self) -> dict:
        return {"batch": self.batch, "concept": self.concept.to_dict(),
                "region": None if self.region is None else {str(k): v for k, v in self.region.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptChange":
        region = d.get("region")
        return cls(int(d["batch"]), Concept.from_dict(d["concept"]),
                   None if region is None else {int(k): float(v) for k, v in region.items()})


@dataclass
class SynthSpec:
    base: Concept
    changes: list[ConceptChange] = field(default_factory=list)
    n_binary: int = 8
    n_numeric: int = 0
    numeric_levels: int = 5
    n_batches: int = 100
    batch_size: int = 32
    noise: float = 0.02  # relative Gaussian noise

    @property
    def arity(self) -> int:
        return self.n_binary + self.n_numeric

    def option_names(self) -> list[str]:
        return [f"x{j}" for j in range(self.arity)]

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "changes": [c.to_dict() for c in self.changes],
                "n_binary": self.n_binary, "n_numeric": self.n_numeric, "numeric_levels": self.numeric_levels,
                "n_batches": self.n_batches, "batch_size": self.batch_size, "noise": self.noise}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        base = Concept.from_dict(d.pop("base"))
        changes = [ConceptChange.from_dict(c) for c in d.pop("changes", [])]
        return cls(base=base, changes=changes, **d)


@dataclass(frozen=True)
class Annotation:
    timestep: int
    scope: str
    region: Optional[tuple[tuple[int, float], ...]] = None


def _regions_overlap(a: dict[int, float], b: dict[int, float]) -> bool:
    return all(a[k] == b[k] for k in a.keys() & b.keys())


def synth_stream(spec: SynthSpec, seed: int = 0) -> tuple[list[Batch], list[Annotation]]:
    """Generate a stream whose concept switches at the declared batches."""
    if spec.n_batches < 1 or spec.batch_size < 1:
        raise StreamError("a synthetic stream needs at least one batch of one sample")
    local = [c.region for c in spec.changes if c.region is not None]
    for a in range(len(local)):
        for b in range(a + 1, len(local)):
            if _regions_overlap(local[a], local[b]):
                raise StreamError(f"local regions {local[a]} and {local[b]} overlap")
    for c in spec.changes:
        if c.region is not None and any(not 0 <= k < spec.arity for k in c.region):
            raise StreamError(f"region {c.region} names options outside 0..{spec.arity - 1}")
    changes = sorted(spec.changes, key=lambda c: c.batch)
    rng = np.random.default_rng(seed)
    batches: list[Batch] = []
    base, overrides = spec.base, []
    pending = list(changes)
    for t in range(spec.n_batches):
        while pending and pending[0].batch <= t:
            c = pending.pop(0)
            if c.region is None:
                base, overrides = c.concept, []
            else:
                overrides.append(c)
        X = np.empty((spec.batch_size, spec.arity))
        X[:, :spec.n_binary] = rng.integers(0, 2, size=(spec.batch_size, spec.n_binary))
        if spec.n_numeric:
            X[:, spec.n_binary:] = rng.integers(1, spec.numeric_levels + 1, size=(spec.batch_size, spec.n_numeric))
        y = base(X)
        for c in overrides:
            inside = np.all([X[:, k] == v for k, v in c.region.items()], axis=0)
            y[inside] = c.concept(X[inside])
        if spec.noise:
            y = y * (1.0 + spec.noise * rng.standard_normal(len(y)))
        if (y <= 0).any():
            raise StreamError(f"concepts produced non-positive performance at batch {t}; raise the intercepts")
        start = t * spec.batch_size
        samples = tuple(ConfigurationSample(tuple(X[k]), float(y[k]), start + k, ("synthetic", start + k))
                        for k in range(spec.batch_size))
        batches.append(Batch(samples, t))
    notes = [Annotation(c.batch, c.scope, None if c.region is None else tuple(sorted(c.region.items())))
             for c in changes if c.batch < spec.n_batches]
    return batches, notes


# Multiplicative concepts over twelve binary options. WEAK spreads small effects
# over many options; DOMINATED is ruled by x0 (a 5x effect); REGIONAL replaces
# DOMINATED inside x0 == 1 only.
WEAK = Concept(
    20.0,
    {11: -0.12, 10: 0.08, 1: 0.09, 9: -0.08, 8: 0.07, 6: -0.10, 5: 0.09, 4: 0.09},
    [(9, 11, 0.07), (3, 2, 0.11), (10, 6, 0.07), (10, 4, 0.08)],
    "multiplicative",
)
DOMINATED = Concept(
    10.0,
    {0: 1.6, 9: -0.19, 10: -0.12, 4: 0.12, 3: -0.13, 1: 0.19, 8: -0.17},
    [(8, 4, -0.17), (4, 1, 0.10), (11, 1, -0.18)],
    "multiplicative",
)
REGIONAL = Concept(
    49.5,
    {4: -0.28, 8: -0.17, 10: -0.26, 3: 0.16, 1: -0.24, 5: 0.15},
    [(9, 5, -0.26), (6, 3, -0.22), (8, 1, -0.18)],
    "multiplicative",
)


def scenario(name: str, n_batches: int = 200, noise: float = 0.02) -> SynthSpec:
    """Named synthetic drift scenarios over twelve binary options.

    * ``stationary`` - the x0-dominated concept throughout.
    * ``global`` - the weakly structured concept gives way to the
      x0-dominated one at 25% of the stream.
    * ``local`` - x0-dominated throughout, except that the region ``x0 == 1``
      switches concept at 25% of the stream.
    * ``mixed`` - the global change at 30% and the local change at 65%.
    """
    if name == "stationary":
        return SynthSpec(DOMINATED, n_binary=12, n_batches=n_batches, noise=noise)
    if name == "global":
        return SynthSpec(WEAK, [ConceptChange(n_batches // 4, DOMINATED)], n_binary=12, n_batches=n_batches,
                         noise=noise)
    if name == "local":
        return SynthSpec(DOMINATED, [ConceptChange(n_batches // 4, REGIONAL, {0: 1.0})], n_binary=12,
                         n_batches=n_batches, noise=noise)
    if name == "mixed":
        changes = [ConceptChange(int(0.3 * n_batches), DOMINATED),
                   ConceptChange(int(0.65 * n_batches), REGIONAL, {0: 1.0})]
        return SynthSpec(WEAK, changes, n_binary=12, n_batches=n_batches, noise=noise)
    raise StreamError(f"unknown scenario {name!r}; choose stationary, global, local or mixed")
