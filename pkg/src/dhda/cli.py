"""Command-line entry points: ``dhda run``, ``dhda compare`` and ``dhda synth``.

Every flag mirrors a key of the optional ``--config`` file (YAML or JSON);
a flag given on the command line wins over the file. All settings are
validated before any stream is built or model trained.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .evaluation import LEARNER_NAMES, RunResult, run_many, summarize
from .orchestrator import EngineConfig
from .stream import (
    Mixing,
    StreamError,
    StreamSpec,
    SynthSpec,
    build_stream,
    load_dataset,
    scenario,
    synth_stream,
    write_dataset,
)

log = logging.getLogger("dhda")

DEFAULT_SEEDS = 30
ABLATION_FLAGS = {"nu": "disable_upper", "nl": "disable_lower", "nh": "disable_hybrid"}
SCENARIOS = ("stationary", "global", "local", "mixed")


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    command: str
    datasets: list[str] = field(default_factory=list)
    batch_size: int = 32
    cap_per_env: Optional[int] = 4000
    mixing: str = "random"
    scenario: str = "mixed"
    n_batches: int = 200
    noise: float = 0.02
    synth: Optional[dict] = None
    seeds: list[int] = field(default_factory=lambda: list(range(DEFAULT_SEEDS)))
    learners: list[str] = field(default_factory=lambda: ["DHDA"])
    ablate: list[str] = field(default_factory=list)
    engine: EngineConfig = field(default_factory=EngineConfig)
    sensitivity: Optional[tuple[str, list[int]]] = None
    jobs: int = 1
    out: str = "dhda_out"

    def echo(self) -> dict[str, Any]:
        d = {
            "command": self.command,
            "seeds": self.seeds,
            "learners": self.learners,
            "ablate": self.ablate,
            "engine": self.engine.to_dict(),
            "batch_size": self.batch_size,
        }
        if self.datasets:
            d.update(datasets=self.datasets, cap_per_env=self.cap_per_env, mixing=self.mixing)
        elif self.synth is not None:
            d["synth"] = self.synth
        else:
            d.update(scenario=self.scenario, n_batches=self.n_batches, noise=self.noise)
        if self.sensitivity:
            d["sensitivity"] = {self.sensitivity[0]: self.sensitivity[1]}
        return d

    @property
    def system(self) -> str:
        if self.datasets:
            return "+".join(Path(p).stem for p in self.datasets)
        if self.synth is not None:
            return "synthetic"
        return f"synthetic:{self.scenario}"


def parse_seeds(value: Any) -> list[int]:
    """``5`` means seeds 0..4; ``1,4,9`` (or a list) names them."""
    if isinstance(value, int):
        if value < 1:
            raise ConfigError(f"seed count must be >= 1, got {value}")
        return list(range(value))
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    text = str(value).strip()
    try:
        if "," in text:
            return [int(v) for v in text.split(",") if v.strip()]
        return parse_seeds(int(text))
    except ValueError:
        raise ConfigError(f"cannot read seeds from {value!r}; give a count or a comma list") from None


def parse_sensitivity(value: str) -> tuple[str, list[int]]:
    """``alpha=1..7`` or ``alpha=1,3,5``."""
    key, sep, spec = str(value).partition("=")
    if not sep or key.strip() != "alpha":
        raise ConfigError(f"sensitivity sweeps support alpha only, e.g. alpha=1..7; got {value!r}")
    try:
        if ".." in spec:
            lo, hi = (int(v) for v in spec.split(".."))
            values = list(range(lo, hi + 1))
        else:
            values = [int(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(f"cannot read sweep values from {spec!r}") from None
    if not values or min(values) < 1:
        raise ConfigError(f"alpha values must be >= 1, got {values}")
    return "alpha", values


def _read_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist")
    text = p.read_text(encoding="utf-8")
    data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping at the top level")
    return data


_ENGINE_KEYS = ("depth", "delta", "alpha", "local_model", "window_capacity", "min_division_size")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw = _read_config_file(args.config) if args.config else {}
    cli = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "func", "verbose")}
    if "dataset" in raw:
        raw["datasets"] = raw.pop("dataset")
    if "dataset" in cli:
        cli["datasets"] = cli.pop("dataset")
    merged = {**raw, **cli}
    known = set(RunConfig.__dataclass_fields__) | set(_ENGINE_KEYS) | {"command", "seed"}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    cfg = RunConfig(command=args.command)
    engine_kw = {k: merged[k] for k in _ENGINE_KEYS if k in merged}
    for flag in merged.get("ablate", []) or []:
        if flag not in ABLATION_FLAGS:
            raise ConfigError(f"unknown ablation {flag!r}; choose from nu, nl, nh")
        engine_kw[ABLATION_FLAGS[flag]] = True
    try:
        cfg.engine = EngineConfig(**engine_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid engine setting: {exc}") from None
    cfg.ablate = sorted(set(merged.get("ablate", []) or []))

    if "seeds" in merged:
        cfg.seeds = parse_seeds(merged["seeds"])
    elif "seed" in merged:
        cfg.seeds = [int(merged["seed"])]
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError(f"duplicate seeds in {cfg.seeds}")

    learners = merged.get("learners", cfg.learners)
    if isinstance(learners, str):
        learners = [v.strip() for v in learners.split(",") if v.strip()]
    for name in learners:
        if name not in LEARNER_NAMES:
            raise ConfigError(f"unknown learner {name!r}; choose from {', '.join(LEARNER_NAMES)}")
    if len(set(learners)) != len(learners):
        raise ConfigError(f"duplicate learner names in {learners}")
    if args.command == "compare" and len(learners) < 2:
        raise ConfigError("compare needs at least two learners")
    cfg.learners = list(learners)

    cfg.datasets = [str(p) for p in merged.get("datasets", []) or []]
    for p in cfg.datasets:
        if not Path(p).is_file():
            raise ConfigError(f"dataset {p} does not exist")
    for key in ("batch_size", "n_batches", "jobs"):
        if key in merged:
            value = int(merged[key])
            if value < 1:
                raise ConfigError(f"{key} must be >= 1, got {value}")
            setattr(cfg, key, value)
    if "cap_per_env" in merged:
        cap = merged["cap_per_env"]
        cfg.cap_per_env = None if cap in (None, 0, "none") else int(cap)
        if cfg.cap_per_env is not None and cfg.cap_per_env < 1:
            raise ConfigError(f"cap_per_env must be positive, got {cap}")
    if "mixing" in merged:
        try:
            cfg.mixing = Mixing(merged["mixing"]).value
        except ValueError:
            raise ConfigError(f"unknown mixing {merged['mixing']!r}") from None
    if "noise" in merged:
        cfg.noise = float(merged["noise"])
        if cfg.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {cfg.noise}")
    if "scenario" in merged:
        if merged["scenario"] not in SCENARIOS:
            raise ConfigError(f"unknown scenario {merged['scenario']!r}; choose from {', '.join(SCENARIOS)}")
        cfg.scenario = merged["scenario"]
    if "synth" in merged and merged["synth"] is not None:
        try:
            SynthSpec.from_dict(merged["synth"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth spec: {exc}") from None
        cfg.synth = merged["synth"]
    if merged.get("sensitivity"):
        cfg.sensitivity = parse_sensitivity(merged["sensitivity"])
    if "out" in merged:
        cfg.out = str(merged["out"])
    return cfg


# -- streams --------------------------------------------------------------------


@dataclass
class StreamFactory:
    """Picklable ``seed -> stream`` mapping so runs can go to worker processes."""

    datasets: list[str]
    batch_size: int
    cap_per_env: Optional[int]
    mixing: str
    synth: Optional[dict]

    def __call__(self, seed: int):
        if self.datasets:
            envs = [load_dataset(p) for p in self.datasets]
            return build_stream(StreamSpec(envs, self.batch_size, self.cap_per_env, seed, Mixing(self.mixing)))
        return synth_stream(SynthSpec.from_dict(self.synth), seed)[0]


def synth_spec_of(cfg: RunConfig) -> SynthSpec:
    if cfg.synth is not None:
        return SynthSpec.from_dict(cfg.synth)
    return replace(scenario(cfg.scenario, cfg.n_batches, cfg.noise), batch_size=cfg.batch_size)


def stream_factory_of(cfg: RunConfig) -> StreamFactory:
    synth = None if cfg.datasets else synth_spec_of(cfg).to_dict()
    return StreamFactory(cfg.datasets, cfg.batch_size, cfg.cap_per_env, cfg.mixing, synth)


# -- outputs ----------------------------------------------------------------------


def _echo_header(cfg: RunConfig) -> str:
    return "# config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(path: Path, cfg: RunConfig, result: RunResult) -> None:
    """One row per scored timestep; several events in a timestep are ``;``-joined."""
    tr = result.trace
    events: dict[int, list[tuple[str, int]]] = {}
    for t, kind, div in tr.adaptation_events:
        events.setdefault(t, []).append((kind, div))
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(_echo_header(cfg))
        fh.write(f"# learner: {result.learner}, seed: {result.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestep", "mape", "event_kind", "division_id", "delta_g", "epsilon"])
        for k, t in enumerate(tr.timesteps):
            ev = events.get(t, [])
            w.writerow([t, _fmt(tr.per_timestep_mape[k]), ";".join(e[0] for e in ev),
                        ";".join(str(e[1]) for e in ev), _fmt(tr.delta_g[k]), _fmt(tr.epsilon[k])])
        if tr.error:
            fh.write(f"# error: {tr.error.splitlines()[0]}\n")


def write_timing(path: Path, cfg: RunConfig, result: RunResult) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(_echo_header(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestep", "adapt_seconds"])
        for t, s in zip(result.trace.timesteps, result.trace.per_timestep_adapt_seconds):
            w.writerow([t, f"{s:.6f}"])


def _label(learner: str, sweep: Optional[tuple[str, int]]) -> str:
    return learner if sweep is None else f"{learner}[{sweep[0]}={sweep[1]}]"


def execute(cfg: RunConfig) -> tuple[list[RunResult], dict[str, dict]]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    factory = stream_factory_of(cfg)
    sweeps: list[Optional[tuple[str, int]]] = [None]
    if cfg.sensitivity:
        sweeps = [(cfg.sensitivity[0], v) for v in cfg.sensitivity[1]]
    results: list[RunResult] = []
    for sweep in sweeps:
        engine = cfg.engine if sweep is None else replace(cfg.engine, **{sweep[0]: sweep[1]})
        for r in run_many(cfg.learners, cfg.seeds, factory, engine, jobs=cfg.jobs):
            r = RunResult(_label(r.learner, sweep), r.seed, r.trace)
            stem = f"{r.learner}_seed{r.seed}".replace("[", "_").replace("]", "").replace("=", "")
            write_trace(out / f"trace_{stem}.csv", cfg, r)
            write_timing(out / f"timing_{stem}.csv", cfg, r)
            results.append(r)
    summary = summarize(results)
    for name, row in summary.items():
        row["seeds"] = [r.seed for r in results if r.learner == name]
        row["failed"] = [r.seed for r in results if r.learner == name and not r.trace.ok]
    payload = {"system": cfg.system, "config": cfg.echo(), "learners": summary}
    (out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return results, summary


def write_compare(cfg: RunConfig, summary: dict[str, dict]) -> list[list[str]]:
    out = Path(cfg.out)
    header = ["system", "learner", "mmape_median", "mmape_iqr", "runs"]
    rows = [[cfg.system, name, f"{row['median']:.6f}", f"{row['iqr']:.6f}", str(row["runs"])]
            for name, row in summary.items()]
    with (out / "compare.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(_echo_header(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    widths = [max(len(r[k]) for r in [header, *rows]) for k in range(len(header))]
    lines = ["  ".join(c.ljust(widths[k]) for k, c in enumerate(r)).rstrip() for r in [header, *rows]]
    (out / "compare.txt").write_text(_echo_header(cfg) + "\n".join(lines) + "\n", encoding="utf-8")
    return [header, *rows]


# -- commands ---------------------------------------------------------------------


def cmd_run(cfg: RunConfig) -> int:
    results, summary = execute(cfg)
    for name, row in summary.items():
        print(f"{name}: mMAPE median {row['median']:.4f} (IQR {row['iqr']:.4f}) over {row['runs']} seeds")
    print(f"outputs written to {cfg.out}")
    return 0 if all(r.trace.ok for r in results) else 1


def cmd_compare(cfg: RunConfig) -> int:
    results, summary = execute(cfg)
    header, *rows = write_compare(cfg, summary)
    for row in rows:
        print(f"{row[1]}: mMAPE median {row[2]} (IQR {row[3]})")
    return 0 if all(r.trace.ok for r in results) else 1


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.datasets:
        raise ConfigError("synth generates data; it does not take --dataset")
    spec = synth_spec_of(cfg)
    seed = cfg.seeds[0]
    batches, notes = synth_stream(spec, seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = json.dumps({"synth": spec.to_dict(), "seed": seed}, sort_keys=True)
    samples = [s for b in batches for s in b.samples]
    write_dataset(out / "dataset.csv", spec.option_names(), samples, comment=f"config: {echo}")
    with (out / "annotations.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config: {echo}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestep", "scope", "region"])
        for a in notes:
            region = "" if a.region is None else ";".join(f"x{k}={v:g}" for k, v in a.region)
            w.writerow([a.timestep, a.scope, region])
    print(f"{len(batches)} batches of {spec.batch_size} samples and {len(notes)} annotations written to {out}")
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhda", description="Online configuration-performance learning "
                                     "with dually hierarchical drift adaptation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "prequential run of one or more learners"),
                            ("compare", "median/IQR table over learners and seeds"),
                            ("synth", "write a synthetic drift stream and its annotations")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML or JSON file whose keys mirror these flags")
        p.add_argument("--dataset", nargs="+", help="environment CSV files, mixed into one stream")
        p.add_argument("--batch-size", dest="batch_size", type=int, help="samples per timestep (default 32)")
        p.add_argument("--cap-per-env", dest="cap_per_env", type=int, help="samples drawn per environment (4000)")
        p.add_argument("--mixing", choices=[m.value for m in Mixing], help="environment mixing (random)")
        p.add_argument("--scenario", choices=SCENARIOS, help="synthetic scenario when no dataset is given (mixed)")
        p.add_argument("--n-batches", dest="n_batches", type=int, help="synthetic stream length (200)")
        p.add_argument("--noise", type=float, help="relative noise of synthetic performance (0.02)")
        p.add_argument("--depth", type=int, help="division depth d (1)")
        p.add_argument("--delta", type=float, help="significance level of the global check (0.05)")
        p.add_argument("--alpha", type=int, help="retrain every alpha data-bearing timesteps (3)")
        p.add_argument("--local-model", dest="local_model", help="rf, knn or lr (rf)")
        p.add_argument("--seeds", help=f"seed count or comma list (default {DEFAULT_SEEDS})")
        p.add_argument("--ablate", action="append", choices=sorted(ABLATION_FLAGS),
                       help="switch off a DHDA level; repeatable")
        p.add_argument("--learners", help=f"comma list from {', '.join(LEARNER_NAMES)}")
        p.add_argument("--jobs", type=int, help="parallel worker processes (1)")
        p.add_argument("--sensitivity", help="parameter sweep, e.g. alpha=1..7")
        p.add_argument("--out", help="output directory (dhda_out)")
        p.set_defaults(func=COMMANDS[name])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(cfg)
    except (ConfigError, StreamError, OSError) as exc:
        print(f"dhda {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
