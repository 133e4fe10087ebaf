"""Command-line harness: ``simulate``, ``run``, ``evaluate`` and ``sweep``.

Every output file carries a ``schema_version``.  Exit codes: 0 on success,
2 on a configuration error, 3 on a data error (unreadable or malformed
input files).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import estimator, gibbs, metrics, mh
from .assoc import InvalidThetaError, greedy_init, make_rng, theta_hat
from .metrics import GospaConfig, correct_association_count, trajectory_gospa
from .sim import LabelledMeasurementBatch, Scenario, paper_scenario, simulate
from .tpmbm import Problem, TPMBMConfig, WeightCache

SCHEMA_VERSION = 1
OUT_ENV = "BATCH_TPMBM_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

# default cache bounds keep a full-scenario chain well under 2 GB
CACHE_CAPACITY = 300_000
PREFIX_CAPACITY = 300_000


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def default_out() -> str:
    return os.environ.get(OUT_ENV, "out")


@dataclass
class RunConfig:
    """One sampler configuration, possibly over several Monte Carlo runs.

    ``scenario`` is ``"paper"`` or a scenario JSON path; ``batch`` optionally
    fixes the measurements (otherwise run ``n`` simulates its own batch).
    ``moves`` is a preset name or four probabilities.
    """

    scenario: str = "paper"
    batch: str | None = None
    method: str = "gibbs"
    iterations: int = 1000
    moves: str | list = "high"
    gate_prob: float = 0.999
    poisson_threshold: float = 1e-4
    birth_threshold: float = 1e-2
    end_threshold: float = 1e-4
    existence_threshold: float = 1e-2
    init: str = "greedy"
    seed: int = 0
    monte_carlo_runs: int = 1
    first_run: int = 0
    workers: int = 1
    trace_every: int = 0
    random_scan: bool = False
    out: str = field(default_factory=default_out)

    def validate(self):
        if self.method not in ("gibbs", "mh"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.init not in ("theta-hat", "greedy"):
            raise ConfigError(f"unknown init mode {self.init!r}")
        for name in ("gate_prob", "poisson_threshold", "birth_threshold", "end_threshold", "existence_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.monte_carlo_runs < 1 or self.workers < 1 or self.first_run < 0 or self.trace_every < 0:
            raise ConfigError("runs and workers must be >= 1, first_run and trace_every >= 0")
        # moves are checked for Gibbs too, so a bad config never passes silently
        self.move_config()
        return self

    def move_config(self) -> mh.MoveConfig:
        if isinstance(self.moves, str):
            if self.moves not in mh.PRESETS:
                raise ConfigError(f"unknown move preset {self.moves!r}")
            return mh.PRESETS[self.moves]
        try:
            return mh.MoveConfig(*[float(x) for x in self.moves])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad move probabilities: {e}") from None

    def tpmbm_config(self) -> TPMBMConfig:
        return TPMBMConfig(self.gate_prob, self.poisson_threshold, self.birth_threshold, self.end_threshold,
                           self.existence_threshold)

    @property
    def label(self) -> str:
        if self.method == "gibbs":
            return "gibbs"
        return f"mh-{self.moves}" if isinstance(self.moves, str) else "mh-custom"

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config fields: {sorted(bad)}")
        return cls(**d)


# --------------------------------------------------------------------------
# Loading


def load_json(path, what: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise DataError(f"cannot read {what} {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{what} {path} is not valid JSON: {e}") from None


def load_scenario(source: str) -> Scenario:
    if source == "paper":
        return paper_scenario()
    try:
        return Scenario.from_dict(load_json(source, "scenario"))
    except (TypeError, ValueError, KeyError) as e:
        if isinstance(e, DataError):
            raise
        raise DataError(f"malformed scenario {source}: {e}") from None


def load_batch(path) -> LabelledMeasurementBatch:
    try:
        return LabelledMeasurementBatch.from_dict(load_json(path, "batch"))
    except (TypeError, ValueError, KeyError) as e:
        if isinstance(e, DataError):
            raise
        raise DataError(f"malformed batch {path}: {e}") from None


def load_trajectories(path):
    """Trajectories from a batch JSON (its truth), an estimate JSON or an estimate CSV."""
    path = str(path)
    try:
        if path.endswith(".csv"):
            return estimator.read_csv(path), None
        d = load_json(path, "trajectory file")
        if "scans" in d:
            b = LabelledMeasurementBatch.from_dict(d)
            return b.truth, b
        return [estimator.Trajectory(t["birth"], np.array([[s["px"], s["vx"], s["py"], s["vy"]]
                                                           for s in t["states"]]).reshape(-1, 4),
                                     id=t["id"], history=tuple(tuple(p) for p in t.get("history", [])))
                for t in d["trajectories"]], None
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None
    except (TypeError, ValueError, KeyError) as e:
        if isinstance(e, DataError):
            raise
        raise DataError(f"malformed trajectory file {path}: {e}") from None


# --------------------------------------------------------------------------
# Running


def chain_seed(root: int, run: int) -> int:
    """Sampler seed of Monte Carlo run ``run``."""
    return int(np.random.SeedSequence(root, spawn_key=(run, 1)).generate_state(1)[0])


def build_problem(scenario: Scenario, batch: LabelledMeasurementBatch, cfg: TPMBMConfig) -> Problem:
    truth = batch.truth if batch.truth else None
    if truth is None and scenario.anchor_time is not None:
        raise DataError("anchored scenario needs a batch with ground truth for its birth model")
    return Problem(batch.scans, scenario.motion(), scenario.measurement_model(), scenario.birth_model(truth), cfg)


def run_single(cfg: RunConfig, run: int, out_dir: str | None = None, scenario: Scenario | None = None,
               batch: LabelledMeasurementBatch | None = None) -> dict:
    """One Monte Carlo run; returns the results row plus the estimates and trace.

    Files (estimates, trace, per-time errors, final checkpoint) are written
    when ``out_dir`` is given.
    """
    scenario = load_scenario(cfg.scenario) if scenario is None else scenario
    if batch is None:
        batch = load_batch(cfg.batch) if cfg.batch else simulate(scenario, run)
    problem = build_problem(scenario, batch, cfg.tpmbm_config())
    cache = WeightCache(problem, CACHE_CAPACITY, PREFIX_CAPACITY)
    theta0 = greedy_init(problem, cache) if cfg.init == "greedy" else theta_hat(problem.m)
    truth = batch.truth

    def trace_fn(state, it):
        est = estimator.extract(state.to_theta(), cache, smooth=False)
        row = {"iteration": it, "log_pi": state.log_pi, "correct": None}
        if truth:
            g = trajectory_gospa(truth, est)
            row["correct"] = correct_association_count(truth, est, g, batch.origins)
        return row

    rng = make_rng(chain_seed(cfg.seed, run))
    t0 = time.perf_counter()
    if cfg.method == "gibbs":
        res = gibbs.run(theta0, cfg.iterations, cache, rng=rng, random_scan=cfg.random_scan,
                        trace_every=cfg.trace_every, trace_fn=trace_fn)
    else:
        res = mh.run(theta0, cfg.iterations, cache, cfg.move_config(), rng=rng,
                     trace_every=cfg.trace_every, trace_fn=trace_fn)
    # the trace is diagnostic output and is excluded from the sampler runtime
    runtime = res.runtime_s
    est = estimator.extract(estimator.map_hypothesis(res.store), cache)
    row = {"run_id": run, "method": cfg.label, "iterations": cfg.iterations, "runtime_s": runtime}
    g = None
    if truth:
        g = trajectory_gospa(truth, est)
        row.update(g.row())
        row["correct"] = correct_association_count(truth, est, g, batch.origins)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        estimator.write_csv(est, d / f"estimates_run{run}.csv")
        estimator.write_json(est, d / f"estimates_run{run}.json")
        gibbs.write_checkpoint(d / f"checkpoint_run{run}.txt", cfg.iterations, res.state, rng, res.store)
        if g is not None:
            metrics.write_per_time(g, d / f"per_time_run{run}.csv", cfg.label)
        if res.trace:
            write_trace(res.trace, d / f"trace_run{run}.csv", cfg.label)
    return {"row": row, "estimates": est, "trace": res.trace, "moves": res.moves,
            "log_pi": res.store.best_log_pi, "distinct": len(res.store), "wall_s": time.perf_counter() - t0}


def write_trace(trace, path, series: str = ""):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["schema_version", "series", "iteration", "correct", "log_pi"])
        for t in trace:
            w.writerow([SCHEMA_VERSION, series, t["iteration"], t["correct"], t["log_pi"]])


def _worker(args):
    cfg, run, out_dir = args
    return run_single(cfg, run, out_dir)


def run_config(cfg: RunConfig, out_dir: str | None = None) -> list[dict]:
    """All Monte Carlo runs of ``cfg``; results rows are written to ``results.csv``."""
    cfg.validate()
    runs = list(range(cfg.first_run, cfg.first_run + cfg.monte_carlo_runs))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "config.json", "w") as f:
            json.dump(cfg.to_dict(), f, indent=1)
    jobs = [(cfg, r, out_dir) for r in runs]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    if out_dir is not None:
        metrics.write_results([r["row"] for r in results], Path(out_dir) / "results.csv")
        summary = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(),
                   "runs": [{"run_id": r["row"]["run_id"], "best_log_pi": r["log_pi"], "distinct": r["distinct"],
                             "moves": r["moves"], "correct": r["row"].get("correct")} for r in results]}
        with open(Path(out_dir) / "summary.json", "w") as f:
            json.dump(summary, f, indent=1)
    return results


def mean_row(rows) -> dict:
    keys = ["total", "localization", "missed", "false", "switch", "runtime_s"]
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if r.get(k) is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


SWEEP_FIELDS = ["schema_version", "name", "method", "update", "merge", "split", "switch", "runs", "total", "localization",
                "missed", "false", "switch_cost", "runtime_s"]


def sweep(configs: dict, out_dir: str | None = None) -> list[dict]:
    """Run every named config and tabulate mean metrics and runtimes."""
    table = []
    for name, cfg in configs.items():
        sub = None if out_dir is None else str(Path(out_dir) / name)
        res = run_config(cfg, sub)
        m = mean_row([r["row"] for r in res])
        p = cfg.move_config().probabilities if cfg.method == "mh" else (None,) * 4
        table.append({"schema_version": SCHEMA_VERSION, "name": name, "method": cfg.label, "update": p[0], "merge": p[1],
                      "split": p[2], "switch": p[3], "runs": len(res), "total": m["total"],
                      "localization": m["localization"], "missed": m["missed"], "false": m["false"],
                      "switch_cost": m["switch"], "runtime_s": m["runtime_s"]})
    if out_dir is not None:
        with open(Path(out_dir) / "sweep.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=SWEEP_FIELDS)
            w.writeheader()
            w.writerows(table)
    return table


def evaluate(truth, est, cfg: GospaConfig, origins=None) -> tuple[dict, metrics.GospaResult]:
    g = trajectory_gospa(truth, est, cfg)
    row = g.row()
    if origins is not None and all(e.history for e in est):
        row["correct"] = correct_association_count(truth, est, g, origins)
    return row, g


# --------------------------------------------------------------------------
# Commands


def cmd_simulate(a) -> int:
    sc = load_scenario(a.scenario)
    if a.seed is not None:
        sc.seed = a.seed
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    sc.save(out / "scenario.json")
    runs = range(a.runs) if a.runs else [None]
    for r in runs:
        b = simulate(sc, r)
        b.save(out / ("batch.json" if r is None else f"batch_run{r}.json"))
    print(f"wrote scenario and {len(list(runs))} batch file(s) to {out}")
    return EXIT_OK


def _config_from_args(a) -> RunConfig:
    base = RunConfig.from_dict(load_json(a.config, "config")) if a.config else RunConfig()
    for name in ("scenario", "batch", "method", "iterations", "gate_prob", "poisson_threshold", "birth_threshold",
                 "end_threshold", "existence_threshold", "init", "seed", "monte_carlo_runs", "first_run",
                 "workers", "trace_every", "out"):
        v = getattr(a, name, None)
        if v is not None:
            setattr(base, name, v)
    if a.moves is not None:
        parts = a.moves.split(",")
        base.moves = parts[0] if len(parts) == 1 else parts
    if a.random_scan:
        base.random_scan = True
    return base.validate()


def cmd_run(a) -> int:
    cfg = _config_from_args(a)
    res = run_config(cfg, cfg.out)
    for r in res:
        row = r["row"]
        tot = f"{row['total']:.1f}" if "total" in row else "n/a"
        print(f"run {row['run_id']}: {cfg.label} gospa={tot} runtime={row['runtime_s']:.1f}s")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    truth, batch = load_trajectories(a.truth)
    est, _ = load_trajectories(a.estimates)
    try:
        cfg = GospaConfig(a.p, a.c, a.gamma)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    origins = batch.origins if batch is not None else None
    row, g = evaluate(truth, est, cfg, origins)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "evaluation.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["schema_version", "total", "localization", "missed", "false", "switch",
                                          "correct"])
        w.writeheader()
        w.writerow({"schema_version": SCHEMA_VERSION, **row})
    metrics.write_per_time(g, out / "per_time.csv", "estimate")
    print(" ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_sweep(a) -> int:
    base = _config_from_args(a)
    configs = {}
    if a.configs:
        for path in a.configs:
            c = RunConfig.from_dict(load_json(path, "config"))
            c.validate()
            configs[Path(path).stem] = c
    else:
        for name in a.presets.split(","):
            if name not in mh.PRESETS:
                raise ConfigError(f"unknown move preset {name!r}")
            d = asdict(base)
            d.update(method="mh", moves=name)
            configs[name] = RunConfig(**d).validate()
    table = sweep(configs, base.out)
    for r in table:
        print(f"{r['name']}: gospa={r['total'] if r['total'] is None else round(r['total'], 1)} "
              f"runtime={r['runtime_s']:.1f}s")
    return EXIT_OK


def _add_run_flags(p):
    p.add_argument("--config", help="RunConfig JSON; flags override its fields")
    p.add_argument("--scenario", help='"paper" or a scenario JSON')
    p.add_argument("--batch", help="measurement batch JSON (default: simulate per run)")
    p.add_argument("--method", choices=["gibbs", "mh"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--moves", help="preset name or update,merge,split,switch probabilities")
    p.add_argument("--gate-prob", dest="gate_prob", type=float)
    p.add_argument("--poisson-threshold", dest="poisson_threshold", type=float)
    p.add_argument("--birth-threshold", dest="birth_threshold", type=float)
    p.add_argument("--end-threshold", dest="end_threshold", type=float)
    p.add_argument("--existence-threshold", dest="existence_threshold", type=float)
    p.add_argument("--init", choices=["theta-hat", "greedy"])
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", dest="monte_carlo_runs", type=int)
    p.add_argument("--first-run", dest="first_run", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--trace-every", dest="trace_every", type=int)
    p.add_argument("--random-scan", dest="random_scan", action="store_true")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="batch-tpmbm", description="Batch TPMBM multi-scan data association")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a scenario and its measurement batches")
    p.add_argument("--scenario", default="paper")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--runs", type=int, default=0, help="number of Monte Carlo batches (0: one batch.json)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run a sampler and write results, estimates and traces")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="trajectory GOSPA between two trajectory files")
    p.add_argument("--truth", required=True, help="batch JSON with truth, or trajectory JSON/CSV")
    p.add_argument("--estimates", required=True)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--c", type=float, default=10.0)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="tabulate several MH move presets or config files")
    _add_run_flags(p)
    p.add_argument("--presets", default="high,medium,low")
    p.add_argument("--configs", nargs="*", help="RunConfig JSON files (instead of presets)")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.command in ("simulate", "evaluate") and a.out is None:
        a.out = default_out()
    try:
        return a.func(a)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidThetaError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
