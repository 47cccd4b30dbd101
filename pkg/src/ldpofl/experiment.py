"""Config loading, single runs and multi-seed mechanism comparisons.

Every emitted number is a function of the config and seeds only.  Wall-clock
timings are written only when explicitly requested, so reruns produce
byte-identical files by default.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from .federation import NOISELESS, SimConfig, run_simulation
from .streams import DataStream, make_stream


class ConfigError(ValueError):
    pass


EXPERIMENT_FIELDS = ("seeds", "comparisons", "output_dir", "eta_overrides")


@dataclasses.dataclass
class ExperimentConfig:
    sim: SimConfig
    seeds: list = dataclasses.field(default_factory=lambda: [0])
    comparisons: list = dataclasses.field(default_factory=list)
    output_dir: str = "results"
    eta_overrides: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        errors = []
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            errors.append("seeds: must be a nonempty list of nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            errors.append("seeds: must not repeat")
        if not isinstance(self.comparisons, list):
            errors.append("comparisons: must be a list of mechanism names")
        for k, v in self.eta_overrides.items():
            if not isinstance(v, (int, float)) or not v > 0:
                errors.append(f"eta_overrides.{k}: must be a positive number")
        if errors:
            raise ConfigError("invalid ExperimentConfig: " + "; ".join(errors))

    @property
    def mechanisms(self) -> list:
        return list(self.comparisons) or [self.sim.mechanism]


def read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return data


def sim_config(data: dict) -> SimConfig:
    try:
        return SimConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def experiment_config(data: dict) -> ExperimentConfig:
    data = dict(data)
    extra = {k: data.pop(k) for k in EXPERIMENT_FIELDS if k in data}
    return ExperimentConfig(sim=sim_config(data), **extra)


def _derive(*parts) -> int:
    entropy = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint32)[0])


def data_seed(cfg: SimConfig, seed: int) -> int:
    return _derive(int(cfg.data_spec.get("seed", 0)), seed, "data")


def noise_seed(seed: int, mechanism: str) -> int:
    return _derive(seed, mechanism, "noise")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def run_single(cfg: SimConfig, stream: Optional[DataStream] = None,
               optima=None, with_static: bool = False):
    """Run one simulation and its regret trace."""
    if stream is None:
        stream = make_stream(cfg.data_spec, cfg.n, cfg.R, cfg.tau, cfg.dim)
    result = run_simulation(cfg, stream)
    if optima is None:
        optima = metrics.round_optima(stream)
    try:
        trace = metrics.full_trace(result.models, stream, optima, with_static=with_static)
    except ValueError:
        trace = metrics.full_trace(result.models, stream, optima, with_static=False)
    return result, trace


def run_summary(cfg: SimConfig, result, trace, wall_time: Optional[float]) -> dict:
    return {
        "rounds": trace.rounds,
        "steps": cfg.steps,
        "mechanism": cfg.mechanism,
        "noise_std": result.noise_std,
        "rho": None if result.budget is None else result.budget.rho,
        "final_dyn_regret": trace.final_dynamic,
        "final_norm_regret": trace.final_normalized,
        "final_static_regret": (None if trace.cum_static_regret is None
                                else float(trace.cum_static_regret[-1])),
        "diagnostics": result.diagnostics,
        "wall_time_s": wall_time,
        "status": "ok",
    }


def simulate(cfg: SimConfig, out_dir, timing: bool = False, with_static: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result, trace = run_single(cfg, with_static=with_static)
    wall = time.perf_counter() - start if timing else None
    (out / "trace.csv").write_text(trace.to_csv())
    summary = run_summary(cfg, result, trace, wall)
    (out / "summary.json").write_text(_dumps(summary))
    return summary


def cell_config(exp: ExperimentConfig, seed: int, mechanism: str) -> SimConfig:
    sim = dataclasses.replace(exp.sim)
    sim.mechanism = mechanism
    sim.master_seed = noise_seed(seed, mechanism)
    sim.data_spec = dict(exp.sim.data_spec, seed=data_seed(exp.sim, seed))
    if mechanism in exp.eta_overrides:
        sim.eta = float(exp.eta_overrides[mechanism])
    if mechanism == NOISELESS:
        sim.budget = None
    return sim


def run_seed(exp: ExperimentConfig, seed: int) -> list[dict]:
    """All mechanisms for one seed, sharing one stream and one set of round optima."""
    sim = cell_config(exp, seed, exp.mechanisms[0])
    stream = make_stream(sim.data_spec, sim.n, sim.R, sim.tau, sim.dim)
    optima = metrics.round_optima(stream)
    cells = []
    for mech in exp.mechanisms:
        cfg = cell_config(exp, seed, mech)
        start = time.perf_counter()
        result, trace = run_single(cfg, stream, optima)
        cells.append({
            "seed": seed,
            "mechanism": mech,
            "eta": cfg.eta,
            "avg_loss": trace.avg_round_loss,
            "cum_dyn_regret": trace.cum_dyn_regret,
            "final_norm_regret": trace.final_normalized,
            "runtime_s": time.perf_counter() - start,
        })
    return cells


def _write_long(path: Path, cells: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "mechanism", "round", "avg_loss", "cum_dyn_regret"])
        for c in cells:
            for r, (loss, reg) in enumerate(zip(c["avg_loss"], c["cum_dyn_regret"])):
                w.writerow([c["seed"], c["mechanism"], r, repr(float(loss)), repr(float(reg))])


def summarize(exp: ExperimentConfig, cells: list[dict], timing: bool) -> list[dict]:
    rows = []
    for mech in exp.mechanisms:
        mine = [c for c in cells if c["mechanism"] == mech]
        if not mine:
            continue
        mean, std = metrics.mean_std([c["final_norm_regret"] for c in mine])
        rows.append({
            "mechanism": mech,
            "seeds": len(mine),
            "mean_final_norm_regret": mean,
            "std_final_norm_regret": std,
            "runtime_s": sum(c["runtime_s"] for c in mine) if timing else None,
        })
    return rows


def compare(exp: ExperimentConfig, out_dir=None, workers: int = 1,
            timing: bool = False) -> list[dict]:
    """Run every (seed, mechanism) cell and write long-format results.

    Outputs in ``out_dir``: ``long.csv``, ``summary.json``, ``summary.csv``
    and ``manifest.json``.  The manifest is rewritten after each seed so an
    interrupted run still records which cells finished.
    """
    out = Path(out_dir or exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"complete": False, "cells": []}
    cells: list[dict] = []

    def record(seed_cells):
        cells.extend(seed_cells)
        manifest["cells"].extend([c["seed"], c["mechanism"]] for c in seed_cells)
        (out / "manifest.json").write_text(_dumps(manifest))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_seed, exp, s) for s in exp.seeds]
            for fut in futures:
                record(fut.result())
    else:
        for s in exp.seeds:
            record(run_seed(exp, s))

    _write_long(out / "long.csv", cells)
    rows = summarize(exp, cells, timing)
    (out / "summary.json").write_text(_dumps(rows))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    manifest["complete"] = True
    (out / "manifest.json").write_text(_dumps(manifest))
    return rows
