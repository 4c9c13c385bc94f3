"""Experiment driver: config parsing, multi-seed sweeps, traces and summaries.

A config is a JSON document naming an instance, a method, a policy, a list
of horizons and a list of seeds.  Every (T, seed) pair is an independent
cell producing one CSV trace and one cell record; the summary is a
deterministic reduction over the cell records.  Wall-clock times go to a
separate ``timing.json`` so all other outputs are byte-reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .algorithms import METHODS, POLICIES, make_policy, run_solver
from .bounds import theorem_bound
from .errors import ConfigError, FCVIError, FitError
from .instances import SADDLE_BUILTINS, builtin_document
from .metrics import (
    TRACE_FIELDS,
    ConvergenceTrace,
    default_probes,
    feasible_grid,
    fit_power_law,
    fit_rate,
    lagrangian_gap,
)
from .oracles import StochasticOracleSpec
from .problem import Box, ProblemInstance, instance_from_dict
from .saddle import saddle_from_dict, saddle_gap, saddle_to_vi

WORKERS_ENV = "FCVI_WORKERS"
CHANNELS = ("infeas", "gap_restricted")
STOCHASTIC_METHODS = ("stopconex", "fstopconex")
_KNOWN_KEYS = {
    "instance", "saddle", "method", "policy", "oracle", "horizons", "seeds",
    "x0", "probes", "output_dir", "label",
}


class ConfigDiagnostic(ConfigError):
    """Config error tied to a location in the config file."""

    def __init__(self, message: str, path: str = "<config>", line: int = 1, column: int = 1):
        super().__init__(message)
        self.path, self.line, self.column = path, line, column

    def __str__(self) -> str:
        return f"{self.path}:{self.line}:{self.column}: {self.args[0]}"


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    instance_doc: dict
    saddle: bool
    method: str
    policy: dict
    oracle: dict
    horizons: tuple
    seeds: tuple
    x0: object = None
    probes: dict = field(default_factory=dict)
    output_dir: Optional[str] = None
    label: str = ""

    def build_problem(self):
        """(saddle problem or None, reduced FCVI instance)."""
        if self.saddle:
            sp = saddle_from_dict(self.instance_doc)
            return sp, saddle_to_vi(sp)
        return None, instance_from_dict(self.instance_doc)

    def oracle_spec(self) -> Optional[StochasticOracleSpec]:
        if self.method not in STOCHASTIC_METHODS:
            return None
        o = dict(self.oracle)
        sg = o.get("sigma_Gamma", ())
        return StochasticOracleSpec(
            sigma_F=float(o.get("sigma_F", 0.0)),
            sigma_g=float(o.get("sigma_g", 0.0)),
            sigma_Gamma=tuple(sg) if isinstance(sg, (list, tuple)) else (float(sg),),
            noise_shape=o.get("noise_shape", "gaussian"),
        )

    def schedule(self, instance: ProblemInstance, T: int):
        params = {k: v for k, v in self.policy.items() if k != "name"}
        return make_policy(self.policy["name"], instance, T=T, oracle=self.oracle_spec(), **params)


def _resolve_instance(ref, base: Path, saddle: bool) -> dict:
    if isinstance(ref, str):
        ref = {"path": ref}
    if not isinstance(ref, dict):
        raise ConfigError("instance must be a path, {\"builtin\": name}, {\"path\": file} or an inline document")
    if "builtin" in ref:
        name = ref["builtin"]
        if (name in SADDLE_BUILTINS) != saddle:
            want = "true" if name in SADDLE_BUILTINS else "false"
            raise ConfigError(f"builtin {name!r} needs \"saddle\": {want}")
        return builtin_document(name)
    if "path" in ref:
        p = Path(ref["path"])
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise ConfigError(f"instance file {str(p)!r} does not exist")
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"instance file {p}: {exc.msg} at line {exc.lineno} column {exc.colno}") from None
    return ref


def parse_config(text: str, path: str = "<config>", base: Optional[Path] = None) -> ExperimentConfig:
    """Parse and validate a config; every failure is a ConfigDiagnostic with a line number."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigDiagnostic(f"malformed JSON: {exc.msg}", path, exc.lineno, exc.colno) from None
    if not isinstance(raw, dict):
        raise ConfigDiagnostic("config must be a JSON object", path)
    base = base or Path(".")
    key = "instance"
    try:
        unknown = sorted(set(raw) - _KNOWN_KEYS)
        if unknown:
            key = unknown[0]
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        for key in ("instance", "method", "policy", "horizons", "seeds"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        key = "saddle"
        saddle = bool(raw.get("saddle", False))
        key = "method"
        method = raw["method"]
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {list(METHODS)}")
        key = "policy"
        policy = raw["policy"]
        if isinstance(policy, str):
            policy = {"name": policy}
        if not isinstance(policy, dict) or policy.get("name") not in POLICIES:
            raise ConfigError(f"policy needs a name from {list(POLICIES)}")
        if (method == "adlagex") != (policy["name"] == "adaptive"):
            raise ConfigError("the adaptive policy goes with adlagex and only with it")
        key = "horizons"
        horizons = raw["horizons"]
        if (
            not isinstance(horizons, list)
            or not horizons
            or not all(isinstance(T, int) and not isinstance(T, bool) and T >= 1 for T in horizons)
        ):
            raise ConfigError("horizons must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(horizons, horizons[1:])):
            raise ConfigError("horizons must be strictly increasing")
        key = "seeds"
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**63 for s in seeds
        ):
            raise ConfigError("seeds must be a non-empty list of nonnegative integers")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        key = "oracle"
        oracle = raw.get("oracle", {})
        if not isinstance(oracle, dict):
            raise ConfigError("oracle must be an object")
        key = "probes"
        probes = raw.get("probes", {})
        if not isinstance(probes, dict):
            raise ConfigError("probes must be an object")
        key = "instance"
        doc = _resolve_instance(raw["instance"], base, saddle)
        cfg = ExperimentConfig(
            raw=raw,
            instance_doc=doc,
            saddle=saddle,
            method=method,
            policy=policy,
            oracle=oracle,
            horizons=tuple(horizons),
            seeds=tuple(seeds),
            x0=raw.get("x0"),
            probes=probes,
            output_dir=raw.get("output_dir"),
            label=raw.get("label", ""),
        )
        # building everything once surfaces semantic errors before any run
        _, inst = cfg.build_problem()
        key = "oracle"
        cfg.oracle_spec()
        key = "policy"
        for T in horizons:
            cfg.schedule(inst, T)
        key = "x0"
        resolve_start(cfg, inst)
        key = "probes"
        resolve_probes(cfg, inst)
    except ConfigDiagnostic:
        raise
    except (FCVIError, ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, FCVIError) and exc.args else f"{type(exc).__name__}: {exc}"
        raise ConfigDiagnostic(str(msg), path, _line_of(text, key)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigDiagnostic(f"config file {str(p)!r} does not exist", str(p))
    return parse_config(p.read_text(), str(p), p.parent)


def resolve_start(cfg: ExperimentConfig, instance: ProblemInstance):
    x0 = cfg.x0
    if x0 is None or x0 == "center":
        return None
    if x0 == "farthest_vertex":
        if not isinstance(instance.set, Box) or instance.known_solution is None:
            raise ConfigError("x0 = farthest_vertex needs a box set and a known solution")
        xs = instance.known_solution.x
        return np.where(np.abs(instance.set.lower - xs) >= np.abs(instance.set.upper - xs),
                        instance.set.lower, instance.set.upper)
    arr = np.asarray(x0, dtype=np.float64)
    if arr.shape != (instance.n,):
        raise ConfigError(f"x0 must have {instance.n} entries")
    return arr


def resolve_probes(cfg: ExperimentConfig, instance: ProblemInstance) -> np.ndarray:
    p = cfg.probes
    if p.get("grid_step") is not None:
        pts = feasible_grid(instance, float(p["grid_step"]))
        if pts.shape[0] == 0:
            raise ConfigError("the feasible probe grid is empty")
        if instance.known_solution is not None:
            pts = np.vstack([instance.known_solution.x, pts])
        return pts
    return default_probes(instance, int(p.get("count", 64)), int(p.get("seed", 0)))


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------


def cell_name(T: int, seed: int) -> str:
    return f"T{T}_seed{seed}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _clean(x):
    """Floats as plain JSON numbers (None for non-finite)."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def run_cell(cfg: ExperimentConfig, T: int, seed: int, out_dir: Optional[Path] = None) -> dict:
    """Run one (T, seed) cell; failures are captured in the returned record."""
    name = cell_name(T, seed)
    record = {"T": int(T), "seed": int(seed), "name": name, "status": "ok", "error": None}
    t0 = time.perf_counter()
    try:
        sp, inst = cfg.build_problem()
        schedule = cfg.schedule(inst, T)
        probes = resolve_probes(cfg, inst)
        res = run_solver(
            inst, cfg.method, schedule, T, seed=seed, oracle=cfg.oracle_spec(),
            x0=resolve_start(cfg, inst), probes=probes,
        )
        final = res.trace.records[-1]
        record["final"] = {k: _clean(final[k]) for k in TRACE_FIELDS[1:-1]}
        record["x_bar"] = res.x_bar.tolist()
        record["lambda_bar"] = res.lam_bar.tolist()
        record["max_lambda_norm"] = _clean(res.lambda_norms.max())
        if inst.known_solution is not None:
            record["final"]["lagrangian_gap"] = _clean(lagrangian_gap(inst, res.x_bar, res.lam_bar))
        if sp is not None:
            record["final"]["saddle_gap"] = _clean(saddle_gap(sp, res.x_bar, probes, validate=False))
        record["schedule"] = schedule.describe()
        bound = theorem_bound(inst, schedule) if cfg.method == "opconex" else None
        record["bound"] = _clean(bound)
        if res.counter is not None:
            record["oracle_calls"] = {
                "operator": res.counter.operator_draws,
                "constraints": res.counter.constraint_draws,
            }
        try:
            record["tail_fit"] = fit_rate(res.trace, "infeas").to_dict()
        except FitError as exc:
            record["tail_fit"] = {"error": str(exc)}
        trace_csv = res.trace.to_csv(include_wall=False)
        record["trace"] = f"traces/{name}.csv"
        if out_dir is not None:
            _atomic_write(out_dir / record["trace"], trace_csv)
    except Exception as exc:  # per-cell isolation: record and move on
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
        if hasattr(exc, "iteration"):
            record["failed_at_iteration"] = exc.iteration
    record_wall = time.perf_counter() - t0
    if out_dir is not None:
        _atomic_write(out_dir / "cells" / f"{name}.json", _dumps(record))
    return {"record": record, "wall_s": record_wall}


def _cell_job(args):
    cfg, T, seed, out_dir = args
    return run_cell(cfg, T, seed, out_dir)


def _channels(cfg: ExperimentConfig, has_known: bool) -> list:
    ch = list(CHANNELS)
    if has_known:
        ch.append("lagrangian_gap")
    if cfg.saddle:
        ch.append("saddle_gap")
    return ch


def summarize(cfg: ExperimentConfig, records: list) -> dict:
    """Deterministic reduction over cell records (sorted by T then seed)."""
    records = sorted(records, key=lambda r: (r["T"], r["seed"]))
    _, inst = cfg.build_problem()
    channels = _channels(cfg, inst.known_solution is not None)
    horizons = []
    for T in cfg.horizons:
        ok = [r for r in records if r["T"] == T and r["status"] == "ok"]
        row = {"T": T, "n_ok": len(ok), "n_failed": sum(1 for r in records if r["T"] == T) - len(ok)}
        for ch in channels:
            vals = np.array([r["final"][ch] for r in ok if r["final"].get(ch) is not None], dtype=np.float64)
            if vals.size:
                std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                row[ch] = {
                    "mean": float(vals.mean()),
                    "std": std,
                    "stderr": std / math.sqrt(vals.size),
                    "max": float(vals.max()),
                    "n": int(vals.size),
                }
            else:
                row[ch] = None
        bounds = {r["bound"] for r in ok if r.get("bound") is not None}
        row["bound"] = bounds.pop() if len(bounds) == 1 else None
        if row["bound"] is not None and row["n_ok"]:
            worst = max(row[ch]["max"] for ch in CHANNELS if row[ch] is not None)
            row["within_bound"] = bool(worst <= row["bound"])
        else:
            row["within_bound"] = None
        horizons.append(row)
    fits = {}
    for ch in channels:
        ts = [h["T"] for h in horizons if h[ch] is not None]
        es = [h[ch]["mean"] for h in horizons if h[ch] is not None]
        try:
            fits[ch] = fit_power_law(ts, es, ch, min_points=2).to_dict()
        except FitError as exc:
            fits[ch] = {"error": str(exc), "channel": ch}
    failed = [r["name"] for r in records if r["status"] != "ok"]
    return {
        "config": cfg.raw,
        "resolved": {
            "method": cfg.method,
            "policy": cfg.policy,
            "horizons": list(cfg.horizons),
            "seeds": list(cfg.seeds),
            "saddle": cfg.saddle,
        },
        "instance": {"label": inst.label, "n": inst.n, "m": inst.m, "metadata": inst.metadata()},
        "channels": channels,
        "cells": records,
        "horizons": horizons,
        "fits": fits,
        "failed_cells": failed,
        "status": "ok" if not failed else "partial",
    }


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1) -> dict:
    """Run every cell (in parallel when workers > 1) and write the outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, T, s, out) for T in cfg.horizons for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    summary = summarize(cfg, [r["record"] for r in results])
    _atomic_write(out / "summary.json", _dumps(summary))
    timing = {cell_name(r["record"]["T"], r["record"]["seed"]): r["wall_s"] for r in results}
    _atomic_write(out / "timing.json", _dumps(timing))
    return summary


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return k


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    "label", "method", "policy", "T", "seeds", "infeas_mean", "infeas_stderr",
    "gap_mean", "gap_stderr", "bound", "within_bound", "slope_infeas", "slope_gap",
)


def load_summary(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"summary {str(p)!r} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: malformed JSON at line {exc.lineno} column {exc.colno}") from None
    for key in ("channels", "horizons", "fits", "resolved", "instance"):
        if key not in doc:
            raise ConfigError(f"{p} is not a summary (missing {key!r})")
    return doc


def report_rows(summaries: list) -> list:
    chans = {tuple(s["channels"]) for s in summaries}
    if len(chans) > 1:
        raise ConfigError(
            "summaries report different channels " + " vs ".join(str(list(c)) for c in sorted(chans))
            + "; report them separately"
        )
    rows = []
    for s in summaries:
        slope = {ch: s["fits"].get(ch, {}).get("slope") for ch in CHANNELS}
        for h in s["horizons"]:
            inf, gap = h.get("infeas"), h.get("gap_restricted")
            rows.append({
                "label": s["instance"]["label"],
                "method": s["resolved"]["method"],
                "policy": s["resolved"]["policy"]["name"],
                "T": h["T"],
                "seeds": h["n_ok"],
                "infeas_mean": inf["mean"] if inf else None,
                "infeas_stderr": inf["stderr"] if inf else None,
                "gap_mean": gap["mean"] if gap else None,
                "gap_stderr": gap["stderr"] if gap else None,
                "bound": h.get("bound"),
                "within_bound": h.get("within_bound"),
                "slope_infeas": slope["infeas"],
                "slope_gap": slope["gap_restricted"],
            })
    return rows


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "NO"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def report_text(rows: list) -> str:
    table = [list(REPORT_COLUMNS)] + [[_fmt(r[c]) for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in table) + "\n"


def report_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else r[k]) for k in REPORT_COLUMNS})
    return buf.getvalue()


def plot_data(summary_paths: list) -> str:
    """Tidy long-format CSV: one row per (run, checkpoint, channel)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "method", "policy", "T", "seed", "t", "channel", "value"])
    for sp in summary_paths:
        sp = Path(sp)
        s = load_summary(sp)
        for cell in s["cells"]:
            if cell["status"] != "ok":
                continue
            tr = ConvergenceTrace.from_csv((sp.parent / cell["trace"]).read_text())
            for rec in tr.records:
                for ch in TRACE_FIELDS[1:-1]:
                    w.writerow([
                        s["instance"]["label"], s["resolved"]["method"], s["resolved"]["policy"]["name"],
                        cell["T"], cell["seed"], rec["t"], ch, repr(float(rec[ch])),
                    ])
    return buf.getvalue()
