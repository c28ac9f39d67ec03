"""Command-line entry points: discover-pde, discover-floquet, validate, sweep.

Configuration is a JSON file merged over built-in defaults, then ``--seed``,
``--out``, ``--runs`` and dotted ``--set key.sub=value`` overrides.  Unknown
keys anywhere are rejected.
"""
from __future__ import annotations

import argparse
import contextlib
import copy
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .evolution import SELECTORS, DiscoveredModel, EvolutionConfig, EvolutionError, discover
from .floquet import (
    CLOSED_FORM_A1, Band, FloquetError, FloquetSample, QuadraticPolynomial, ResonanceError, RodSpec,
    VALUE_MODES, analytical_polynomial, band_agreement, band_or_none, compare_with_closed_form,
    generate_dataset,
    omega_grid, oracle_fourier_fit, oracle_polynomial, polynomial_from_terms, read_dataset,
    roots_rmse, roots_table, write_dataset,
)
from .grid import DatasetError, DiffSpec, GridField, SmoothingSpec, load_grid, save_grid
from .pdelab import (
    ModelError, SyntheticSpec, build_workspace, error_report, generate_field,
    solve_discovered_1d, token_family,
)
from .regression import DEFAULT_LAMBDA_GRID
from .tokens import CosFamily, CosToken, DerivativeToken, Term, floquet_workspace

log = logging.getLogger(__name__)

SCHEMA = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_DEGENERATE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class StageError(Exception):
    """Failure tagged with the pipeline stage and the exit code it maps to."""

    def __init__(self, stage: str, message: str, code: int):
        super().__init__(f"[{stage}] {message}")
        self.stage, self.code = stage, code


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (DatasetError, ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        raise StageError(name, str(exc), EXIT_INPUT) from exc
    except (ResonanceError, EvolutionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise StageError(name, str(exc), EXIT_NUMERIC) from exc
    except ModelError as exc:
        raise StageError(name, str(exc), EXIT_NUMERIC) from exc
    except (FloquetError, ValueError, TypeError, KeyError) as exc:
        raise StageError(name, str(exc), EXIT_INPUT) from exc


# --- configuration ------------------------------------------------------------------

_EVOLUTION = {
    "n_terms": 8, "k": 3, "n_pop": 10, "n_epochs": 200, "r_mutation": 0.4,
    "r_crossover": 0.4, "a_proc": 0.2, "a_elite": 0.4, "fitness_epsilon": 1e-9,
    "tournament_size": 2, "gene_swap_prob": 0.5, "lasso_tol": 1e-8,
    "lasso_max_iter": 1000, "prune_threshold": 1e-3, "workers": 1,
}

_SELECTION = {"selector": "parsimony", "tolerance": 0.05}

DEFAULTS: dict[str, dict[str, Any]] = {
    "discover-pde": {
        "seed": 0, "n_runs": 1, "workers": 1, "out": "out",
        "data": {
            "dataset": None,
            "synthetic": {
                "equation": "wave", "coefficient": 1.0, "nx": 100, "nt": 100,
                "dx": 2 * math.pi / 100, "dt": 0.05,
                "modes": [list(m) for m in SyntheticSpec().modes],
                "noise_level": 0.0, "noise_seed": None,
            },
        },
        "smoothing": {"enabled": False, "sigma": 2.0, "radius": 6, "axes": None},
        "diff": {"max_order": 2, "window": 9, "poly_degree": 4},
        "evolution": dict(_EVOLUTION),
        "lambda_grid": [1e-5, 1e-4, 1e-3, 1e-2],
        "selection": dict(_SELECTION),
    },
    "discover-floquet": {
        "seed": 0, "n_runs": 1, "workers": 1, "out": "out",
        "floquet": {
            "dataset": None, "gamma": 1.0, "sigma": 0.2, "n_blocks": 20,
            "termination": "bloch", "npts": 35, "omega_min": 0.0, "omega_max": 2.0,
            "value_mode": "complex",
        },
        "tokens": {"frequencies": list(range(11)), "powers": [0, 1, 2]},
        "evolution": dict(_EVOLUTION, n_epochs=150),
        "lambda_grid": [1e-5, 1e-4, 1e-3],
        "selection": dict(_SELECTION),
        "metrics": {"delta": 1e-3},
    },
    "validate": {
        "out": "out", "report": None, "reference": None, "refine": 1, "safety": 0.9,
    },
}
DEFAULTS["sweep"] = {
    "kind": "floquet", "npts_grid": [20, 35, 50, 70], "lambdas": None,
    "base": copy.deepcopy(DEFAULTS["discover-floquet"]),
}
# the sweep's own seed/runs/out live at the top level
for _k in ("seed", "n_runs", "workers", "out"):
    DEFAULTS["sweep"][_k] = DEFAULTS["sweep"]["base"].pop(_k)

# keys whose values are free-form (lists or objects); no recursion into them
_OPAQUE = {"modes", "axes", "frequencies", "powers", "lambda_grid", "npts_grid", "lambdas",
           "dataset", "report", "reference", "noise_seed", "base"}


def merge_config(defaults: dict, user: dict, path: str = "") -> dict:
    """Recursive merge; keys absent from ``defaults`` are an error."""
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(defaults[key], dict) and key not in _OPAQUE:
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            out[key] = merge_config(defaults[key], value, where + ".")
        elif key == "base" and isinstance(value, dict):
            out[key] = merge_config(DEFAULTS["discover-floquet"] if out.get("kind", "floquet")
                                    == "floquet" else DEFAULTS["discover-pde"],
                                    value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_override(config: dict, keys: list[str], value: Any) -> None:
    node = config
    for i, k in enumerate(keys[:-1]):
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key '{'.'.join(keys[:i + 1])}'")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config key '{'.'.join(keys)}'")
    node[keys[-1]] = value


def build_config(command: str, user: dict | None = None, overrides=(), seed=None,
                 out=None, runs=None) -> dict:
    defaults = DEFAULTS[command]
    if command == "sweep" and user and user.get("kind") == "pde":
        defaults = copy.deepcopy(defaults)
        base = copy.deepcopy(DEFAULTS["discover-pde"])
        for k in ("seed", "n_runs", "workers", "out"):
            base.pop(k)
        defaults["base"] = base
    cfg = merge_config(defaults, user or {})
    for text in overrides:
        keys, value = parse_override(text)
        apply_override(cfg, keys, value)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = out
    if runs is not None:
        if "n_runs" not in cfg:
            raise ConfigError(f"{command} does not take --runs")
        cfg["n_runs"] = int(runs)
    return cfg


def evolution_config(cfg: dict, seed: int) -> EvolutionConfig:
    return EvolutionConfig.from_dict(dict(cfg["evolution"], seed=seed))


# --- serialisation ---------------------------------------------------------------------

def token_to_json(tok) -> dict:
    if isinstance(tok, DerivativeToken):
        return {"kind": "derivative", "axis": tok.axis, "order": tok.order,
                "axis_name": tok.axis_name}
    return {"kind": "cos", "frequency": float(tok.frequency), "power": tok.power}


def token_from_json(data: dict):
    if data.get("kind") == "derivative":
        return DerivativeToken(int(data["axis"]), int(data["order"]), data.get("axis_name", ""))
    if data.get("kind") == "cos":
        return CosToken(float(data["frequency"]), int(data["power"]))
    raise ConfigError(f"unknown token kind in report: {data!r}")


def term_to_json(term: Term) -> list[dict]:
    return [token_to_json(t) for t in term.tokens]


def term_from_json(data: list) -> Term:
    return Term(tuple(token_from_json(t) for t in data))


def model_to_json(model: DiscoveredModel) -> dict:
    return {
        "equation": model.equation(),
        "target": term_to_json(model.target),
        "target_label": model.target_label,
        "terms": [term_to_json(t) for t in model.terms],
        "labels": model.labels,
        "coefficients": model.coefficients,
        "raw_coefficients": model.raw_coefficients,
        "lambda": model.lam,
        "fitness": model.fitness,
        "refit_fitness": model.refit_fitness,
        "residual_norm": model.residual_norm,
        "target_norm": model.target_norm,
        "degenerate": model.degenerate,
        "seed": model.seed,
        "epochs": model.epochs,
    }


@dataclass
class LoadedModel:
    """Enough of a discovered model to solve or evaluate it again."""

    target: Term
    terms: list[Term]
    coefficients: list[float]
    degenerate: bool = False


def model_from_json(data: dict) -> LoadedModel:
    return LoadedModel(term_from_json(data["target"]),
                       [term_from_json(t) for t in data["terms"]],
                       [float(c) for c in data["coefficients"]], bool(data["degenerate"]))


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int
    model: dict
    lam: float
    fitness: float
    fitness_history: list[float]
    candidates: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def as_dict(self, timings: bool = True) -> dict:
        out = {
            "schema": SCHEMA, "command": self.command, "config": self.config,
            "seed": self.seed, "model": self.model, "lambda": self.lam,
            "fitness": self.fitness, "fitness_history": self.fitness_history,
            "candidates": self.candidates, "metrics": self.metrics,
        }
        out.update(self.extra)
        if timings:
            out["timings"] = self.timings
        return out


def _clean(obj):
    """JSON-safe copy: tuples to lists, numpy scalars to Python, inf/nan to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(data: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_report(report: RunReport, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    dump_json(report.as_dict(), path)
    return path


def load_report(path: str) -> dict:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"report not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("schema") != SCHEMA:
        raise ConfigError(f"{path}: unsupported report schema {data.get('schema')!r}")
    return data


def _write_rows(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_history(models: list[DiscoveredModel], chosen: DiscoveredModel, path: str) -> None:
    header = ["epoch", "best_fitness"] + [f"lambda_{m.lam:g}" for m in models]
    rows = []
    for e in range(len(chosen.history)):
        rows.append([e, chosen.history[e]] + [m.history[e] for m in models])
    _write_rows(path, header, rows)


def _candidates(models: list[DiscoveredModel]) -> list[dict]:
    return [{"lambda": m.lam, "equation": m.equation(), "n_terms": len(m.terms),
             "refit_fitness": m.refit_fitness, "residual_norm": m.residual_norm,
             "degenerate": m.degenerate} for m in models]


def _discover(ws, family, cfg: dict, seed: int):
    ecfg = evolution_config(cfg, seed)
    sel = cfg["selection"]
    if sel["selector"] not in SELECTORS:
        raise ConfigError(f"selection.selector must be one of {SELECTORS}")
    return discover(ws, family, ecfg, list(cfg["lambda_grid"]), sel["selector"],
                    float(sel["tolerance"]))


# --- discover-pde ----------------------------------------------------------------------

def synthetic_spec(cfg: dict, seed: int) -> SyntheticSpec:
    syn = cfg["data"]["synthetic"]
    noise_seed = syn["noise_seed"]
    return SyntheticSpec(
        equation=syn["equation"], coefficient=float(syn["coefficient"]), nx=int(syn["nx"]),
        nt=int(syn["nt"]), dx=float(syn["dx"]), dt=float(syn["dt"]),
        modes=tuple(tuple(m) for m in syn["modes"]), noise_level=float(syn["noise_level"]),
        seed=seed if noise_seed is None else int(noise_seed),
    )


def reference_field(cfg: dict, seed: int) -> GridField:
    """The observed field a discover-pde config describes."""
    if cfg["data"]["dataset"]:
        return load_grid(cfg["data"]["dataset"])
    return generate_field(synthetic_spec(cfg, seed))


def _pde_workspace(grid: GridField, cfg: dict):
    sm = cfg["smoothing"]
    smoothing = SmoothingSpec(float(sm["sigma"]), int(sm["radius"])) if sm["enabled"] else None
    d = cfg["diff"]
    diff = DiffSpec(0, 1, int(d["window"]), int(d["poly_degree"]))
    ws = build_workspace(grid, int(d["max_order"]), diff, smoothing, sm["axes"])
    family = token_family(grid, int(d["max_order"]), int(cfg["evolution"]["k"]))
    return ws, family


def cmd_discover_pde(cfg: dict, out_dir: str | None = None) -> RunReport:
    seed = int(cfg["seed"])
    out_dir = out_dir or cfg["out"]
    timings = {}
    t0 = time.perf_counter()
    with stage("load"):
        grid = reference_field(cfg, seed)
        if grid.ndim != 2:
            raise ConfigError(f"discover-pde expects a (t, x) field, got {grid.ndim} axes")
    timings["load"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    with stage("differentiate"):
        ws, family = _pde_workspace(grid, cfg)
    timings["differentiate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    with stage("evolve"):
        best, models = _discover(ws, family, cfg, seed)
    timings["evolve"] = time.perf_counter() - t0
    report = RunReport(
        "discover-pde", cfg, seed, model_to_json(best), best.lam, best.refit_fitness,
        best.history, _candidates(models), timings=timings,
        extra={"grid": {"axis_names": list(grid.axis_names),
                        "axis_sizes": list(grid.axis_sizes),
                        "axis_steps": list(grid.axis_steps)},
               "structure_epoch": best.first_epoch_with(best.support_labels())},
    )
    with stage("report"):
        os.makedirs(out_dir, exist_ok=True)
        write_history(models, best, os.path.join(out_dir, "fitness_history.csv"))
        with open(os.path.join(out_dir, "equation.txt"), "w", encoding="utf-8") as fh:
            fh.write(best.equation() + "\n")
        write_report(report, out_dir)
    return report


# --- discover-floquet ------------------------------------------------------------------

def rod_spec(cfg: dict) -> RodSpec:
    f = cfg["floquet"]
    return RodSpec(float(f["gamma"]), float(f["sigma"]), int(f["n_blocks"]), f["termination"])


def floquet_samples(cfg: dict) -> list[FloquetSample]:
    f = cfg["floquet"]
    if f["dataset"]:
        return read_dataset(f["dataset"])
    if int(f["npts"]) < 3:
        raise ConfigError(f"floquet.npts must be at least 3, got {f['npts']}")
    return generate_dataset(int(f["npts"]), (float(f["omega_min"]), float(f["omega_max"])),
                            rod_spec(cfg))


def _coefficient_table(poly: QuadraticPolynomial, oracle: QuadraticPolynomial) -> list[dict]:
    """Discovered, oracle and closed-form cos-amplitudes of the monic form, per (power, frequency)."""
    lead = poly.a2.as_dict()
    norm = lead.get(0.0, 1.0) if set(lead) <= {0.0} else None
    rows = []
    closed_form = {1: CLOSED_FORM_A1, 0: {0.0: 1.0}, 2: {0.0: 1.0}}
    for power, series, oseries in ((2, poly.a2, oracle.a2), (1, poly.a1, oracle.a1),
                                   (0, poly.a0, oracle.a0)):
        found = series.as_dict()
        ref = oseries.as_dict()
        for freq in sorted(set(found) | {f for f, a in ref.items() if abs(a) > 1e-6}):
            value = found.get(freq, 0.0)
            rows.append({
                "power": power, "frequency": freq,
                "discovered": value / norm if norm else None,
                "oracle": ref.get(freq, 0.0),
                "closed_form": closed_form[power].get(freq, 0.0),
            })
    return rows


def floquet_metrics(poly: QuadraticPolynomial, spec: RodSpec, omega_range, delta: float) -> dict:
    oracle = oracle_polynomial(spec)
    out = {
        "roots_rmse_oracle": roots_rmse(poly, oracle, omega_range, delta),
        "band_agreement_oracle": band_agreement(poly, oracle, omega_range, delta),
        "coefficients": _coefficient_table(poly, oracle),
    }
    try:
        closed_form = analytical_polynomial(spec)
    except FloquetError:
        return out
    out["roots_rmse_closed_form"] = roots_rmse(poly, closed_form, omega_range, delta)
    out["band_agreement_closed_form"] = band_agreement(poly, closed_form, omega_range, delta)
    out["oracle_vs_closed_form"] = {
        "roots_rmse": roots_rmse(oracle, closed_form, omega_range, delta),
        "band_agreement": band_agreement(oracle, closed_form, omega_range, delta),
        "lambda_at_omega0": {"oracle": oracle.roots(0.0)[0].real.tolist(),
                             "closed_form": closed_form.roots(0.0)[0].real.tolist()},
        "pointwise": compare_with_closed_form(spec).as_dict(),
    }
    return out


def _band_label(poly: QuadraticPolynomial, omega: float) -> str:
    band = band_or_none(poly, omega)
    return "undefined" if band is None else band.value


def cmd_discover_floquet(cfg: dict, out_dir: str | None = None) -> RunReport:
    seed = int(cfg["seed"])
    out_dir = out_dir or cfg["out"]
    f = cfg["floquet"]
    timings = {}
    t0 = time.perf_counter()
    with stage("load"):
        if f["value_mode"] not in VALUE_MODES:
            raise ConfigError(f"floquet.value_mode must be one of {VALUE_MODES}")
        spec = rod_spec(cfg)
        samples = floquet_samples(cfg)
        ws = floquet_workspace([s.omega for s in samples],
                               [s.value(f["value_mode"]) for s in samples])
        tok = cfg["tokens"]
        family = CosFamily(tuple(float(v) for v in tok["frequencies"]),
                           tuple(int(p) for p in tok["powers"]))
    timings["load"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    with stage("evolve"):
        best, models = _discover(ws, family, cfg, seed)
    timings["evolve"] = time.perf_counter() - t0
    omega_range = (float(f["omega_min"]), float(f["omega_max"]))
    delta = float(cfg["metrics"]["delta"])
    t0 = time.perf_counter()
    with stage("metrics"):
        metrics: dict = {}
        poly = None
        if not best.degenerate:
            poly = polynomial_from_terms(best.target, best.terms, best.coefficients)
            metrics = floquet_metrics(poly, spec, omega_range, delta)
    timings["metrics"] = time.perf_counter() - t0
    report = RunReport("discover-floquet", cfg, seed, model_to_json(best), best.lam,
                       best.refit_fitness, best.history, _candidates(models), metrics, timings,
                       extra={"n_samples": len(samples)})
    with stage("report"):
        os.makedirs(out_dir, exist_ok=True)
        write_history(models, best, os.path.join(out_dir, "fitness_history.csv"))
        with open(os.path.join(out_dir, "equation.txt"), "w", encoding="utf-8") as fh:
            fh.write(best.equation() + "\n")
        write_dataset(samples, os.path.join(out_dir, "samples.csv"), f["value_mode"])
        if poly is not None:
            omega = omega_grid(omega_range, delta)
            oracle = oracle_polynomial(spec)
            table = np.hstack([roots_table(poly, omega), roots_table(oracle, omega)[:, 1:]])
            _write_rows(os.path.join(out_dir, "roots.csv"),
                        ["omega", "re_root1", "im_root1", "re_root2", "im_root2",
                         "oracle_re_root1", "oracle_im_root1", "oracle_re_root2",
                         "oracle_im_root2"], table)
            _write_rows(os.path.join(out_dir, "bands.csv"), ["omega", "discovered", "oracle"],
                        ([w, _band_label(poly, w), _band_label(oracle, w)] for w in omega))
        write_report(report, out_dir)
    return report


# --- validate -------------------------------------------------------------------------

def cmd_validate(cfg: dict, report_path: str | None = None, out_dir: str | None = None):
    out_dir = out_dir or cfg["out"]
    report_path = report_path or cfg["report"]
    with stage("load"):
        if not report_path:
            raise ConfigError("validate needs a report path")
        data = load_report(report_path)
        if data.get("command") != "discover-pde":
            raise ConfigError(f"cannot validate a {data.get('command')!r} report: "
                              "only discover-pde models can be solved")
        model = model_from_json(data["model"])
        if model.degenerate:
            raise StageError("load", "report holds a degenerate model", EXIT_DEGENERATE)
        if cfg["reference"]:
            reference = load_grid(cfg["reference"])
        else:
            src = merge_config(DEFAULTS["discover-pde"], data["config"])
            reference = reference_field(src, int(data["seed"]))
        expected = tuple(data.get("grid", {}).get("axis_sizes", reference.axis_sizes))
        if tuple(reference.axis_sizes) != expected:
            raise ConfigError(f"reference grid {reference.axis_sizes} does not match the "
                              f"report's grid {expected}")
    t0 = time.perf_counter()
    with stage("solve"):
        solved = solve_discovered_1d(model, reference, int(cfg["refine"]), float(cfg["safety"]))
        err = error_report(reference, solved)
    elapsed = time.perf_counter() - t0
    with stage("report"):
        os.makedirs(out_dir, exist_ok=True)
        save_grid(err.rmse_map, os.path.join(out_dir, "rmse_map"))
        save_grid(err.mae_map, os.path.join(out_dir, "mae_map"))
        save_grid(solved, os.path.join(out_dir, "solution"))
        centre = reference.axis_sizes[1] // 2
        _write_rows(os.path.join(out_dir, "center_series.csv"), ["t", "reference", "solution"],
                    zip(reference.coordinates(0), reference.values[:, centre],
                        solved.values[:, centre]))
        dump_json({"schema": SCHEMA, "command": "validate", "config": cfg,
                   "model": data["model"]["equation"], "metrics": err.as_dict(),
                   "timings": {"solve": elapsed}},
                  os.path.join(out_dir, "validation.json"))
    return err


# --- multiple runs and sweeps -------------------------------------------------------------

_COMMANDS: dict[str, Callable[[dict, str], RunReport]] = {
    "discover-pde": cmd_discover_pde,
    "discover-floquet": cmd_discover_floquet,
}


def _run_one(args: tuple[str, dict, str]) -> dict:
    command, cfg, out_dir = args
    return _COMMANDS[command](cfg, out_dir).as_dict(timings=False)


def _summary_row(index: int, rep: dict) -> list:
    m = rep["model"]
    row = [index, rep["seed"], rep["lambda"], m["equation"], len(m["terms"]),
           m["refit_fitness"], int(m["degenerate"])]
    metrics = rep.get("metrics", {})
    rmse = metrics.get("roots_rmse_oracle", math.nan)
    rmse = float(rmse) if not isinstance(rmse, str) else float(rmse)
    row.append(rmse)
    row.append(math.log10(rmse) if rmse > 0 else -math.inf)
    return row


SUMMARY_HEADER = ["run", "seed", "lambda", "equation", "n_terms", "refit_fitness",
                  "degenerate", "roots_rmse", "log10_roots_rmse"]


def run_many(command: str, cfg: dict, out_dir: str, workers: int = 1) -> list[dict]:
    """``n_runs`` independent runs with seeds ``seed + i``, in per-run folders.

    Results are collected in run order whatever the completion order, so the
    aggregate is identical for serial and parallel execution.
    """
    n = int(cfg["n_runs"])
    if n < 1:
        raise ConfigError("n_runs must be at least 1")
    jobs = []
    for i in range(n):
        run_cfg = copy.deepcopy(cfg)
        run_cfg["seed"] = int(cfg["seed"]) + i
        run_cfg["n_runs"] = 1
        jobs.append((command, run_cfg, os.path.join(out_dir, f"run_{i:03d}")))
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(min(workers, n)) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    _write_rows(os.path.join(out_dir, "summary.csv"), SUMMARY_HEADER,
                (_summary_row(i, r) for i, r in enumerate(reports)))
    return reports


def cmd_sweep(cfg: dict, out_dir: str | None = None) -> dict:
    """Distribution study over npts (Floquet) and/or single-lambda grids."""
    out_dir = out_dir or cfg["out"]
    kind = cfg["kind"]
    if kind not in ("floquet", "pde"):
        raise ConfigError("sweep.kind must be 'floquet' or 'pde'")
    command = "discover-floquet" if kind == "floquet" else "discover-pde"
    base = dict(copy.deepcopy(cfg["base"]), seed=cfg["seed"], n_runs=cfg["n_runs"],
                workers=cfg["workers"], out=out_dir)
    cells: list[tuple[str, dict]] = []
    npts_grid = cfg["npts_grid"] if kind == "floquet" else [None]
    lambdas = cfg["lambdas"] or [None]
    for npts in npts_grid:
        for lam in lambdas:
            c = copy.deepcopy(base)
            name = []
            if npts is not None:
                c["floquet"]["npts"] = int(npts)
                name.append(f"npts_{int(npts)}")
            if lam is not None:
                c["lambda_grid"] = [float(lam)]
                name.append(f"lambda_{float(lam):g}")
            cells.append(("_".join(name) or "base", c))
    rows = []
    distribution = []
    for name, c in cells:
        cell_dir = os.path.join(out_dir, name)
        with stage(f"sweep {name}"):
            reports = run_many(command, c, cell_dir, int(cfg["workers"]))
        logs = [_summary_row(i, r)[-1] for i, r in enumerate(reports)]
        for i, r in enumerate(reports):
            distribution.append([name, c["floquet"]["npts"] if kind == "floquet" else "",
                                 c["lambda_grid"][0] if len(c["lambda_grid"]) == 1 else "",
                                 r["seed"], logs[i]])
        finite = [v for v in logs if math.isfinite(v)]
        rows.append({"cell": name, "runs": len(reports),
                     "median_log10_roots_rmse": float(np.median(logs)) if logs else math.nan,
                     "finite": len(finite)})
    os.makedirs(out_dir, exist_ok=True)
    _write_rows(os.path.join(out_dir, "distribution.csv"),
                ["cell", "npts", "lambda", "seed", "log10_roots_rmse"], distribution)
    summary = {"schema": SCHEMA, "command": "sweep", "config": cfg, "cells": rows}
    dump_json(summary, os.path.join(out_dir, "sweep.json"))
    return summary


# --- argument parsing ------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eqdisc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("discover-pde", "discover a PDE from a gridded field"),
                           ("discover-floquet", "discover a Floquet polynomial"),
                           ("validate", "solve a discovered PDE and compare with the data"),
                           ("sweep", "distribution study over npts or lambda grids")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. evolution.n_epochs=150")
        if name != "validate":
            sp.add_argument("--seed", type=int)
            sp.add_argument("--runs", type=int)
        else:
            sp.add_argument("report", nargs="?", help="report.json from discover-pde")
    return p


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with stage("config"):
            user = _read_config(args.config)
            if args.command == "validate":
                cfg = build_config("validate", user, args.set, out=args.out)
                if args.report:
                    cfg["report"] = args.report
            else:
                cfg = build_config(args.command, user, args.set, args.seed, args.out, args.runs)
        if args.command == "validate":
            err = cmd_validate(cfg)
            print(f"rmse={err.rmse:.6g} mae={err.mae:.6g} relative_rmse={err.relative_rmse:.6g}")
            return EXIT_OK
        if args.command == "sweep":
            summary = cmd_sweep(cfg)
            for row in summary["cells"]:
                print(f"{row['cell']}: median log10 roots_rmse = "
                      f"{row['median_log10_roots_rmse']:.3f} over {row['runs']} runs")
            return EXIT_OK
        if int(cfg["n_runs"]) > 1:
            with stage("runs"):
                reports = run_many(args.command, cfg, cfg["out"], int(cfg["workers"]))
            for r in reports:
                print(f"seed {r['seed']}: {r['model']['equation']}")
            return EXIT_DEGENERATE if all(r["model"]["degenerate"] for r in reports) else EXIT_OK
        report = _COMMANDS[args.command](cfg, cfg["out"])
        print(report.model["equation"])
        return EXIT_DEGENERATE if report.model["degenerate"] else EXIT_OK
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
