"""Batch command line: estimate, simulate, roc and tune.

Every command takes its settings from flags and/or a configuration file
(``--config``, YAML with one key per line; flags win). Each run writes a
``manifest.json`` that can be passed back through ``--config`` to repeat it.

Exit codes: 0 success, 1 input or configuration error, 2 non-convergence or
another algorithmic failure (outputs that could be produced are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .core import (DataValidationError, MultiGraphDataset, NoiseSpec, load_dataset,
                   read_adjacency_csv, validate, write_matrix_csv)
from .estimators import BACKENDS, EstimationError, EstimatorConfig, THRESHOLD_RULES, run
from .simgen import (METHODS, DivergentChainError, StructureTruth, diff_sets_of,
                     dominance_fraction, lambda1_for_level, roc_sweep, simulate)
from .tuning import grid_search

EXIT_OK, EXIT_INPUT, EXIT_ALGO = 0, 1, 2

COMMANDS = ("estimate", "simulate", "roc", "tune")

# resolved value when neither the file nor a flag sets a key
DEFAULTS = {
    "backend": "ns", "e1": "bridge", "e2": "jgl", "gamma": 1.0, "sigma2": 0.0,
    "lambda1": [0.1], "lambda2": 0.025, "ne1": 1000, "ne2": 1000,
    "max_iter": 80, "ma_window": 1, "bank": 10, "tau0": 1e-4, "inner": 3,
    "criterion": "relative_change", "tol": 1e-3, "threshold_rule": "crossing",
    "seed": 0, "threads": 1, "family": "gaussian", "out": None, "inputs": [],
    "single": False,
    # simulate / roc
    "structure": "scale_free", "p": 20, "n": [200], "q": 3, "deviation_rate": 0.03,
    "toggles": None, "signal": 0.3, "extra": None, "burn_in": 200,
    "methods": ["ns_jgl", "ns_jfr", "scio_jgl", "scio_jfr", "naive"],
    "lambda1_grid": [0.05, 0.1, 0.2, 0.4, 0.8], "grid_units": "level", "ratio": 0.25,
    "truth": [],
    # tune
    "lambda2_grid": None, "gamma_ebic": 0.5,
}

# keys forwarded to method_config only when set explicitly
_ROC_OVERRIDES = {"ne1": "n_e1", "ne2": "n_e2", "max_iter": "max_iter", "ma_window": "ma_window",
                  "bank": "bank", "tau0": "tau0", "inner": "inner", "criterion": "criterion",
                  "tol": "tol", "threshold_rule": "threshold_rule", "seed": "seed",
                  "threads": "threads"}

E1_ALIASES = {"bridge": "bridge", "enet": "elastic_net", "adalasso": "adaptive_lasso",
              "elastic_net": "elastic_net", "adaptive_lasso": "adaptive_lasso"}

_LISTS = {"lambda1", "n", "inputs", "methods", "lambda1_grid", "lambda2_grid", "truth"}
_PATHS = {"inputs", "truth"}


class ConfigError(ValueError):
    """Invalid configuration or input; maps to exit code 1."""


@dataclass
class RunConfig:
    command: str
    values: dict
    explicit: frozenset = field(default_factory=frozenset)

    def __getitem__(self, key):
        return self.values[key]

    def manifest_config(self) -> dict:
        # out is where the run went, not what it computed
        return {k: v for k, v in sorted(self.values.items()) if k != "out"}


# -- parsing ---------------------------------------------------------------

def _common(sp):
    g = sp.add_argument_group("estimator")
    g.add_argument("--backend", choices=BACKENDS)
    g.add_argument("--e1", choices=tuple(E1_ALIASES))
    g.add_argument("--e2", choices=("jgl", "jfr"))
    g.add_argument("--gamma", type=float)
    g.add_argument("--sigma2", type=float, help="elastic-net ridge part")
    g.add_argument("--lambda1", type=float, action="append",
                   help="repeat once per graph for graph-specific values")
    g.add_argument("--lambda2", type=float)
    g.add_argument("--ne1", type=int)
    g.add_argument("--ne2", type=int)
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--ma-window", dest="ma_window", type=int)
    g.add_argument("--bank", type=int)
    g.add_argument("--tau0", type=float)
    g.add_argument("--inner", type=int, help="inner loops of the cd backend")
    g.add_argument("--criterion", choices=("relative_change", "fixed_T"))
    g.add_argument("--tol", type=float)
    g.add_argument("--threshold-rule", dest="threshold_rule", choices=THRESHOLD_RULES)
    g.add_argument("--family", help="one family for all nodes or a comma list per node")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--config", help="YAML or manifest.json with one key per setting")
    g.add_argument("--out", help="output directory")


def _sim_args(sp):
    g = sp.add_argument_group("simulation")
    g.add_argument("--structure", choices=("scale_free", "banded", "hub"))
    g.add_argument("--p", type=int)
    g.add_argument("--n", type=int, action="append", help="repeat once per graph")
    g.add_argument("--q", type=int)
    g.add_argument("--deviation-rate", dest="deviation_rate", type=float)
    g.add_argument("--toggles", type=int, help="edges toggled per variant (overrides the rate)")
    g.add_argument("--signal", type=float)
    g.add_argument("--extra", type=int, help="BA attachment m, bandwidth or hub count")
    g.add_argument("--burn-in", dest="burn_in", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jointaug", description=__doc__.splitlines()[0],
                                 argument_default=argparse.SUPPRESS)
    ap.add_argument("--version", action="version", version=f"jointaug {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("estimate", help="joint estimation from graph CSVs",
                        argument_default=argparse.SUPPRESS)
    sp.add_argument("inputs", nargs="*", help="one CSV per graph (header = node names)")
    sp.add_argument("--single", action="store_true", help="allow a single graph")
    _common(sp)

    sp = sub.add_parser("simulate", help="sample a planted instance",
                        argument_default=argparse.SUPPRESS)
    _common(sp)
    _sim_args(sp)

    sp = sub.add_parser("roc", help="ROC points per method on a planted instance",
                        argument_default=argparse.SUPPRESS)
    sp.add_argument("inputs", nargs="*", help="graph CSVs (default: simulate one)")
    sp.add_argument("--truth", action="append", help="truth adjacency CSV, one per graph")
    sp.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    sp.add_argument("--lambda1-grid", dest="lambda1_grid", help="comma list, ascending")
    sp.add_argument("--grid-units", dest="grid_units", choices=("level", "raw"),
                    help="level: lasso weights converted per method; raw: lambda1 as given")
    sp.add_argument("--ratio", type=float, help="lambda2 / lambda1")
    _common(sp)
    _sim_args(sp)

    sp = sub.add_parser("tune", help="extended-BIC grid search",
                        argument_default=argparse.SUPPRESS)
    sp.add_argument("inputs", nargs="*")
    sp.add_argument("--single", action="store_true")
    sp.add_argument("--lambda1-grid", dest="lambda1_grid", help="comma list")
    sp.add_argument("--lambda2-grid", dest="lambda2_grid", help="comma list")
    sp.add_argument("--gamma-ebic", dest="gamma_ebic", type=float)
    _common(sp)
    return ap


def _split_list(v):
    if isinstance(v, str):
        return [s.strip() for s in v.split(",") if s.strip()]
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v]


def _read_config(path: str):
    """Key/value mapping of a config file and the keys it sets explicitly.

    A manifest echoes every resolved value but lists the keys its run set
    explicitly, so a replay treats defaults as defaults.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config: file not found: {path}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config: {path} must hold a mapping of keys to values")
    explicit = None
    if "config" in data and isinstance(data["config"], dict) and "command" in data:
        explicit = data.get("explicit")
        data = data["config"]  # a manifest
    vals = {str(k).replace("-", "_"): v for k, v in data.items()}
    return vals, set(vals) if explicit is None else set(explicit) & set(vals)


def _coerce(key, value):
    if value is None:
        return None
    if key in _LISTS:
        items = _split_list(value)
        if key in ("lambda1", "lambda1_grid", "lambda2_grid"):
            return [float(v) for v in items]
        if key == "n":
            return [int(v) for v in items]
        return [str(v) for v in items]
    kind = type(DEFAULTS.get(key))
    if kind is bool:
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes")
        return bool(value)
    if kind in (int, float):
        return kind(value)
    if key in ("toggles", "extra"):
        return int(value)
    return value


def resolve(argv=None) -> RunConfig:
    """Parse flags and the optional config file into a validated RunConfig."""
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    file_vals, file_explicit = _read_config(args.pop("config")) if "config" in args else ({}, set())
    unknown = sorted(set(file_vals) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    merged = dict(file_vals)
    merged.update(args)
    values = dict(DEFAULTS)
    try:
        for k, v in merged.items():
            values[k] = _coerce(k, v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: bad value ({exc})") from None
    cfg = RunConfig(command, values, frozenset(file_explicit | set(args)))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    for key in _PATHS:
        for path in v[key] or []:
            if not Path(path).is_file():
                raise ConfigError(f"{key}: file not found: {path}")
    if cfg.command in ("estimate", "tune"):
        need = 1 if v["single"] else 2
        if len(v["inputs"]) < need:
            raise ConfigError(f"inputs: need at least {need} graph file(s), got {len(v['inputs'])}"
                              + ("" if v["single"] else " (use --single for one graph)"))
    if cfg.command == "tune" and "lambda1_grid" not in cfg.explicit:
        raise ConfigError("lambda1_grid: required for tune")
    if cfg.command == "roc":
        bad = [m for m in v["methods"] if m not in METHODS]
        if bad:
            raise ConfigError(f"methods: unknown {bad}; choose from {METHODS}")
        if v["inputs"] and len(v["truth"]) != len(v["inputs"]):
            raise ConfigError("truth: give one truth adjacency per input graph")
        if v["grid_units"] not in ("level", "raw"):
            raise ConfigError("grid_units: must be level or raw")
        if v["lambda1_grid"] != sorted(v["lambda1_grid"]) or not v["lambda1_grid"]:
            raise ConfigError("lambda1_grid: must be a nonempty ascending list")
    if cfg.command in ("simulate", "roc") and not v["inputs"]:
        if v["p"] < 2 or v["q"] < 1:
            raise ConfigError("p must be >= 2 and q >= 1")
        if len(v["n"]) not in (1, v["q"]) or min(v["n"]) < 1:
            raise ConfigError(f"n: give one positive size or {v['q']} sizes")
    for key in ("threads", "bank", "inner"):
        if v[key] < 1:
            raise ConfigError(f"{key}: must be >= 1")
    # build once so the core types check their own ranges
    estimator_config(cfg, q=max(len(v["inputs"]), 1) if cfg.command != "simulate" else v["q"])


def _lambda1_value(lam):
    return lam[0] if len(lam) == 1 else tuple(lam)


def estimator_config(cfg: RunConfig, q: Optional[int] = None) -> EstimatorConfig:
    v = cfg.values
    try:
        if v["e1"] not in E1_ALIASES:
            raise ConfigError(f"e1: unknown kind {v['e1']!r}; choose from {sorted(E1_ALIASES)}")
        spec = NoiseSpec(e1_kind=E1_ALIASES[v["e1"]], gamma=v["gamma"], lambda1=_lambda1_value(v["lambda1"]),
                         sigma2=v["sigma2"], e2_kind=v["e2"], lambda2=v["lambda2"],
                         n_e1=v["ne1"], n_e2=v["ne2"])
        if q is not None:
            spec.lambda1_for(q)
        return EstimatorConfig(backend=v["backend"], spec=spec, max_iter=v["max_iter"],
                               ma_window=v["ma_window"], bank=v["bank"], tau0=v["tau0"],
                               threshold_rule=v["threshold_rule"], inner=v["inner"],
                               criterion=v["criterion"], tol=v["tol"], seed=v["seed"],
                               threads=v["threads"])
    except DataValidationError as exc:
        raise ConfigError(str(exc)) from None


def _families(value, p):
    fam = _split_list(value)
    if len(fam) == 1:
        return fam[0]
    if len(fam) != p:
        raise ConfigError(f"family: {len(fam)} entries for {p} nodes")
    return tuple(fam)


def _load(cfg: RunConfig) -> MultiGraphDataset:
    paths = cfg["inputs"]
    try:
        ds = load_dataset(paths, "gaussian")
        ds = validate(MultiGraphDataset(ds.graphs, _families(cfg["family"], ds.p), ds.labels))
    except (DataValidationError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    cfg_q = estimator_config(cfg)
    try:
        cfg_q.spec.lambda1_for(ds.q)
        cfg_q.spec.check_feasible(ds.n_total, ds.q, ds.p)
    except DataValidationError as exc:
        raise ConfigError(str(exc)) from None
    return ds


# -- outputs ---------------------------------------------------------------

def _labels(ds: MultiGraphDataset):
    return list(ds.labels) if ds.labels else [f"X{i + 1}" for i in range(ds.p)]


def _fmt(x) -> str:
    return f"{x:.10g}"


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg["out"]:
        raise ConfigError("out: an output directory is required")
    return Path(cfg["out"])


def write_manifest(out: Path, cfg: RunConfig, status: dict) -> None:
    doc = {"command": cfg.command, "version": __version__, "seed": cfg["seed"],
           "config": cfg.manifest_config(),
           "explicit": sorted(k for k in cfg.explicit if k != "out"), "status": status}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def edge_weights(est) -> np.ndarray:
    """Per-graph edge weights: the precision entry for GGMs, else mean of both regressions."""
    if est.precision is not None:
        return np.asarray(est.precision)
    th = np.asarray(est.theta)
    return 0.5 * (th + np.transpose(th, (0, 2, 1)))


def write_estimate(out: Path, est, labels) -> None:
    q = est.adjacency.shape[0]
    for l in range(q):
        write_matrix_csv(out / f"adjacency_g{l + 1}.csv", est.adjacency[l].astype(int), labels)
        if est.precision is not None:
            write_matrix_csv(out / f"precision_g{l + 1}.csv", est.precision[l], labels)
    w = edge_weights(est)
    any_edge = est.adjacency.any(axis=0)
    with (out / "edges.tsv").open("w", newline="") as fh:
        wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
        wr.writerow(["node_a", "node_b"] + [f"weight_g{l + 1}" for l in range(q)])
        for a, b in zip(*np.nonzero(np.triu(any_edge, 1))):
            wr.writerow([labels[a], labels[b]]
                        + [_fmt(w[l, a, b]) if est.adjacency[l, a, b] else "0" for l in range(q)])
    with (out / "loss_trace.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "loss"])
        for i, v in enumerate(est.loss_trace, 1):
            wr.writerow([i, _fmt(v)])


def cmd_estimate(cfg: RunConfig) -> int:
    ds = _load(cfg)
    out = _out_dir(cfg)
    ecfg = estimator_config(cfg, ds.q)
    try:
        est = run(ecfg, ds)
    except (EstimationError, np.linalg.LinAlgError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cfg, {"converged": False, "error": f"{type(exc).__name__}: {exc}"})
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ALGO
    out.mkdir(parents=True, exist_ok=True)
    write_estimate(out, est, _labels(ds))
    write_manifest(out, cfg, {"converged": bool(est.converged),
                              "iterations_used": int(est.iterations_used),
                              "edges": [int(np.triu(a, 1).sum()) for a in est.adjacency]})
    if not est.converged:
        print(f"warning: no convergence within {ecfg.max_iter} iterations", file=sys.stderr)
        return EXIT_ALGO
    return EXIT_OK


def _simulate(cfg: RunConfig):
    v = cfg.values
    try:
        return simulate(v["structure"], v["p"], v["n"] if len(v["n"]) > 1 else v["n"][0], v["q"],
                        deviation_rate=v["deviation_rate"], signal=v["signal"], seed=v["seed"],
                        extra=v["extra"], toggles=v["toggles"], family=v["family"],
                        burn_in=v["burn_in"])
    except DivergentChainError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    try:
        truth, ds = _simulate(cfg)
    except DivergentChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALGO
    out.mkdir(parents=True, exist_ok=True)
    labels = _labels(ds)
    for l, g in enumerate(ds.graphs):
        fmt = "{:.0f}" if cfg["family"] == "poisson" else "{:.10g}"
        write_matrix_csv(out / f"data_g{l + 1}.csv", g, labels, fmt)
        write_matrix_csv(out / f"truth_adjacency_g{l + 1}.csv", truth.adjacency[l].astype(int), labels)
    with (out / "truth_differences.tsv").open("w", newline="") as fh:
        wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
        wr.writerow(["graph_a", "graph_b", "node_a", "node_b"])
        for (a, b), pairs in sorted(truth.diff_sets.items()):
            for j, k in sorted(pairs):
                wr.writerow([a + 1, b + 1, labels[j], labels[k]])
    write_manifest(out, cfg, {"edges": [int(np.triu(a, 1).sum()) for a in truth.adjacency],
                              "differences": {f"{a + 1}-{b + 1}": len(s)
                                              for (a, b), s in sorted(truth.diff_sets.items())}})
    return EXIT_OK


def _roc_instance(cfg: RunConfig):
    if not cfg["inputs"]:
        return _simulate(cfg)
    ds = _load(cfg)
    adj = []
    for path in cfg["truth"]:
        try:
            header, a = read_adjacency_csv(path)
        except (DataValidationError, OSError) as exc:
            raise ConfigError(str(exc)) from None
        if a.shape != (ds.p, ds.p):
            raise ConfigError(f"{path}: truth is {a.shape}, data has {ds.p} nodes")
        adj.append(a)
    adj = np.array(adj)
    return StructureTruth(adj, adj[0], diff_sets_of(adj)), ds


def cmd_roc(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    try:
        truth, ds = _roc_instance(cfg)
    except DivergentChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALGO
    overrides = {name: cfg[key] for key, name in _ROC_OVERRIDES.items() if key in cfg.explicit}
    results = {}
    n_bar = float(ds.n.mean())
    for method in cfg["methods"]:
        if cfg["grid_units"] == "level":
            grid = [lambda1_for_level(method, v, n_bar, **overrides) for v in cfg["lambda1_grid"]]
        else:
            grid = cfg["lambda1_grid"]
        results[method] = roc_sweep(ds, truth, method, grid, cfg["ratio"], **overrides)
    out.mkdir(parents=True, exist_ok=True)
    failed = False
    for method, points in results.items():
        with (out / f"roc_{method}.csv").open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["grid_value", "lambda1", "lambda2", "FP", "TP", "converged", "error"])
            for g, pt in zip(cfg["lambda1_grid"], points):
                lam2 = 0.0 if method == "naive" else cfg["ratio"] * pt.lambda1
                wr.writerow([_fmt(g), _fmt(pt.lambda1), _fmt(lam2), "" if pt.fp is None else pt.fp,
                             "" if pt.tp is None else pt.tp,
                             "" if pt.converged is None else int(pt.converged), pt.error])
                failed = failed or bool(pt.error)
    summary = {}
    if "naive" in results:
        for method, points in results.items():
            if method != "naive":
                summary[method] = dominance_fraction(points, results["naive"])
    positives = sum(len(s) for s in truth.diff_sets.values())
    write_manifest(out, cfg, {"positives": positives, "dominance_vs_naive": summary,
                              "failed_points": failed})
    return EXIT_ALGO if failed else EXIT_OK


def cmd_tune(cfg: RunConfig) -> int:
    ds = _load(cfg)
    out = _out_dir(cfg)
    ecfg = estimator_config(cfg, ds.q)
    lam2 = cfg["lambda2_grid"] or [cfg["lambda2"]]
    try:
        res = grid_search(ds, ecfg, cfg["lambda1_grid"], lam2, cfg["gamma_ebic"])
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALGO
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "tune.csv")
    write_manifest(out, cfg, {"best_lambda1": list(res.best["lambda1"]),
                              "best_lambda2": res.best["lambda2"],
                              "best_ebic": res.scores[res.best_index]})
    return EXIT_OK


HANDLERS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "roc": cmd_roc, "tune": cmd_tune}


def main(argv=None) -> int:
    try:
        cfg = resolve(argv)
        return HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # argparse usage errors
        code = exc.code if isinstance(exc.code, int) else EXIT_INPUT
        return EXIT_INPUT if code not in (0,) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
