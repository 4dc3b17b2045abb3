"""Command-line front end.

Subcommands write flat files (CSV, JSON, NPZ) for external plotting:

``fit``                  pilot fit, radius selection, clustered refit
``simulate``             simulation studies or a single synthetic dataset
``eval``                 Procrustes MSE and clustering accuracy against a truth
``cluster``              kernel components of a checkpoint at given radii
``export-trajectories``  trajectories of a checkpoint on a time grid

Every run writes ``manifest.json`` with the resolved arguments; passing that
file back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import radius_sweep, read_clusters, write_clusters, write_sweep
from .events import EventFormatError, NodeRegistry, load_events, save_events
from .sampler import canonical_mode
from .simkit import (ScenarioConfig, clustering_accuracy, generate, load_scenario, presets,
                     procrustes_mse, run_experiment, scenario_dict)
from .splines import SplineBasis, trajectories
from .svi import FitConfig, ModelConfig, PipelineConfig, fit_pipeline, load_checkpoint, save_checkpoint

log = logging.getLogger("latentrem")

EXPERIMENTS = ("vary_p", "vary_batch", "vary_sparsity", "vary_cluster_vicinity", "dataset")
MODE_CHOICES = ("dense", "cc-discrete", "cc-partial", "dense_discrete", "cc_discrete", "cc_partial")


class UsageError(Exception):
    """Invalid flag combination; maps to exit status 2."""


# --- parser -----------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="YAML or JSON file of flag defaults (a manifest.json also works)")
    p.add_argument("--out", help="output directory (file for export-trajectories)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker processes; default all cores")
    p.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))


def _fit_flags(p):
    g = p.add_argument_group("input")
    g.add_argument("--input", help="event file")
    g.add_argument("--format", default="continuous", choices=("continuous", "discrete"))
    g.add_argument("--delimiter", default=None, help="field delimiter; sniffed when omitted")
    g.add_argument("--horizon", type=float, default=None, help="observation end T")
    g.add_argument("--intervals", type=int, default=20, help="intervals used to discretize continuous input")
    g = p.add_argument_group("model")
    g.add_argument("--dim", type=int, default=2, help="latent dimension d")
    g.add_argument("--n-basis", type=int, default=10, help="B-spline basis size m")
    g.add_argument("--similarity", default="neg_sq_euclid", choices=("neg_sq_euclid", "inner_product"))
    g.add_argument("--propensity", action="store_true", help="add node sender propensities")
    g = p.add_argument_group("optimization")
    g.add_argument("--mode", default="dense", choices=MODE_CHOICES,
                   help="dense interval counts (default), cc-discrete, or cc-partial on raw timestamps")
    g.add_argument("--batch-size", type=int, default=None, help="cases per batch; default 2p")
    g.add_argument("--controls-per-case", type=int, default=1)
    g.add_argument("--lr", type=float, default=1e-2)
    g.add_argument("--xi1", type=float, default=0.9)
    g.add_argument("--xi2", type=float, default=0.999)
    g.add_argument("--adam-variant", default="sqrt", choices=("sqrt", "ratio"))
    g.add_argument("--patience", type=int, default=2000)
    g.add_argument("--max-iters", type=int, default=3000, help="pilot iterations")
    g.add_argument("--refit-iters", type=int, default=1000, help="iterations per clustered refit")
    g.add_argument("--log-every", type=int, default=0, help="report progress every k iterations")
    g = p.add_argument_group("clustering")
    g.add_argument("--no-cluster", action="store_true")
    g.add_argument("--radius", type=float, action="append", default=None,
                   help="candidate kernel radius (repeatable); quantile grid when omitted")
    g.add_argument("--nested-depth", type=int, default=0)
    g.add_argument("--grid-points", type=int, default=50, help="time points in trajectories.csv")


def build_parser():
    parser = argparse.ArgumentParser(prog="latentrem", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a dynamic latent space model to an event file")
    _common(p)
    _fit_flags(p)

    p = sub.add_parser("simulate", help="run a simulation study or write a synthetic dataset")
    _common(p)
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--scale", default="desk", choices=("desk", "tiny"))
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--scenario", help="YAML/JSON scenario for the dataset experiment")

    p = sub.add_parser("eval", help="compare estimated trajectories or clusters with a truth")
    _common(p)
    p.add_argument("--truth", help="true trajectories CSV (node, t, x1..xd)")
    p.add_argument("--estimate", help="estimated trajectories CSV")
    p.add_argument("--truth-clusters", help="true clusters CSV")
    p.add_argument("--clusters", help="estimated clusters CSV")

    p = sub.add_parser("cluster", help="kernel components of a fitted checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--radius", type=float, action="append", default=None)
    p.add_argument("--use-mean", action="store_true",
                   help="cluster the final means instead of the frozen pilot coefficients")

    p = sub.add_parser("export-trajectories", help="sample checkpoint trajectories on a grid")
    _common(p)
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--grid-points", type=int, default=50)
    return parser, sub


def _load_config(path):
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if "args" in data:
        data = data["args"]
    return {k.replace("-", "_"): v for k, v in data.items() if k not in ("command", "config")}


def parse_args(argv=None):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = _load_config(args.config)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sp = sub.choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            parser.error(f"unknown keys in config: {', '.join(unknown)}")
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return parser, args


# --- validation ---------------------------------------------------------------

def _positive(args, *names):
    for n in names:
        v = getattr(args, n, None)
        if v is not None and v <= 0:
            raise UsageError(f"--{n.replace('_', '-')} must be positive")


def validate(args):
    """Reject contradictory or out-of-range flags before any computation."""
    if args.threads is not None and args.threads < 1:
        raise UsageError("--threads must be at least 1")
    cmd = args.command
    if cmd == "fit":
        if not args.input:
            raise UsageError("fit needs --input")
        if not args.out:
            raise UsageError("fit needs --out")
        if args.format == "discrete" and canonical_mode(args.mode) == "cc_partial":
            raise UsageError("--mode cc-partial needs continuous input (--format continuous)")
        _positive(args, "intervals", "batch_size", "controls_per_case", "lr", "max_iters",
                  "refit_iters", "dim", "grid_points", "horizon")
        if args.n_basis < 4:
            raise UsageError("--n-basis must be at least 4 for cubic splines")
        for n in ("xi1", "xi2"):
            if not 0 <= getattr(args, n) < 1:
                raise UsageError(f"--{n} must lie in [0, 1)")
        if args.patience < 1:
            raise UsageError("--patience must be at least 1")
        if args.radius and min(args.radius) < 0:
            raise UsageError("--radius must be nonnegative")
        if args.nested_depth < 0:
            raise UsageError("--nested-depth must be nonnegative")
    elif cmd == "simulate":
        if args.replicates < 1:
            raise UsageError("--replicates must be at least 1")
        _positive(args, "max_iters")
        if not args.out:
            raise UsageError("simulate needs --out")
    elif cmd == "eval":
        if not ((args.truth and args.estimate) or (args.truth_clusters and args.clusters)):
            raise UsageError("eval needs --truth with --estimate, or --truth-clusters with --clusters")
    elif cmd in ("cluster", "export-trajectories"):
        if not args.checkpoint:
            raise UsageError(f"{cmd} needs --checkpoint")
        if not args.out:
            raise UsageError(f"{cmd} needs --out")
        if cmd == "cluster" and (not args.radius or min(args.radius) < 0):
            raise UsageError("cluster needs one or more nonnegative --radius values")
        if cmd == "export-trajectories":
            _positive(args, "grid_points")


# --- helpers ------------------------------------------------------------------

def _threads(args):
    return args.threads or os.cpu_count() or 1


def _write_manifest(out, args, extra=None):
    data = {"version": __version__, "command": args.command,
            "args": {k: v for k, v in vars(args).items() if k not in ("command", "config")}}
    if extra:
        data.update(extra)
    with open(Path(out) / "manifest.json", "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_trajectories(path, ids, traj, grid):
    """``node, t, x1..xd`` rows; floats written with ``repr`` for exact reruns."""
    d = traj.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "t"] + [f"x{k + 1}" for k in range(d)])
        for i, node in enumerate(ids):
            for g, t in enumerate(grid):
                w.writerow([node, repr(float(t))] + [repr(float(x)) for x in traj[i, g]])


def read_trajectories(path):
    """Inverse of :func:`write_trajectories`: ``(ids, grid, array (p, G, d))``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    if header[:2] != ["node", "t"] or len(header) < 3:
        raise ValueError(f"{path}: expected header node,t,x1..xd")
    ids, times, vals = [], [], []
    for row in rows:
        ids.append(row[0])
        times.append(float(row[1]))
        vals.append([float(x) for x in row[2:]])
    uniq = list(dict.fromkeys(ids))
    grid = sorted(set(times))
    if len(rows) != len(uniq) * len(grid):
        raise ValueError(f"{path}: every node needs the same time grid")
    pos = {t: k for k, t in enumerate(grid)}
    idx = {n: k for k, n in enumerate(uniq)}
    out = np.empty((len(uniq), len(grid), len(header) - 2))
    for n, t, v in zip(ids, times, vals):
        out[idx[n], pos[t]] = v
    return uniq, np.array(grid), out


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "loglik", "p_smooth", "p_clust", "elbo"])
        for row in trace:
            w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


# --- subcommands --------------------------------------------------------------

def pipeline_config(args):
    fit = dict(batch_size=args.batch_size, lr=args.lr, xi1=args.xi1, xi2=args.xi2,
               adam_variant=args.adam_variant, patience=args.patience,
               controls_per_case=args.controls_per_case, log_every=args.log_every, seed=args.seed)
    model = ModelConfig(d=args.dim, n_basis=args.n_basis, similarity=args.similarity,
                        propensity=args.propensity, horizon=args.horizon)
    return PipelineConfig(model=model, mode=canonical_mode(args.mode), n_intervals=args.intervals,
                          pilot=FitConfig(n_iter=args.max_iters, **fit),
                          refit=FitConfig(n_iter=args.refit_iters, **fit),
                          radii=sorted(args.radius) if args.radius else None,
                          cluster=not args.no_cluster, nested_depth=args.nested_depth)


def cmd_fit(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    registry, events, loops = load_events(args.input, format=args.format, delimiter=args.delimiter,
                                          horizon=args.horizon, n_intervals=args.intervals)
    if loops:
        log.warning("dropped %d self-loop events", loops)
    cfg = pipeline_config(args)
    _write_manifest(out, args, {"pipeline": cfg.to_dict(), "p": registry.p})
    res = fit_pipeline(events, cfg, registry.static, seed=args.seed)
    model, final = res.model, res.final
    grid = np.linspace(0.0, model.basis.horizon, args.grid_points)
    write_trajectories(out / "trajectories.csv", registry.ids, final.trajectories(model, grid), grid)
    write_clusters(out / "clusters.csv", res.labels, registry.ids)
    trace = np.vstack([res.pilot.trace] + ([final.trace] if final is not res.pilot else []))
    trace[:, 0] = np.arange(len(trace))
    _write_trace(out / "elbo_trace.csv", trace)
    if res.radius_table:
        with open(out / "radius_selection.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["radius", "n_clusters", "elbo"])
            for r, k, e in res.radius_table:
                w.writerow([repr(float(r)), k, repr(float(e))])
    save_checkpoint(out / "checkpoint.npz", final.state, res.cluster,
                    extra={"ids": [str(x) for x in registry.ids], "horizon": model.basis.horizon,
                           "n_basis": model.basis.n_basis,
                           "static": None if model.static is None else [bool(s) for s in model.static]})
    if res.children:
        with open(out / "nested.json", "w") as fh:
            json.dump(res.tree(), fh, default=_json_default)
    n_clusters = int(res.labels.max() + 1)
    print(f"fitted p={registry.p} elbo={final.elbo:.6g} radius={res.radius} clusters={n_clusters}",
          file=sys.stderr)
    return 0


def cmd_simulate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, args)
    if args.experiment == "dataset":
        sc = load_scenario(args.scenario) if args.scenario else ScenarioConfig(seed=args.seed)
        truth, events = generate(sc)
        ids = [str(i) for i in range(sc.p)]
        save_events(out / "events.tsv", NodeRegistry(tuple(ids)), events)
        grid = np.linspace(0.0, sc.T, 50)
        write_trajectories(out / "truth_trajectories.csv", ids, truth.trajectories(grid), grid)
        write_clusters(out / "truth_clusters.csv", truth.labels, ids)
        with open(out / "scenario.json", "w") as fh:
            json.dump(scenario_dict(sc), fh, indent=2, default=_json_default)
        return 0
    settings = presets(args.experiment, scale=args.scale, replicates=args.replicates, n_iter=args.max_iters)
    for s in settings:
        s.scenario = replace(s.scenario, seed=s.scenario.seed + args.seed)
    _, summary = run_experiment(args.experiment, settings, out_dir=out, n_jobs=_threads(args))
    for s in summary:
        print(f"{s['setting']}\tmse_mean={s['mse_mean']:.6g}\tmse_sd={s['mse_sd']:.6g}", file=sys.stderr)
    return 0


def cmd_eval(args):
    result = {}
    if args.truth and args.estimate:
        tid, tgrid, T = read_trajectories(args.truth)
        eid, egrid, E = read_trajectories(args.estimate)
        if len(tid) != len(eid) or set(tid) != set(eid):
            raise UsageError(f"node sets differ: truth has {len(tid)} nodes, estimate {len(eid)}")
        if T.shape[1:] != E.shape[1:] or not np.allclose(tgrid, egrid):
            raise UsageError("truth and estimate use different time grids or dimensions")
        order = [eid.index(n) for n in tid]
        result["mse"] = procrustes_mse(E[order], T)
    if args.truth_clusters and args.clusters:
        tid, tl = read_clusters(args.truth_clusters)
        eid, el = read_clusters(args.clusters)
        if len(tid) != len(eid) or set(tid) != set(eid):
            raise UsageError("cluster files cover different nodes")
        pos = {n: k for k, n in enumerate(eid)}
        result["accuracy"] = clustering_accuracy(el[[pos[n] for n in tid]], tl)
    for k, v in result.items():
        print(f"{k}\t{v!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, args)
        with open(out / "eval.json", "w") as fh:
            json.dump(result, fh, indent=2)
    return 0


def _checkpoint_ids(header, p):
    ids = header.get("ids")
    return ids if ids is not None else [str(i) for i in range(p)]


def cmd_cluster(args):
    state, cstate, header = load_checkpoint(args.checkpoint)
    if cstate is not None and not args.use_mean:
        alpha = cstate.alpha_plus
    else:
        alpha = state.z_mu()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, args)
    sweep = radius_sweep(alpha, sorted(args.radius))
    write_sweep(out / "sweep.csv", sweep)
    ids = _checkpoint_ids(header, alpha.shape[0])
    for r, labels, k in sweep:
        write_clusters(out / f"clusters_r{r:g}.csv", labels, ids)
        print(f"radius={r:g}\tclusters={k}", file=sys.stderr)
    return 0


def cmd_export(args):
    state, _, header = load_checkpoint(args.checkpoint)
    basis = SplineBasis(header.get("n_basis", header["m"]), header.get("horizon", 1.0))
    static = header.get("static")
    grid = np.linspace(0.0, basis.horizon, args.grid_points)
    traj = trajectories(basis, state.z_mu(), grid, None if static is None else np.asarray(static))
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, args)
        out = out / "trajectories.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectories(out, _checkpoint_ids(header, state.template.shape[0]), traj, grid)
    return 0


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "eval": cmd_eval,
            "cluster": cmd_cluster, "export-trajectories": cmd_export}


def main(argv=None):
    parser, args = parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        validate(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"latentrem: error: {exc}", file=sys.stderr)
        return 2
    except (EventFormatError, ValueError, TypeError, OSError, KeyError,
            FloatingPointError, OverflowError, RuntimeError) as exc:
        print(f"latentrem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
