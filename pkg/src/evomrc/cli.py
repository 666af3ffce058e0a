"""Command-line entry point: ``evomrc {run,ess,diag,convert}``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata

import numpy as np

from . import config as cfgmod
from . import ess as essmod
from .datagen import CsvTaskSpec, HyperplaneStream, gen_hyperplane, ingest_csv, rep_rng, subsample
from .errors import ConfigError, EvoMRCError, InputError
from .features import FeatureMap, identity_embedding, rff_embedding
from .mrc import UncertaintySpec, dump_model, error_bound
from .scenarios import ScenarioConfig, run_cl, run_mda, run_mtl, run_scd
from .task_stats import moments, pacf

log = logging.getLogger("evomrc")

RESULTS_SCHEMA = 1
RESULT_COLUMNS = ["rep", "j", "k", "horizon", "n_j", "error_prob", "error_det", "R", "bound", "ess"]
DRIVERS = {"mda": run_mda, "mtl": run_mtl, "scd": run_scd, "cl": run_cl}


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in r.items()})


# data and features -------------------------------------------------------------


def _hyper_spec(c):
    return HyperplaneStream(c["dim"], c["mode"], c["angle"], c["sigma_w"], c["multi"], c["k"], c["n"],
                            c["n_test"], c["seed"], c["initial_angle"])


def _csv_spec(c):
    feats = tuple(f.strip() for f in c["feature_columns"].split(",") if f.strip()) or None
    return CsvTaskSpec(c["csv_path"], c["label_column"], c["task_column"] or None, c["segment_size"], feats,
                       c["test_per_task"], seed=c["seed"])


def _load_rep(c, rep, pool=None):
    """Task sequence (and hyperplane oracle, if synthetic) for one repetition."""
    if c["data"] == "hyperplane":
        return gen_hyperplane(_hyper_spec(c), rep)
    seq = pool if pool is not None else ingest_csv(_csv_spec(c))
    if c["n"] > 0:
        seq = subsample(seq, c["n"], rep_rng(c["seed"], rep))
    return seq, None


def _feature_map(c, seq):
    if c["embedding"] == "rff":
        emb = rff_embedding(seq.input_dim, 2 * c["rff_features"], c["rff_sigma2"], c["rff_seed"])
        return FeatureMap(emb, seq.n_labels)
    fm = FeatureMap(identity_embedding(seq.input_dim), seq.n_labels)
    return fm.with_bound_from(np.concatenate([t.X for t in seq.tasks]))


def _scenario_cfg(c):
    return ScenarioConfig(c["lambda0"], c["W"], c["b"], c["order"], c["K"], c["K_warm"], c["restarts"], c["anchors"],
                          c["d_mode"], c["d_init"], beta=c["beta"], warm_guard=c["warm_guard"])


def _run_chunk(args):
    """Run repetitions ``reps`` in lockstep; returns result rows and model snapshots."""
    c, reps = args
    pool = ingest_csv(_csv_spec(c)) if c["data"] == "csv" else None
    loaded = [_load_rep(c, r, pool) for r in reps]
    seqs = [s for s, _ in loaded]
    # the bound of an identity map is taken from repetition 0 so it does not depend on chunking
    fmap = _feature_map(c, seqs[0] if reps[0] == 0 else _load_rep(c, 0, pool)[0])
    results = DRIVERS[c["scenario"]](seqs, fmap, _scenario_cfg(c))
    rows, models = [], {}
    for rep, (seq, oracle), res in zip(reps, loaded, results):
        for rec in res.records:
            bound = float("nan")
            if oracle is not None and c["oracle_mc"] > 0 and rec.model.mu.size and np.all(np.isfinite(rec.tau)):
                tau_inf = oracle.tau_inf(fmap, rec.j, c["oracle_mc"], seed=c["seed"] + 7919 * rec.j)
                bound = error_bound(rec.model, UncertaintySpec(rec.tau, rec.lam), tau_inf).certified
            rows.append({"rep": rep, "j": rec.j, "k": rec.k, "horizon": rec.horizon, "n_j": rec.n_j,
                         "error_prob": rec.error_prob, "error_det": rec.error_det, "R": rec.model.minimax_risk,
                         "bound": bound, "ess": rec.ess})
        if c["save_models"]:
            for j, rec in res.final().items():
                models[f"rep{rep}_task{j}.json"] = dump_model(rec.model, fmap)
    return rows, models


def cmd_run(c: dict) -> int:
    out = c["output"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    reps = list(range(c["reps"]))
    workers = max(1, min(c["workers"], len(reps)))
    chunks = [reps[i::workers] for i in range(workers)]
    if workers == 1:
        parts = [_run_chunk((c, chunks[0]))]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [(c, ch) for ch in chunks]))
    rows = sorted((r for p, _ in parts for r in p), key=lambda r: (r["rep"], r["k"], r["j"]))
    _write_csv(os.path.join(out, "results.csv"), rows, RESULT_COLUMNS)
    files = ["results.csv"]
    if c["save_models"]:
        mdir = os.path.join(out, "models")
        os.makedirs(mdir, exist_ok=True)
        for _, models in parts:
            for name, text in sorted(models.items()):
                with open(os.path.join(mdir, name), "w") as fh:
                    fh.write(text)
        files.append("models/")
    if c["plots"]:
        from .plotting import plot_results

        final = {}
        for r in rows:
            final[(r["rep"], r["j"])] = r
        plot_results(list(final.values()), os.path.join(out, "results.png"), c["scenario"])
        files.append("results.png")
    manifest = {
        "format": "evomrc-run",
        "results_schema": RESULTS_SCHEMA,
        "results_columns": RESULT_COLUMNS,
        "version": _version(),
        "config": c,
        "seed": c["seed"],
        "files": files,
        "timings": {"total_seconds": time.perf_counter() - t0},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    log.info("wrote %d rows to %s", len(rows), out)
    return 0


def cmd_ess(ns, d_min, d_max, d_points, j, k, windows, out, plots=True) -> int:
    if not 1 <= j <= k:
        raise ConfigError("need 1 <= j <= k")
    if not 0 < d_min <= d_max:
        raise ConfigError("need 0 < d_min <= d_max")
    os.makedirs(out, exist_ok=True)
    rows = []
    for n in ns:
        for d in np.geomspace(d_min, d_max, d_points):
            rep = essmod.ess_report(float(n), float(d), j, k, windows)
            row = {"n": float(n), "d": float(d), "nd": float(n * d), "j": j, "k": k,
                   "ess_forward": rep.forward, "ess_combined": rep.combined,
                   "bound_forward": rep.lower_bound_forward, "bound_combined": rep.lower_bound_combined,
                   "regime": rep.regime, "regime_bound_forward": rep.regime_bound_forward,
                   "regime_bound_combined": rep.regime_bound_combined}
            row.update(rep.windows)
            rows.append(row)
    _write_csv(os.path.join(out, "ess.csv"), rows, list(rows[0].keys()))
    if plots:
        from .plotting import plot_ess

        plot_ess(rows, os.path.join(out, "ess.png"))
    return 0


def cmd_diag(c: dict, max_lag: int, out: str, plots=True) -> int:
    os.makedirs(out, exist_ok=True)
    seq, _ = _load_rep(c, 0)
    fmap = _feature_map(c, seq)
    taus = np.array([moments(t.X, t.y, fmap, j + 1).tau for j, t in enumerate(seq.tasks)])
    if taus.shape[0] <= max_lag + 1:
        raise ConfigError(f"diagnostics need more than {max_lag + 1} tasks, got {taus.shape[0]}")
    curves = [pacf(taus[:, i], max_lag) for i in range(taus.shape[1]) if np.ptp(taus[:, i]) > 0]
    if not curves:
        raise InputError("all mean components are constant across tasks")
    P = np.array(curves)
    rows = [{"lag": h + 1, "mean": float(P[:, h].mean()), "std": float(P[:, h].std()), "n_components": len(curves)}
            for h in range(max_lag)]
    _write_csv(os.path.join(out, "pacf.csv"), rows, ["lag", "mean", "std", "n_components"])
    if plots:
        from .plotting import plot_pacf

        plot_pacf(rows, os.path.join(out, "pacf.png"), T=taus.shape[0])
    return 0


def cmd_convert(src, dst, segment_size, task_column="task") -> int:
    """Append a task column numbering consecutive segments of ``segment_size`` rows."""
    if segment_size < 1:
        raise ConfigError("segment size must be at least 1")
    try:
        with open(src, newline="") as fh, open(dst, "w", newline="") as gh:
            reader, writer = csv.reader(fh), csv.writer(gh)
            header = next(reader, None)
            if header is None:
                raise InputError(f"{src}: empty file")
            if task_column in header:
                raise InputError(f"{src}: already has a column named {task_column!r}")
            writer.writerow(header + [task_column])
            r = 0
            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise InputError(f"line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
                writer.writerow(row + [r // segment_size + 1])
                r += 1
    except OSError as exc:
        raise InputError(str(exc)) from None
    return 0


# argument parsing ----------------------------------------------------------------


def _overrides(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser():
    ap = argparse.ArgumentParser(prog="evomrc", description="Minimax risk classifiers for evolving tasks")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write results.csv and manifest.json")
    r.add_argument("config", nargs="?", help="key=value file or a previous manifest.json")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    r.add_argument("--output", help="output directory")
    r.add_argument("--workers", type=int, help="worker processes for repetitions")
    r.add_argument("--no-plots", action="store_true")

    e = sub.add_parser("ess", help="effective sample size grid")
    e.add_argument("--n", type=float, nargs="+", default=[10.0, 100.0])
    e.add_argument("--d-min", type=float, default=1e-4)
    e.add_argument("--d-max", type=float, default=1.0)
    e.add_argument("--d-points", type=int, default=25)
    e.add_argument("--j", type=int, default=50)
    e.add_argument("--k", type=int, default=100)
    e.add_argument("--windows", type=int, nargs="*", default=[5, 25, 45])
    e.add_argument("--output")
    e.add_argument("--no-plots", action="store_true")

    d = sub.add_parser("diag", help="partial autocorrelation of mean-vector components")
    d.add_argument("config", nargs="?")
    d.add_argument("--set", action="append", metavar="KEY=VALUE")
    d.add_argument("--max-lag", type=int, default=10)
    d.add_argument("--output")
    d.add_argument("--no-plots", action="store_true")

    c = sub.add_parser("convert", help="add a task column to a CSV by consecutive segments")
    c.add_argument("src")
    c.add_argument("dst")
    c.add_argument("--segment-size", type=int, default=300)
    c.add_argument("--task-column", default="task")
    return ap


def _resolved(args):
    file_vals = cfgmod.load_file(args.config) if args.config else {}
    ov = _overrides(args.set)
    if getattr(args, "output", None):
        ov["output"] = args.output
    if getattr(args, "workers", None):
        ov["workers"] = args.workers
    if getattr(args, "no_plots", False):
        ov["plots"] = False
    return cfgmod.resolve(file_vals, ov)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(_resolved(args))
        if args.command == "ess":
            out = args.output or os.environ.get(cfgmod.OUTPUT_ENV) or "ess"
            return cmd_ess(args.n, args.d_min, args.d_max, args.d_points, args.j, args.k, args.windows, out,
                           not args.no_plots)
        if args.command == "diag":
            c = _resolved(args)
            return cmd_diag(c, args.max_lag, args.output or c["output"], not args.no_plots)
        return cmd_convert(args.src, args.dst, args.segment_size, args.task_column)
    except (ConfigError, InputError) as exc:
        print(f"evomrc: error: {exc}", file=sys.stderr)
        return 1
    except EvoMRCError as exc:
        print(f"evomrc: runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort diagnostic
        print(f"evomrc: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
