"""Command-line entry point.

Subcommands::

    conjoined simulate  --case 2 --seed 7 --out-dir sim/
    conjoined fit       sim/matrix.mtx --config configs/simulation.json --out-dir fit/
    conjoined extract   fit/model.json --tau-theta 0.5 --out-dir fit/
    conjoined score     fit/biclusters.json sim/truth.json
    conjoined benchmark --cases 1 2 3 4 --n-seeds 10 --workers 4 --out-dir bench/

Log verbosity follows the ``CDP_LOG_LEVEL`` environment variable
(default ``INFO``). Exit status is 0 when every requested run completed.
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bicluster import Bicluster, load_biclusters, save_biclusters
from .cdp import (CdpModel, extract_biclusters, fit_cdp, normalization_error)
from .config import ORIENTATIONS, RunConfig, derive_seeds, load_config
from .countmat import (CountMatrixError, load_matrix, preprocess, transpose,
                       write_dense_csv, write_matrix_market)
from .evaluate import RunResult, benchmark_report, jaccard_score, write_report
from .synth import SynthSpec, case_presets, simulate

log = logging.getLogger("conjoined")

# skip PNG heatmaps above this many cells
MAX_HEATMAP_CELLS = 20_000_000


def setup_logging(log_file=None):
    name = os.environ.get("CDP_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    bad = not isinstance(level, int)
    if bad:
        level = logging.INFO
    root = logging.getLogger("conjoined")
    root.setLevel(level)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(fmt)
    root.addHandler(h)
    if log_file is not None:
        fh = logging.FileHandler(log_file, mode="w")
        fh.setFormatter(fmt)
        root.addHandler(fh)
    root.propagate = False
    if bad:
        root.warning("unknown CDP_LOG_LEVEL %r, using INFO", name)


def _set_threads(n):
    import numba
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolve_config(args):
    """Config file plus command-line overrides."""
    cfg = load_config(args.config)
    if getattr(args, "orientation", None):
        cfg.orientation = args.orientation
    if getattr(args, "serial", False):
        cfg.sweep_mode = "serial"
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [int(args.seed)]
    return cfg


# ---------------------------------------------------------------- fitting

def prepare_matrix(m, orientation="rows-are-parts", merge_duplicate_labels=False):
    """Orient and preprocess ``m``; returns the matrix and the index maps back
    to the input (``None`` where rows were merged by label)."""
    if orientation == "rows-are-composites":
        m = transpose(m)
    row_index = np.flatnonzero(m.row_sums() > 0)
    col_index = np.flatnonzero(m.col_sums() > 0)
    merged = merge_duplicate_labels and m.row_labels is not None
    out = preprocess(m, merge_duplicate_labels=merge_duplicate_labels)
    source = {"orientation": orientation, "shape": [int(m.n_rows), int(m.n_cols)]}
    if orientation == "rows-are-composites":
        source["shape"] = source["shape"][::-1]
    source["row_index"] = None if merged else row_index.tolist()
    source["col_index"] = col_index.tolist()
    return out, source


def to_input_frame(biclusters, source):
    """Map biclusters from model indices back to the input file's rows and columns."""
    if not source:
        return list(biclusters)
    ri, ci = source.get("row_index"), source.get("col_index")
    out = []
    for b in biclusters:
        rows = b.rows if ri is None else [ri[r] for r in b.rows]
        cols = b.cols if ci is None else [ci[c] for c in b.cols]
        nb = Bicluster(rows, cols, b.weight, b.topic_pair)
        out.append(nb.transposed() if source.get("orientation") == "rows-are-composites"
                   else nb)
    return out


def run_fit(m, cfg: RunConfig, seed, workers=1, debug=False, source=None):
    """Fit a prepared matrix with derived seeds; returns the fit and its biclusters
    (in the input frame)."""
    s_r, s_c, s_t = derive_seeds(seed)
    cfg_r = replace(cfg.rows, seed=s_r, workers=workers)
    cfg_c = replace(cfg.cols, seed=s_c, workers=workers)
    log.info("seed %d -> rows %d, cols %d, tokens %d", seed, s_r, s_c, s_t)
    fit = fit_cdp(m, cfg_r, cfg_c, cfg.cdp, seed=s_t, mode=cfg.sweep_mode,
                  workers=workers, debug=debug)
    fit.model.seeds["run"] = int(seed)
    if source is not None:
        fit.model.source = source
    s = time.perf_counter()
    bics = to_input_frame(extract_biclusters(fit.model, cfg.cdp), fit.model.source)
    fit.timings["extract"] = time.perf_counter() - s
    return fit, bics


def _write_fit(out, fit, bics, cfg, dense=None, thin=1, plots=True):
    fit.model.save(out / "model.json")
    save_biclusters(bics, out / "biclusters.json")
    fit.trace_r.to_csv(out / "trace_rows_labels.csv", out / "trace_rows_K.csv", thin=thin)
    fit.trace_c.to_csv(out / "trace_cols_labels.csv", out / "trace_cols_K.csv", thin=thin)
    (out / "timings.json").write_text(json.dumps(fit.timings, indent=1, sort_keys=True) + "\n")
    if plots:
        from .plotting import plot_heatmap, plot_k_traces
        plot_k_traces({"rows": fit.trace_r.n_clusters, "cols": fit.trace_c.n_clusters},
                      out / "k_trace.png")
        if dense is not None and dense.size <= MAX_HEATMAP_CELLS:
            plot_heatmap(dense, out / "heatmap.png", bics, title="biclusters")


def cmd_fit(args):
    cfg = resolve_config(args)
    cfg.input = str(args.matrix)
    out = _out_dir(args)
    cfg.out_dir = str(out)
    setup_logging(out / "fit.log")
    workers = 1 if args.serial else args.workers
    _set_threads(workers)
    raw = load_matrix(args.matrix, has_labels=args.labels)
    log.info("loaded %s: %dx%d, %d nonzeros, total %d", args.matrix, raw.n_rows,
             raw.n_cols, raw.nnz, raw.total)
    m, source = prepare_matrix(raw, cfg.orientation, args.merge_duplicates)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    fit, bics = run_fit(m, cfg, cfg.seeds[0], workers, args.debug, source)
    for k, v in sorted(fit.timings.items()):
        log.info("timing %s: %.3f s", k, v)
    dense = raw.to_dense() if raw.n_rows * raw.n_cols <= MAX_HEATMAP_CELLS else None
    _write_fit(out, fit, bics, cfg, dense, cfg.trace_thin, not args.no_plots)
    log.info("K_r=%d K_c=%d, %d bicluster(s) written to %s", fit.model.K_r,
             fit.model.K_c, len(bics), out)
    return 0


def cmd_extract(args):
    out = _out_dir(args)
    setup_logging()
    model = CdpModel.load(args.model)
    from .cdp import CdpHyper
    hyper = CdpHyper(**model.hyper.get("cdp", {}))
    over = {k: v for k, v in (("tau_theta", args.tau_theta), ("tau_row", args.tau_row),
                              ("tau_col", args.tau_col)) if v is not None}
    hyper = replace(hyper, **over)
    bics = to_input_frame(extract_biclusters(model, hyper), model.source)
    save_biclusters(bics, out / args.name)
    log.info("%d bicluster(s) written to %s", len(bics), out / args.name)
    return 0


def cmd_score(args):
    est = load_biclusters(args.estimated)
    truth = load_biclusters(args.truth)
    score = jaccard_score(est, truth)
    out = _out_dir(args)
    doc = {"jaccard": score, "estimated": str(args.estimated), "truth": str(args.truth),
           "n_estimated": len(est), "n_truth": len(truth)}
    (out / "score.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(repr(score))
    return 0


# ------------------------------------------------------------- simulation

def _load_spec(path, seed):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        d = json.loads(path.read_text())
        return SynthSpec(R=d["R"], C=d["C"], N=d["N"], p=d["p"],
                         blocks=[tuple(map(tuple, b)) for b in d.get("blocks", [])],
                         seed=seed if seed is not None else d.get("seed", 0))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"{path}: invalid simulation spec: {exc}") from None


def _spec_dict(spec):
    return {"R": spec.R, "C": spec.C, "N": spec.N, "p": spec.p,
            "blocks": [list(map(list, b)) for b in spec.blocks], "seed": spec.seed}


def cmd_simulate(args):
    out = _out_dir(args)
    setup_logging()
    seed = 0 if args.seed is None else args.seed
    spec = case_presets(args.case, seed) if args.case is not None else _load_spec(args.spec, args.seed)
    m, truth = simulate(spec)
    if args.format == "csv":
        write_dense_csv(m, out / "matrix.csv")
    else:
        write_matrix_market(m, out / "matrix.mtx")
    save_biclusters(truth, out / "truth.json")
    (out / "spec.json").write_text(json.dumps(_spec_dict(spec), indent=1) + "\n")
    log.info("simulated %dx%d matrix, total %d, %d block(s), seed %d", spec.R, spec.C,
             m.total, len(truth), spec.seed)
    return 0


# -------------------------------------------------------------- benchmark

def _init_worker(level):
    os.environ["CDP_LOG_LEVEL"] = level
    setup_logging()
    _set_threads(1)


def bench_one(case, seed, cfg_doc, run_dir, workers=1, plots=True):
    """One simulate -> fit -> extract -> score run; failures score 0."""
    from .config import config_from_dict
    from .plotting import plot_heatmap, write_pgm
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        cfg = config_from_dict(cfg_doc)
        spec = case_presets(case, seed)
        m, truth = simulate(spec)
        dense = m.to_dense()
        write_dense_csv(m, run_dir / "heatmap.csv")
        write_pgm(dense, run_dir / "heatmap.pgm")
        save_biclusters(truth, run_dir / "truth.json")
        prepared, source = prepare_matrix(m, "rows-are-parts")
        fit, bics = run_fit(prepared, cfg, seed, workers, source=source)
        runtime = time.perf_counter() - t0
        fit.model.save(run_dir / "model.json")
        save_biclusters(bics, run_dir / "biclusters.json")
        if plots:
            plot_heatmap(dense, run_dir / "heatmap.png", bics, truth,
                         title=f"case {case}, seed {seed}")
        return RunResult(str(case), "CDP", int(seed), jaccard_score(bics, truth), runtime,
                         len(bics), normalization_error(fit.model))
    except Exception as exc:  # recorded, not raised: one bad run must not sink the batch
        logging.getLogger("conjoined").exception("case %s seed %s failed", case, seed)
        return RunResult(str(case), "CDP", int(seed), 0.0, time.perf_counter() - t0,
                         failed=True, error=f"{type(exc).__name__}: {exc}")


def cmd_benchmark(args):
    cfg = resolve_config(args)
    out = _out_dir(args)
    setup_logging(out / "benchmark.log")
    if args.seeds is not None:
        seeds = list(args.seeds)
    elif args.n_seeds is not None:
        seeds = list(range(args.n_seeds))
    else:
        seeds = cfg.seeds
    cfg.seeds = seeds
    cfg.out_dir = str(out)
    doc = cfg.to_dict()
    (out / "config.json").write_text(json.dumps(doc, indent=1) + "\n")
    jobs = [(c, s, doc, out / "runs" / f"case{c}" / f"seed{s}") for c in args.cases
            for s in seeds]
    plots = not args.no_plots
    log.info("benchmark: cases %s, seeds %s, %d run(s)", args.cases, seeds, len(jobs))
    if args.workers > 1 and not args.serial:
        level = logging.getLevelName(logging.getLogger("conjoined").level)
        # spawn, not fork: the parent may already hold an OpenMP runtime
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=args.workers, mp_context=ctx,
                                 initializer=_init_worker, initargs=(level,)) as pool:
            futures = [pool.submit(bench_one, *j, 1, plots) for j in jobs]
            results = [f.result() for f in futures]
    else:
        _set_threads(1)
        results = [bench_one(*j, 1, plots) for j in jobs]
    for r in results:
        log.info("case %s seed %d: jaccard %.4f, %d bicluster(s), %.2f s%s", r.case, r.seed,
                 r.jaccard, r.n_biclusters, r.runtime_s, " FAILED" if r.failed else "")
    rows = benchmark_report(results)
    write_report(rows, results, out / "report.csv", out / "report.json")
    if plots:
        from .plotting import plot_benchmark
        plot_benchmark(rows, out / "benchmark.png")
    print("case,method,seeds,mean_jaccard,sd_jaccard,mean_runtime_s")
    for r in rows:
        print(f"{r['case']},{r['method']},{r['seeds']},{r['mean_jaccard']:.4f},"
              f"{r['sd_jaccard']:.4f},{r['mean_runtime_s']:.2f}")
    failed = sum(r.failed for r in results)
    if failed:
        log.error("%d of %d run(s) failed", failed, len(results))
        return 1
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="run seed (overrides config)")
    common.add_argument("--workers", type=int, default=1, help="parallel workers")
    common.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--orientation", choices=ORIENTATIONS, default=None,
                        help="which matrix axis holds the parts (default: config)")
    common.add_argument("--serial", action="store_true",
                        help="exact sequential token sweeps, one worker")

    parser = argparse.ArgumentParser(prog="conjoined",
                                     description="Nonparametric biclustering of count matrices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sample a planted-bicluster matrix")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--case", type=int, choices=[1, 2, 3, 4])
    g.add_argument("--spec", type=Path, help="JSON design with R, C, N, p, blocks")
    p.add_argument("--format", choices=["mtx", "csv"], default="mtx")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit a count matrix")
    p.add_argument("matrix", type=Path, help="MatrixMarket (.mtx) or CSV count matrix")
    p.add_argument("--labels", action="store_true",
                   help="CSV has a header row and a leading label column")
    p.add_argument("--merge-duplicates", action="store_true",
                   help="sum rows that share a label")
    p.add_argument("--debug", action="store_true",
                   help="check sufficient statistics after every update")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("extract", parents=[common], help="re-extract biclusters from a model")
    p.add_argument("model", type=Path)
    p.add_argument("--tau-theta", type=float, default=None)
    p.add_argument("--tau-row", type=float, default=None)
    p.add_argument("--tau-col", type=float, default=None)
    p.add_argument("--name", default="biclusters.json", help="output file name")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("score", parents=[common], help="Jaccard score of two bicluster files")
    p.add_argument("estimated", type=Path)
    p.add_argument("truth", type=Path)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("benchmark", parents=[common], help="simulate, fit and score over seeds")
    p.add_argument("--cases", type=int, nargs="+", choices=[1, 2, 3, 4], default=[1, 2, 3, 4])
    s = p.add_mutually_exclusive_group()
    s.add_argument("--seeds", type=int, nargs="+", default=None, help="explicit seed list")
    s.add_argument("--n-seeds", type=int, default=None, help="use seeds 0..n-1")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (FileNotFoundError, CountMatrixError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
