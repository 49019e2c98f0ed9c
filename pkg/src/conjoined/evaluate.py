"""Bicluster similarity scoring and benchmark reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bicluster import Bicluster, load_biclusters  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["case", "method", "seeds", "mean_jaccard", "sd_jaccard", "mean_runtime_s"]


def _cells(x):
    return x.cells() if isinstance(x, Bicluster) else set(x)


def jaccard_pair(a, b):
    """``|a ∩ b| / |a ∪ b|`` of two cell sets (or biclusters); 0 when both are empty."""
    if isinstance(a, Bicluster) and isinstance(b, Bicluster):
        inter = (len(set(a.rows) & set(b.rows))) * (len(set(a.cols) & set(b.cols)))
        union = a.size + b.size - inter
        return inter / union if union else 0.0
    a, b = _cells(a), _cells(b)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def _pair_matrix(B1, B2):
    return np.array([[jaccard_pair(a, b) for b in B2] for a in B1], dtype=float)


def jaccard_score(B1: Sequence, B2: Sequence):
    """Similarity of two bicluster sets.

    Each bicluster is matched to its best counterpart in the other set; the
    score is the smaller of the two directed averages of those best
    matches. An empty set scores 0.
    """
    if len(B1) == 0 or len(B2) == 0:
        log.warning("jaccard_score: empty bicluster set, scoring 0")
        return 0.0
    J = _pair_matrix(B1, B2)
    # fsum is exactly rounded, so the score does not depend on set order
    fwd = math.fsum(J.max(axis=1)) / J.shape[0]
    back = math.fsum(J.max(axis=0)) / J.shape[1]
    return float(min(fwd, back))


@dataclass
class RunResult:
    case: str
    method: str
    seed: int
    jaccard: float
    runtime_s: float
    n_biclusters: int = 0
    # largest deviation from 1 among the fitted model's normalization sums
    norm_error: float = 0.0
    failed: bool = False
    error: str = ""


def benchmark_report(results: Iterable[RunResult]):
    """Aggregate runs into one row per (case, method).

    Rows carry the seed count, mean and sample standard deviation of the
    Jaccard scores (0 for a single seed), mean wall-clock time and the
    number of failed runs. Row order is sorted, independent of input order.
    """
    results = list(results)
    if not results:
        raise ValueError("nothing to report")
    groups = {}
    for r in results:
        groups.setdefault((str(r.case), str(r.method)), []).append(r)
    rows = []
    for (case, method), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.seed)
        j = np.array([r.jaccard for r in rs], dtype=float)
        rows.append({"case": case, "method": method, "seeds": len(rs),
                     "mean_jaccard": float(j.mean()),
                     "sd_jaccard": float(j.std(ddof=1)) if j.size > 1 else 0.0,
                     "mean_runtime_s": float(np.mean([r.runtime_s for r in rs])),
                     "failures": int(sum(r.failed for r in rs))})
    return rows


def write_report(rows, results, csv_path=None, json_path=None):
    """Write report rows as CSV (fixed columns) and, with per-run detail, JSON."""
    if csv_path is not None:
        with Path(csv_path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore",
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    if json_path is not None:
        runs = sorted((asdict(r) for r in results),
                      key=lambda r: (str(r["case"]), r["method"], r["seed"]))
        Path(json_path).write_text(json.dumps({"summary": rows, "runs": runs}, indent=1) + "\n")
