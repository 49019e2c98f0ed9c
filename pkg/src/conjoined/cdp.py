"""Conjoined Dirichlet process biclustering.

Fitting runs one DP mixture over the rows and one over the columns of a
count matrix, takes the modal partition of each as initial row and column
topics, and then refines every token's (row-topic, column-topic) pair with
Gibbs sweeps whose conditionals couple the two sides through the joint
topic-pair counts. The fitted model gives per-topic distributions over rows
(``phi_r``) and columns (``phi_c``) and a joint distribution ``theta`` over
topic pairs, from which heavy biclusters are read off.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .bicluster import Bicluster
from .countmat import SparseCountMatrix, TokenTable, to_tokens, transpose
from .dpmm import AssignmentTrace, DpmmConfig, run_dpmm

log = logging.getLogger(__name__)

# prefer OpenMP: probing an outdated system TBB only produces a warning
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp"


@dataclass
class CdpHyper:
    alpha_r: float = 0.0
    alpha_c: float = 0.0
    lam: float = 0.0
    iter_u: int = 20
    tau_theta: float = 0.5
    tau_row: float = 0.2
    tau_col: float = 0.2
    # "final": count tables from the last sweep; "mean": averaged over sweeps
    count_source: str = "final"

    def __post_init__(self):
        for name in ("alpha_r", "alpha_c", "lam"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if int(self.iter_u) < 1:
            raise ValueError("iter_u must be a positive integer")
        for name in ("tau_theta", "tau_row", "tau_col"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.count_source not in ("final", "mean"):
            raise ValueError("count_source must be 'final' or 'mean'")

    def to_dict(self):
        return asdict(self)


@dataclass
class CountTables:
    """Token count tables: per row and topic, per column and topic, per topic pair."""

    count_r: np.ndarray      # n_R x K_r
    count_c: np.ndarray      # n_C x K_c
    count_joint: np.ndarray  # K_r x K_c

    @classmethod
    def from_tokens(cls, tokens, K_r, K_c):
        cr = np.zeros((tokens.n_rows, K_r), dtype=np.int64)
        cc = np.zeros((tokens.n_cols, K_c), dtype=np.int64)
        cj = np.zeros((K_r, K_c), dtype=np.int64)
        np.add.at(cr, (tokens.row_of, tokens.zr), 1)
        np.add.at(cc, (tokens.col_of, tokens.zc), 1)
        np.add.at(cj, (tokens.zr, tokens.zc), 1)
        return cls(cr, cc, cj)

    def copy(self):
        return CountTables(self.count_r.copy(), self.count_c.copy(), self.count_joint.copy())

    def without(self, tokens, t):
        """Tables with token ``t``'s contribution removed."""
        out = self.copy()
        n, m, i, j = tokens.row_of[t], tokens.col_of[t], tokens.zr[t], tokens.zc[t]
        out.count_r[n, i] -= 1
        out.count_c[m, j] -= 1
        out.count_joint[i, j] -= 1
        return out


def map_k(trace, burn_in_fraction=0.5):
    """Modal cluster count after burn-in and a representative labelling.

    Ties go to the smaller count. The labelling is the last post-burn-in
    iteration with the modal count, relabelled to ``0..K-1`` in order of
    first appearance.
    """
    n_iter = len(trace)
    start = int(np.floor(burn_in_fraction * n_iter))
    ks = np.asarray(trace.n_clusters[start:])
    if ks.size == 0:
        raise ValueError("no iterations left after burn-in")
    values, freq = np.unique(ks, return_counts=True)
    K = int(values[np.argmax(freq)])  # unique() sorts, argmax takes the first: smaller K
    last = start + int(np.flatnonzero(ks == K)[-1])
    z = np.asarray(trace.labels[last])
    _, first = np.unique(z, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=np.int64)
    remap[np.unique(z)[order]] = np.arange(order.size)
    return K, remap[np.searchsorted(np.unique(z), z)]


def init_token_assignments(tokens, z_r, z_c):
    """Set each token's topics from its row's and column's cluster labels."""
    z_r = np.asarray(z_r, dtype=np.int64)
    z_c = np.asarray(z_c, dtype=np.int64)
    if z_r.size != tokens.n_rows:
        raise ValueError(f"row labels cover {z_r.size} rows, matrix has {tokens.n_rows}")
    if z_c.size != tokens.n_cols:
        raise ValueError(f"column labels cover {z_c.size} columns, matrix has {tokens.n_cols}")
    out = tokens.copy()
    out.zr = z_r[tokens.row_of].copy()
    out.zc = z_c[tokens.col_of].copy()
    return out


def _normalize(w, what):
    s = w.sum()
    if s <= 0:
        log.warning("%s: all-zero conditional, using uniform", what)
        return np.full(w.size, 1.0 / w.size)
    return w / s


def conditional_zc(col, zr, counts, hyper):
    """Column-topic conditional of a token at column ``col`` with row-topic ``zr``.

    ``counts`` must exclude the token itself. ``p(j)`` is proportional to
    ``(C_mj + α_c) / (Σ_m' C_m'j + n_C α_c) * (C_{zr,j} + λ)``; a topic
    whose denominator vanishes contributes ``1 / n_C`` as its first factor.
    """
    cc = counts.count_c
    n_c = cc.shape[0]
    den = cc.sum(axis=0) + n_c * hyper.alpha_c
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(den > 0, (cc[col] + hyper.alpha_c) / den, 1.0 / n_c)
    return _normalize(phi * (counts.count_joint[zr] + hyper.lam), "conditional_zc")


def conditional_zr(row, zc, counts, hyper):
    """Row-topic conditional of a token at row ``row`` with column-topic ``zc``.

    Mirror image of :func:`conditional_zc` with ``α_r`` and ``n_R``.
    """
    cr = counts.count_r
    n_r = cr.shape[0]
    den = cr.sum(axis=0) + n_r * hyper.alpha_r
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(den > 0, (cr[row] + hyper.alpha_r) / den, 1.0 / n_r)
    return _normalize(phi * (counts.count_joint[:, zc] + hyper.lam), "conditional_zr")


# Token sweep kernels, written once for both sides. For the row-topic pass
# ``owner`` is each token's row, ``z`` its row-topic, ``other`` its (fixed)
# column-topic and ``table`` the row x topic counts; the column-topic pass
# swaps the roles and uses the transposed joint table.

@numba.njit(cache=True, nogil=True)
def _cond(p, own_counts, tot, joint_row, alpha, n_own, lam):  # pragma: no cover
    K = p.size
    s = 0.0
    for k in range(K):
        den = tot[k] + n_own * alpha
        phi = (own_counts[k] + alpha) / den if den > 0 else 1.0 / n_own
        p[k] = phi * (joint_row[k] + lam)
        s += p[k]
    return s


@numba.njit(cache=True, nogil=True)
def _draw(p, s, u):  # pragma: no cover
    K = p.size
    if s <= 0.0:
        return min(int(u * K), K - 1), 1
    target = u * s
    acc = 0.0
    for k in range(K):
        acc += p[k]
        if acc > target:
            return k, 0
    # rounding: fall back to the last topic with positive weight
    for k in range(K - 1, -1, -1):
        if p[k] > 0:
            return k, 0
    return K - 1, 0


@numba.njit(cache=True, nogil=True)
def _sweep_serial(owner, z, other, table, tot, joint, alpha, lam, u):  # pragma: no cover
    # joint is oriented (own topic, other topic)
    n_own, K = table.shape
    p = np.empty(K)
    fallbacks = 0
    for t in range(owner.size):
        o = owner[t]
        k0 = z[t]
        f = other[t]
        table[o, k0] -= 1
        tot[k0] -= 1
        joint[k0, f] -= 1
        s = _cond(p, table[o], tot, joint[:, f], alpha, n_own, lam)
        k1, fb = _draw(p, s, u[t])
        fallbacks += fb
        table[o, k1] += 1
        tot[k1] += 1
        joint[k1, f] += 1
        z[t] = k1
    return fallbacks


@numba.njit(cache=True, nogil=True)
def _draw_stale(t, owner, z, other, table, tot, joint, alpha, n_own, lam, u,
                p):  # pragma: no cover
    # conditional of token t against the tables as they stand (token removed)
    o = owner[t]
    k0 = z[t]
    f = other[t]
    s = 0.0
    for k in range(p.size):
        own = table[o, k] - (1 if k == k0 else 0)
        tk = tot[k] - (1 if k == k0 else 0)
        jk = joint[k, f] - (1 if k == k0 else 0)
        den = tk + n_own * alpha
        phi = (own + alpha) / den if den > 0 else 1.0 / n_own
        p[k] = phi * (jk + lam)
        s += p[k]
    return _draw(p, s, u)


# batches smaller than this are drawn in a plain loop; launching a parallel
# region costs more than it saves
PARALLEL_MIN_BATCH = 512


@numba.njit(cache=True, nogil=True, parallel=True)
def _sweep_batched(order, bounds, owner, z, other, table, tot, joint, alpha, lam, u,
                   n_threads):  # pragma: no cover
    # tokens order[bounds[b]:bounds[b+1]] share an owner; within a batch all
    # reads see the tables as of the batch start
    n_own, K = table.shape
    fallbacks = 0
    width = 0
    for b in range(bounds.size - 1):
        width = max(width, bounds[b + 1] - bounds[b])
    new = np.empty(width, dtype=np.int64)
    fb = np.zeros(width, dtype=np.int64)
    p = np.empty(K)
    for b in range(bounds.size - 1):
        a, e = bounds[b], bounds[b + 1]
        nch = min(n_threads, (e - a) // PARALLEL_MIN_BATCH)
        if nch > 1:
            # one scratch buffer per chunk, chunks drawn in parallel
            for c in numba.prange(nch):
                lo = a + (e - a) * c // nch
                hi = a + (e - a) * (c + 1) // nch
                pc = np.empty(K)
                for i in range(lo, hi):
                    new[i - a], fb[i - a] = _draw_stale(order[i], owner, z, other, table,
                                                        tot, joint, alpha, n_own, lam,
                                                        u[i], pc)
        else:
            for q in range(e - a):
                new[q], fb[q] = _draw_stale(order[a + q], owner, z, other, table, tot,
                                            joint, alpha, n_own, lam, u[a + q], p)
        for q in range(e - a):
            t = order[a + q]
            o = owner[t]
            k0 = z[t]
            k1 = new[q]
            fallbacks += fb[q]
            if k1 != k0:
                f = other[t]
                table[o, k0] -= 1
                table[o, k1] += 1
                tot[k0] -= 1
                tot[k1] += 1
                joint[k0, f] -= 1
                joint[k1, f] += 1
                z[t] = k1
    return fallbacks


def _batches(owner):
    order = np.argsort(owner, kind="stable")
    bounds = np.flatnonzero(np.diff(owner[order])) + 1
    return order, np.concatenate([[0], bounds, [owner.size]]).astype(np.int64)


def mutual_update_sweep(tokens, counts, hyper, rng, mode="batch", _plan=None):
    """One sweep: every token's row-topic, then every token's column-topic.

    ``mode="serial"`` is an exact sequential Gibbs sweep. ``mode="batch"``
    groups tokens by row (row-topic pass) and by column (column-topic pass);
    tokens in a group are sampled in parallel against the tables as of the
    group's start, and the tables are synchronized between groups. Both
    modes are deterministic given ``rng``. Tokens and tables are updated in
    place; returns the number of all-zero fallbacks.
    """
    if mode not in ("serial", "batch"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    N = len(tokens)
    u = rng.random(2 * N)
    cr, cc, cj = counts.count_r, counts.count_c, counts.count_joint
    tot_r = cr.sum(axis=0)
    tot_c = cc.sum(axis=0)
    cj_t = np.ascontiguousarray(cj.T)
    fb = 0
    if mode == "serial":
        fb += _sweep_serial(tokens.row_of, tokens.zr, tokens.zc, cr, tot_r, cj,
                            float(hyper.alpha_r), float(hyper.lam), u[:N])
        cj_t[:] = cj.T
        fb += _sweep_serial(tokens.col_of, tokens.zc, tokens.zr, cc, tot_c, cj_t,
                            float(hyper.alpha_c), float(hyper.lam), u[N:])
    else:
        plan = _plan or (_batches(tokens.row_of), _batches(tokens.col_of))
        (o_r, b_r), (o_c, b_c) = plan
        nt = numba.get_num_threads()
        fb += _sweep_batched(o_r, b_r, tokens.row_of, tokens.zr, tokens.zc, cr, tot_r, cj,
                             float(hyper.alpha_r), float(hyper.lam), u[:N], nt)
        cj_t[:] = cj.T
        fb += _sweep_batched(o_c, b_c, tokens.col_of, tokens.zc, tokens.zr, cc, tot_c, cj_t,
                             float(hyper.alpha_c), float(hyper.lam), u[N:], nt)
    cj[:] = cj_t.T
    if fb:
        log.debug("mutual update: %d all-zero conditionals resolved uniformly", fb)
    return int(fb)


def check_tables(tokens, counts):
    """Raise ``AssertionError`` unless the tables match a recount of the tokens."""
    K_r, K_c = counts.count_joint.shape
    ref = CountTables.from_tokens(tokens, K_r, K_c)
    for name in ("count_r", "count_c", "count_joint"):
        if not np.array_equal(getattr(ref, name), getattr(counts, name)):
            raise AssertionError(f"{name} does not match the token assignments")


def compute_phi_c(count_c, alpha_c):
    """Per-topic distributions over columns, ``(C_mi + α) / (Σ_m' C_m'i + n_C α)``.

    A topic with a zero denominator gets a uniform column.
    """
    return _phi(np.asarray(count_c, dtype=float), float(alpha_c), "phi_c")


def compute_phi_r(count_r, alpha_r):
    """Per-topic distributions over rows; mirror image of :func:`compute_phi_c`."""
    return _phi(np.asarray(count_r, dtype=float), float(alpha_r), "phi_r")


def _phi(counts, alpha, what):
    n = counts.shape[0]
    den = counts.sum(axis=0) + n * alpha
    zero = den <= 0
    if zero.any():
        log.warning("%s: %d topic(s) with no mass, using uniform columns", what, zero.sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = (counts + alpha) / den
    phi[:, zero] = 1.0 / n
    return phi


def compute_theta(count_joint, lam):
    """Joint topic-pair distribution ``(C_ij + λ) / Σ(C + λ)``; uniform if all zero."""
    w = np.asarray(count_joint, dtype=float) + float(lam)
    s = w.sum()
    if s <= 0:
        log.warning("theta: no mass, using uniform")
        return np.full(w.shape, 1.0 / w.size)
    return w / s


@dataclass
class CdpModel:
    K_r: int
    K_c: int
    phi_r: np.ndarray
    phi_c: np.ndarray
    theta: np.ndarray
    count_r: np.ndarray
    count_c: np.ndarray
    count_joint: np.ndarray
    hyper: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    row_labels: Optional[list] = None
    col_labels: Optional[list] = None
    # index maps back to the input file and its orientation (set by the CLI)
    source: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return int(self.phi_r.shape[0])

    @property
    def n_cols(self):
        return int(self.phi_c.shape[0])

    def joint_matrix(self):
        """``P(r, c)`` for every row and column."""
        return self.phi_r @ self.theta @ self.phi_c.T

    def to_dict(self):
        def lst(a):
            return np.asarray(a).tolist()
        return {"K_r": int(self.K_r), "K_c": int(self.K_c),
                "n_rows": self.n_rows, "n_cols": self.n_cols,
                "phi_r": lst(self.phi_r), "phi_c": lst(self.phi_c), "theta": lst(self.theta),
                "count_r": lst(self.count_r), "count_c": lst(self.count_c),
                "count_joint": lst(self.count_joint),
                "hyperparameters": self.hyper, "seeds": self.seeds,
                "row_labels": self.row_labels, "col_labels": self.col_labels,
                "source": self.source}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d):
        def arr(key, dtype=float):
            a = np.asarray(d[key], dtype=dtype)
            return a
        cdtype = np.int64 if d.get("hyperparameters", {}).get("cdp", {}).get(
            "count_source", "final") == "final" else float
        return cls(int(d["K_r"]), int(d["K_c"]),
                   arr("phi_r").reshape(-1, int(d["K_r"])),
                   arr("phi_c").reshape(-1, int(d["K_c"])),
                   arr("theta").reshape(int(d["K_r"]), int(d["K_c"])),
                   arr("count_r", cdtype).reshape(-1, int(d["K_r"])),
                   arr("count_c", cdtype).reshape(-1, int(d["K_c"])),
                   arr("count_joint", cdtype).reshape(int(d["K_r"]), int(d["K_c"])),
                   d.get("hyperparameters", {}), d.get("seeds", {}),
                   d.get("row_labels"), d.get("col_labels"), d.get("source", {}))

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}: not a valid model file: {exc}") from None


def joint_prob(model, r, c):
    """``P(r, c) = Σ_i Σ_j phi_r[r, i] phi_c[c, j] theta[i, j]``."""
    if not (0 <= r < model.n_rows and 0 <= c < model.n_cols):
        raise IndexError(f"cell ({r}, {c}) outside a {model.n_rows}x{model.n_cols} model")
    return float(model.phi_r[r] @ model.theta @ model.phi_c[c])


def normalization_error(model):
    """Largest deviation from 1 among the phi column sums, the theta sum and
    the total joint probability."""
    sums = np.concatenate([np.asarray(model.phi_r).sum(axis=0),
                           np.asarray(model.phi_c).sum(axis=0),
                           [np.asarray(model.theta).sum(), model.joint_matrix().sum()]])
    return float(np.max(np.abs(sums - 1.0)))


def build_model(tables, params, **meta):
    """Model parameters from count tables."""
    K_r, K_c = tables.count_joint.shape
    return CdpModel(K_r, K_c,
                    compute_phi_r(tables.count_r, params.alpha_r),
                    compute_phi_c(tables.count_c, params.alpha_c),
                    compute_theta(tables.count_joint, params.lam),
                    tables.count_r, tables.count_c, tables.count_joint, **meta)


@dataclass
class CdpFit:
    model: CdpModel
    tokens: TokenTable
    trace_r: AssignmentTrace
    trace_c: AssignmentTrace
    timings: dict


def fit_cdp(m, cfg_r, cfg_c, hyper, seed=0, mode="batch", workers=1, debug=False):
    """Fit the model to a preprocessed count matrix.

    ``cfg_r``/``cfg_c`` configure the row and column samplers (their seeds
    are used as given); ``seed`` drives the token sweeps. With
    ``workers > 1`` the two samplers run concurrently.
    """
    if not isinstance(m, SparseCountMatrix):
        m = SparseCountMatrix.from_dense(m)
    timings = {}
    t0 = time.perf_counter()

    def timed(name, fn, *args):
        s = time.perf_counter()
        out = fn(*args)
        timings[name] = time.perf_counter() - s
        log.info("phase %s: %.3f s", name, timings[name])
        return out

    if debug:
        cfg_r.debug = cfg_c.debug = True
    if workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fr = pool.submit(timed, "dpmm_rows", run_dpmm, m, cfg_r)
            fc = pool.submit(timed, "dpmm_cols", run_dpmm, transpose(m), cfg_c)
            trace_r, trace_c = fr.result(), fc.result()
    else:
        trace_r = timed("dpmm_rows", run_dpmm, m, cfg_r)
        trace_c = timed("dpmm_cols", run_dpmm, transpose(m), cfg_c)
    K_r, z_r = map_k(trace_r, cfg_r.burn_in_fraction)
    K_c, z_c = map_k(trace_c, cfg_c.burn_in_fraction)
    log.info("MAP cluster counts: K_r=%d, K_c=%d", K_r, K_c)

    s = time.perf_counter()
    tokens = init_token_assignments(to_tokens(m), z_r, z_c)
    tables = CountTables.from_tokens(tokens, K_r, K_c)
    timings["init_tokens"] = time.perf_counter() - s

    rng = np.random.default_rng(seed)
    plan = (_batches(tokens.row_of), _batches(tokens.col_of)) if mode == "batch" else None
    acc = None
    fallbacks = 0
    s = time.perf_counter()
    for _ in range(int(hyper.iter_u)):
        fallbacks += mutual_update_sweep(tokens, tables, hyper, rng, mode=mode, _plan=plan)
        if debug:
            check_tables(tokens, tables)
        if hyper.count_source == "mean":
            cur = (tables.count_r, tables.count_c, tables.count_joint)
            acc = [c.astype(float) for c in cur] if acc is None else [
                a + c for a, c in zip(acc, cur)]
    timings["mutual_update"] = time.perf_counter() - s
    log.info("phase mutual_update: %.3f s (%d sweeps, %d tokens)",
             timings["mutual_update"], hyper.iter_u, len(tokens))
    if fallbacks:
        log.warning("%d token update(s) had an all-zero conditional and were drawn "
                    "uniformly", fallbacks)
    if acc is not None:
        tables = CountTables(*(a / hyper.iter_u for a in acc))

    meta = dict(hyper={"rows": cfg_r.to_dict(), "cols": cfg_c.to_dict(),
                       "cdp": hyper.to_dict(), "sweep_mode": mode},
                seeds={"rows": int(cfg_r.seed), "cols": int(cfg_c.seed), "tokens": int(seed)},
                row_labels=None if m.row_labels is None else list(m.row_labels),
                col_labels=None if m.col_labels is None else list(m.col_labels))
    model = build_model(tables, hyper, **meta)
    timings["total"] = time.perf_counter() - t0
    return CdpFit(model, tokens, trace_r, trace_c, timings)


def extract_biclusters(model, hyper):
    """Heavy biclusters of a fitted model.

    A topic pair ``(i, j)`` is heavy when ``theta[i, j] >= tau_theta *
    max(theta)``. Row ``n`` joins it when at least a ``tau_row`` share of
    the row's tokens carry row-topic ``i``; columns likewise with
    ``tau_col``. Pairs with no qualifying rows or columns are dropped.
    Output is ordered by decreasing weight, then topic pair.
    """
    theta = np.asarray(model.theta)
    cr = np.asarray(model.count_r, dtype=float)
    cc = np.asarray(model.count_c, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        share_r = np.nan_to_num(cr / cr.sum(axis=1, keepdims=True))
        share_c = np.nan_to_num(cc / cc.sum(axis=1, keepdims=True))
    heavy = np.argwhere(theta >= hyper.tau_theta * theta.max())
    out = []
    for i, j in heavy:
        rows = np.flatnonzero(share_r[:, i] >= hyper.tau_row)
        cols = np.flatnonzero(share_c[:, j] >= hyper.tau_col)
        if rows.size and cols.size:
            out.append(Bicluster(rows.tolist(), cols.tolist(),
                                 float(min(max(theta[i, j], 0.0), 1.0)), (int(i), int(j))))
    if not out:
        log.warning("no heavy bicluster with nonempty membership")
    out.sort(key=lambda b: (-b.weight, b.topic_pair))
    return out
