"""Multinomial DP mixture inference with sub-cluster split/merge moves.

Each iteration runs a restricted Gibbs sweep (cluster count fixed,
data-parallel over points) against instantiated cluster weights and
multinomial parameters, refreshes every cluster's two sub-clusters with a
few sub-cluster Gibbs sweeps, and then attempts split and merge moves built
from those sub-clusters.

Split/merge acceptance uses the sub-cluster Hastings ratio

    H_split = γ Γ(N_l) f(T_l) Γ(N_r) f(T_r) / (Γ(N) f(T))

(``f`` the Dirichlet-multinomial marginal, ``H_merge`` its reciprocal)
times the ratio of reverse to forward proposal probabilities. Sub-clusters
are relaunched from a random start every iteration so that the proposal
probability is computable; with that correction, and a restricted Gibbs
step that never empties a cluster, the chain leaves the DP partition
posterior exactly invariant.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numba
import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

log = logging.getLogger(__name__)

@dataclass
class DpmmConfig:
    gamma: float = 1.0
    beta: Union[float, np.ndarray] = 1.0
    iterations: int = 100
    seed: int = 0
    workers: int = 1
    burn_in_fraction: float = 0.5
    # sub-cluster Gibbs sweeps used to build each split proposal
    subcluster_sweeps: int = 3
    # split/merge attempts per iteration; a fixed number keeps the kernel
    # invariant (a count that depended on K would not)
    split_merge_attempts: int = 4
    # points per RNG shard; fixed so results do not depend on ``workers``
    shard_size: int = 2048
    debug: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        b = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if b.size == 0 or not np.all(b > 0):
            raise ValueError("all beta components must be positive")
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")
        if int(self.shard_size) < 1:
            raise ValueError("shard_size must be >= 1")
        if int(self.subcluster_sweeps) < 1:
            raise ValueError("subcluster_sweeps must be >= 1")
        if int(self.split_merge_attempts) < 1:
            raise ValueError("split_merge_attempts must be >= 1")

    def beta_vector(self, d):
        b = np.asarray(self.beta, dtype=float)
        if b.ndim == 0 or b.size == 1:
            return np.full(d, float(b.ravel()[0]))
        if b.size != d:
            raise ValueError(f"beta has length {b.size}, data dimension is {d}")
        return b.astype(float)

    def to_dict(self):
        """Settings that determine the result (``workers`` and ``debug`` do not)."""
        b = np.asarray(self.beta)
        return {"gamma": float(self.gamma),
                "beta": float(b) if b.ndim == 0 else b.tolist(),
                "iterations": int(self.iterations), "seed": int(self.seed),
                "burn_in_fraction": float(self.burn_in_fraction),
                "subcluster_sweeps": int(self.subcluster_sweeps),
                "split_merge_attempts": int(self.split_merge_attempts),
                "shard_size": int(self.shard_size)}


def log_marginal_dirmult(stat, beta):
    """Log Dirichlet-multinomial marginal of a count vector (token-sequence form).

    ``log Γ(Σβ)/Γ(Σβ+n) + Σ_j log Γ(β_j+T_j)/Γ(β_j)``, no multinomial
    coefficient. A 2-D ``stat`` gives one value per row.
    """
    stat = np.asarray(stat, dtype=float)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), stat.shape[-1:])
    n = stat.sum(axis=-1)
    b0 = beta.sum()
    out = (gammaln(b0) - gammaln(b0 + n)
           + (gammaln(beta + stat) - gammaln(beta)).sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def _lse(a, axis=-1):
    # logsumexp along ``axis`` keeping dims; inputs here are never all -inf
    m = a.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))


def log_dirichlet(alpha, rng):
    """Draw ``log`` of Dirichlet samples along the last axis.

    Shapes below one use the Gamma(a+1)·U^(1/a) identity so components with
    tiny concentration stay finite in log space.
    """
    alpha = np.asarray(alpha, dtype=float)
    small = alpha < 1.0
    if small.any():
        logg = np.log(rng.standard_gamma(np.where(small, alpha + 1.0, alpha)))
        logg = np.where(small, logg + np.log(rng.random(alpha.shape)) / alpha, logg)
    else:
        with np.errstate(divide="ignore"):
            logg = np.log(rng.standard_gamma(alpha))
    return logg - _lse(logg)


@dataclass
class ClusterState:
    count: int
    stat: np.ndarray
    log_param: Optional[np.ndarray]
    log_weight: Optional[float]
    sub: tuple = ()


@dataclass
class DpmmState:
    """Labels, sufficient statistics and instantiated parameters.

    Arrays are indexed by cluster ``k``; sub-cluster arrays carry an axis of
    length 2 (left, right). ``sub_logp`` holds, per point, the normalized
    log probability of each side under the sub-cluster parameters that
    produced ``sub``.
    """

    z: np.ndarray
    sub: np.ndarray
    counts: np.ndarray
    stats: np.ndarray
    sub_counts: np.ndarray
    sub_stats: np.ndarray
    log_theta: Optional[np.ndarray] = None
    log_pi: Optional[np.ndarray] = None
    sub_log_theta: Optional[np.ndarray] = None
    sub_log_pi: Optional[np.ndarray] = None
    sub_logp: Optional[np.ndarray] = None

    @property
    def K(self):
        return int(self.counts.size)

    def cluster(self, k):
        """Per-cluster record view of cluster ``k``."""
        def opt(arr, *idx):
            return None if arr is None else arr[idx]
        subs = tuple(
            ClusterState(int(self.sub_counts[k, s]), self.sub_stats[k, s],
                         opt(self.sub_log_theta, k, s),
                         None if self.sub_log_pi is None else float(self.sub_log_pi[k, s]))
            for s in (0, 1))
        return ClusterState(int(self.counts[k]), self.stats[k], opt(self.log_theta, k),
                            None if self.log_pi is None else float(self.log_pi[k]), subs)


@dataclass
class AssignmentTrace:
    labels: np.ndarray      # (iterations, n_points), compacted per iteration
    n_clusters: np.ndarray  # (iterations,)
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return int(self.n_clusters.size)

    def to_csv(self, labels_path=None, summary_path=None, thin=1):
        """K per iteration, and long-format labels for every ``thin``-th iteration."""
        if summary_path is not None:
            with Path(summary_path).open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iteration", "K"])
                for it, k in enumerate(self.n_clusters):
                    w.writerow([it, int(k)])
        if labels_path is not None:
            n = self.labels.shape[1] if self.labels.ndim == 2 else 0
            idx = np.arange(n)
            with Path(labels_path).open("w") as fh:
                fh.write("iteration,point_index,label\n")
                for it in range(0, len(self.labels), max(int(thin), 1)):
                    block = np.column_stack([np.full(n, it), idx, self.labels[it]])
                    np.savetxt(fh, block, fmt="%d", delimiter=",")


def as_points(points):
    """Point matrix as int64 CSR with sorted indices."""
    from .countmat import SparseCountMatrix
    if isinstance(points, SparseCountMatrix):
        X = points.to_csr()
    elif sp.issparse(points):
        X = sp.csr_matrix(points)
    else:
        X = sp.csr_matrix(np.asarray(points))
    X = sp.csr_matrix(X, dtype=np.int64)
    X.sort_indices()
    return X


@numba.njit(cache=True, nogil=True)
def _group_sum_k(indptr, indices, data, rows, keys, n_groups, d):  # pragma: no cover
    out = np.zeros((n_groups, d), dtype=np.int64)
    for p in range(rows.size):
        r = rows[p]
        g = keys[p]
        for q in range(indptr[r], indptr[r + 1]):
            out[g, indices[q]] += data[q]
    return out


@numba.njit(cache=True, nogil=True)
def _loglik_k(indptr, indices, data, rows, log_theta, log_pi):  # pragma: no cover
    K = log_theta.shape[0]
    out = np.empty((rows.size, K))
    for p in range(rows.size):
        r = rows[p]
        for k in range(K):
            acc = log_pi[k]
            for q in range(indptr[r], indptr[r + 1]):
                acc += data[q] * log_theta[k, indices[q]]
            out[p, k] = acc
    return out


@numba.njit(cache=True, nogil=True)
def _log_dirichlet_k(alpha):  # pragma: no cover
    out = np.empty(alpha.size)
    m = -np.inf
    for j in range(alpha.size):
        a = alpha[j]
        if a < 1.0:
            out[j] = math.log(np.random.gamma(a + 1.0, 1.0)) + math.log(np.random.random()) / a
        else:
            out[j] = math.log(np.random.gamma(a, 1.0))
        if out[j] > m:
            m = out[j]
    tot = 0.0
    for j in range(alpha.size):
        tot += math.exp(out[j] - m)
    lz = m + math.log(tot)
    for j in range(alpha.size):
        out[j] -= lz
    return out


@numba.njit(cache=True, nogil=True)
def _launch_k(indptr, indices, data, rows, groups, n_groups, beta, gamma, sweeps,
              seed):  # pragma: no cover
    np.random.seed(seed)
    n = rows.size
    d = beta.size
    s = np.empty(n, dtype=np.int64)
    for p in range(n):
        s[p] = 1 if np.random.random() < 0.5 else 0
    side = np.zeros((n, 2))
    lt = np.zeros((2 * n_groups, d))
    lp = np.zeros((n_groups, 2))
    pair = np.empty(2)
    for _ in range(sweeps):
        stats = np.zeros((2 * n_groups, d))
        cnt = np.zeros(2 * n_groups)
        for p in range(n):
            r = rows[p]
            key = 2 * groups[p] + s[p]
            cnt[key] += 1.0
            for q in range(indptr[r], indptr[r + 1]):
                stats[key, indices[q]] += data[q]
        for g in range(2 * n_groups):
            lt[g] = _log_dirichlet_k(beta + stats[g])
        for g in range(n_groups):
            pair[0] = cnt[2 * g] + gamma / 2.0
            pair[1] = cnt[2 * g + 1] + gamma / 2.0
            lp[g] = _log_dirichlet_k(pair)
        for p in range(n):
            r = rows[p]
            g = groups[p]
            a0 = lp[g, 0]
            a1 = lp[g, 1]
            for q in range(indptr[r], indptr[r + 1]):
                a0 += data[q] * lt[2 * g, indices[q]]
                a1 += data[q] * lt[2 * g + 1, indices[q]]
            m = max(a0, a1)
            lz = m + math.log(math.exp(a0 - m) + math.exp(a1 - m))
            side[p, 0] = a0 - lz
            side[p, 1] = a1 - lz
            s[p] = 1 if np.random.random() < math.exp(side[p, 1]) else 0
    return s, side, lt, lp


def _rows(X, rows):
    return np.arange(X.shape[0], dtype=np.int64) if rows is None else np.asarray(rows, np.int64)


def _group_sum(X, keys, n_groups, rows=None):
    """Sum the given rows of ``X`` by key into an int64 ``(n_groups, d)`` array."""
    return _group_sum_k(X.indptr, X.indices, X.data, _rows(X, rows),
                        np.asarray(keys, np.int64), int(n_groups), X.shape[1])


def _loglik(X, log_theta, log_pi, rows=None):
    """``log π_k + x_i · log θ_k`` for the given rows of ``X``."""
    return _loglik_k(X.indptr, X.indices, X.data, _rows(X, rows),
                     np.ascontiguousarray(log_theta, dtype=float),
                     np.ascontiguousarray(log_pi, dtype=float))


def rebuild_stats(X, state, K=None):
    """Recompute all sufficient statistics from the labels.

    ``K`` fixes the number of cluster slots; empty slots are kept so that
    :func:`prune` can drop them.
    """
    if K is None:
        K = int(state.z.max()) + 1 if state.z.size else 0
    key = 2 * state.z + state.sub
    state.sub_stats = _group_sum(X, key, 2 * K).reshape(K, 2, -1)
    state.sub_counts = np.bincount(key, minlength=2 * K).reshape(K, 2).astype(np.int64)
    state.stats = state.sub_stats.sum(axis=1)
    state.counts = state.sub_counts.sum(axis=1)
    return state


def prune(state):
    """Drop empty clusters and compact labels, preserving order."""
    keep = np.flatnonzero(state.counts > 0)
    if keep.size == state.counts.size:
        return state
    remap = np.full(state.counts.size, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    state.z = remap[state.z]
    for name in ("counts", "stats", "sub_counts", "sub_stats",
                 "log_theta", "log_pi", "sub_log_theta", "sub_log_pi"):
        arr = getattr(state, name)
        if arr is not None and len(arr) == remap.size:
            setattr(state, name, arr[keep])
    return state


def initial_state(X, rng):
    """Single cluster holding every point, random sub-cluster halves."""
    n = X.shape[0]
    state = DpmmState(z=np.zeros(n, dtype=np.int64),
                      sub=rng.integers(0, 2, size=n).astype(np.int64),
                      counts=None, stats=None, sub_counts=None, sub_stats=None)
    return rebuild_stats(X, state, K=1)


def sample_cluster_params(state, gamma, beta, rng):
    """Draw cluster weights and multinomial parameters.

    Weights come from Dir(N_1..N_K, γ) with the trailing empty-cluster
    weight dropped; every parameter from Dir(β + T_k).
    """
    beta = np.asarray(beta, dtype=float)
    state.log_theta = log_dirichlet(beta + state.stats, rng)
    state.log_pi = log_dirichlet(np.append(state.counts.astype(float), gamma), rng)[:-1]
    return state


def _sample_categorical(logp, u):
    """Row-wise inverse-CDF draw from unnormalized log-probabilities."""
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    c = np.cumsum(p, axis=1)
    idx = (c < u[:, None] * c[:, -1:]).sum(axis=1)
    return np.minimum(idx, logp.shape[1] - 1)


@numba.njit(cache=True)
def _constrained_sweep(logw, z, counts, u):  # pragma: no cover - compiled
    # single-site Gibbs that never empties a cluster
    n, K = logw.shape
    p = np.empty(K)
    for i in range(n):
        k0 = z[i]
        if counts[k0] == 1:
            continue
        m = logw[i, 0]
        for k in range(1, K):
            if logw[i, k] > m:
                m = logw[i, k]
        tot = 0.0
        for k in range(K):
            p[k] = math.exp(logw[i, k] - m)
            tot += p[k]
        target = u[i] * tot
        acc = 0.0
        k1 = K - 1
        for k in range(K):
            acc += p[k]
            if acc > target:
                k1 = k
                break
        counts[k0] -= 1
        counts[k1] += 1
        z[i] = k1
    return z


class ShardPlan:
    """Fixed partition of the points into RNG shards, plus a worker pool.

    Shard ``s`` at iteration ``t`` always draws from the stream keyed by
    ``(seed, t, s)``, so the result is the same for any worker count.
    """

    def __init__(self, X, seed, shard_size=2048, workers=1):
        n = X.shape[0]
        self.X = X
        self.seed = int(seed)
        self.bounds = [(a, min(a + shard_size, n)) for a in range(0, n, shard_size)]
        self.zero = np.asarray(X.sum(axis=1)).ravel() <= 0
        self.pool = (ThreadPoolExecutor(max_workers=workers)
                     if workers > 1 and len(self.bounds) > 1 else None)

    def rng(self, iteration, shard):
        ss = np.random.SeedSequence(self.seed, spawn_key=(1, iteration, shard))
        return np.random.Generator(np.random.PCG64(ss))

    def map(self, fn):
        idx = range(len(self.bounds))
        return list(self.pool.map(fn, idx)) if self.pool else [fn(i) for i in idx]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def sample_assignments(data, state, rng=None, *, plan=None, iteration=0):
    """Restricted Gibbs update of the cluster labels; statistics are rebuilt.

    Each label is drawn with probability proportional to
    ``exp(log π_k + x_i · log θ_k)`` (points with zero total: uniform), for
    all points in parallel. If that draw would leave a cluster empty it is
    discarded and an exact sequential sweep that keeps every cluster
    occupied is used instead.
    """
    if plan is None:
        X = as_points(data)
        seed = 0 if rng is None else int(rng.integers(2**31))
        plan = ShardPlan(X, seed, shard_size=max(X.shape[0], 1))
    X = plan.X
    K = state.K

    def work(i):
        a, b = plan.bounds[i]
        r = plan.rng(iteration, i)
        logw = _loglik(X, state.log_theta, state.log_pi, rows=np.arange(a, b))
        zero = plan.zero[a:b]
        if zero.any():
            logw[zero] = 0.0
        return logw, r.random(b - a), r.random(b - a)

    parts = plan.map(work)
    z_new = np.concatenate([_sample_categorical(p[0], p[1]) for p in parts])
    if K > 1 and np.bincount(z_new, minlength=K).min() == 0:
        # the fallback needs uniforms independent of the rejected draw
        logw = np.concatenate([p[0] for p in parts])
        u = np.concatenate([p[2] for p in parts])
        z_new = state.z.copy()
        _constrained_sweep(logw, z_new, np.bincount(z_new, minlength=K).astype(np.int64), u)
    state.z = z_new.astype(np.int64)
    rebuild_stats(X, state, K=K)
    return state.z


def _launch(X, rows, groups, n_groups, gamma, beta, sweeps, rng):
    """Sub-cluster Gibbs sweeps from a uniformly random start, one group per cluster.

    Returns the final sides, the normalized per-point side log-probabilities
    they were drawn from, and the last sub-cluster log-parameters and
    log-weights.
    """
    s, side, lt, lp = _launch_k(X.indptr, X.indices, X.data, _rows(X, rows),
                                np.asarray(groups, np.int64), int(n_groups),
                                np.asarray(beta, float), float(gamma), int(sweeps),
                                int(rng.integers(2**62)))
    return s, side, lt.reshape(int(n_groups), 2, -1), lp


def sample_subclusters(X, state, gamma, beta, rng, sweeps=3):
    """Refresh every cluster's left/right sub-clusters.

    Sub-cluster weights are drawn from Dir(N_l + γ/2, N_r + γ/2),
    parameters from Dir(β + T), and each point's side proportionally to
    ``π̄_s θ̄_s^x``. The sweeps start from a random split so that the final
    draw has a known proposal probability.
    """
    s, side, lt, lp = _launch(X, None, state.z, state.K, gamma, beta, sweeps, rng)
    state.sub = s
    state.sub_logp = side
    state.sub_log_theta = lt
    state.sub_log_pi = lp
    rebuild_stats(X, state, K=state.K)
    return state


def log_split_ratio(n_left, t_left, n_right, t_right, gamma, beta):
    """``log H_split`` for dividing a cluster into the two given halves."""
    t_left = np.asarray(t_left)
    t_right = np.asarray(t_right)
    return (math.log(gamma)
            + gammaln(n_left) + log_marginal_dirmult(t_left, beta)
            + gammaln(n_right) + log_marginal_dirmult(t_right, beta)
            - gammaln(n_left + n_right) - log_marginal_dirmult(t_left + t_right, beta))


def log_split_proposal(logp, sides):
    """Log probability of drawing the unordered split ``sides`` (either labelling)."""
    rows = np.arange(sides.size)
    return float(np.logaddexp(logp[rows, sides].sum(), logp[rows, 1 - sides].sum()))


def _log_select_split(K):
    # one cluster out of K
    return -math.log(K)


def _log_select_merge(K):
    # one unordered pair out of K clusters
    return math.log(2.0) - math.log(K) - math.log(K - 1)


def propose_splits(state, k, gamma, beta, rng, X, *, logp=None, sides=None, sweeps=3):
    """Attempt to split cluster ``k`` along its sub-clusters.

    ``logp``/``sides`` are the members' side log-probabilities and sides;
    when omitted, fresh sub-clusters are launched for ``k``. The log
    acceptance is ``log H_split`` plus the log ratio of reverse-merge to
    split proposal probabilities. Returns the new cluster index, or ``None``
    when nothing changed (including when a sub-cluster is empty).
    """
    members = np.flatnonzero(state.z == k)
    if members.size < 2:
        return None
    if logp is None:
        sides, logp, _, _ = _launch(X, members, np.zeros(members.size, dtype=np.int64), 1,
                                    gamma, beta, sweeps, rng)
    n_right = int(sides.sum())
    n_left = members.size - n_right
    if n_left == 0 or n_right == 0:
        return None
    t_left, t_right = _group_sum(X, sides, 2, rows=members)
    K = int((state.counts > 0).sum())
    log_a = (log_split_ratio(n_left, t_left, n_right, t_right, gamma, beta)
             + _log_select_merge(K + 1) - _log_select_split(K)
             - log_split_proposal(logp, sides))
    if math.log(rng.random()) >= log_a:
        return None
    new = state.counts.size
    state.z[members[sides == 1]] = new
    state.counts = np.append(state.counts, n_right)
    state.stats = np.vstack([state.stats, t_right[None]])
    state.counts[k] = n_left
    state.stats[k] = t_left
    return new


def propose_merges(state, k1, k2, gamma, beta, rng, X, sweeps=3):
    """Attempt to merge clusters ``k1`` and ``k2`` (``k2`` is absorbed).

    The reverse split's proposal probability is evaluated on sub-clusters
    launched over the union. An accepted merge keeps the two former
    clusters as its sub-clusters. Returns ``True`` when accepted.
    """
    members = np.flatnonzero((state.z == k1) | (state.z == k2))
    target = (state.z[members] == k2).astype(np.int64)
    _, logp, _, _ = _launch(X, members, np.zeros(members.size, dtype=np.int64), 1,
                            gamma, beta, sweeps, rng)
    K = int((state.counts > 0).sum())
    log_a = (-log_split_ratio(int(state.counts[k1]), state.stats[k1],
                              int(state.counts[k2]), state.stats[k2], gamma, beta)
             + _log_select_split(K - 1) - _log_select_merge(K)
             + log_split_proposal(logp, target))
    if math.log(rng.random()) >= log_a:
        return False
    state.z[members] = k1
    state.sub[members] = target
    state.counts[k1] += state.counts[k2]
    state.stats[k1] += state.stats[k2]
    state.counts[k2] = 0
    state.stats[k2] = 0
    return True


def split_merge(state, gamma, beta, rng, X, attempts=4, sweeps=3):
    """Split/merge attempts against the current sub-clusters.

    Each attempt is a split of a uniformly chosen cluster or a merge of a
    uniformly chosen pair, with equal probability. Refreshed sub-clusters
    serve one split attempt per cluster; later attempts relaunch. Returns
    ``True`` if the partition changed.
    """
    beta = np.asarray(beta, dtype=float)
    fresh = set(range(state.K))
    changed = False
    for _ in range(int(attempts)):
        live = np.flatnonzero(state.counts > 0)
        if rng.random() < 0.5:
            k = int(live[rng.integers(live.size)])
            if k in fresh:
                fresh.discard(k)
                mask = state.z == k
                new = propose_splits(state, k, gamma, beta, rng, X,
                                     logp=state.sub_logp[mask], sides=state.sub[mask])
            else:
                new = propose_splits(state, k, gamma, beta, rng, X, sweeps=sweeps)
            changed |= new is not None
        elif live.size >= 2:
            a, b = sorted(int(v) for v in rng.choice(live, size=2, replace=False))
            if propose_merges(state, a, b, gamma, beta, rng, X, sweeps=sweeps):
                fresh.discard(a)
                fresh.discard(b)
                changed = True
    if changed:
        state.log_theta = state.log_pi = None
        state.sub_log_theta = state.sub_log_pi = state.sub_logp = None
        rebuild_stats(X, state, K=state.counts.size)
        prune(state)
    return changed


def check_conservation(state, totals, n_points):
    """Raise ``AssertionError`` if the statistics are not conserved."""
    if int(state.counts.sum()) != n_points:
        raise AssertionError("cluster counts do not sum to the number of points")
    if not np.array_equal(state.stats.sum(axis=0), totals):
        raise AssertionError("cluster statistics do not sum to the global totals")
    if not np.array_equal(state.sub_counts.sum(axis=1), state.counts):
        raise AssertionError("sub-cluster counts do not sum to cluster counts")
    if not np.array_equal(state.sub_stats.sum(axis=1), state.stats):
        raise AssertionError("sub-cluster statistics do not sum to cluster statistics")
    if state.counts.size and state.counts.min() <= 0:
        raise AssertionError("empty cluster survived pruning")


def run_dpmm(points, cfg, callback=None):
    """Run the sampler and return the per-iteration label trace.

    Iteration: sample parameters, restricted Gibbs over points (parallel),
    refresh sub-clusters, split/merge attempts, prune. The chain starts
    from a single cluster holding every point.
    """
    X = as_points(points)
    n, d = X.shape
    if n == 0:
        raise ValueError("no data points")
    beta = cfg.beta_vector(d)
    totals = np.rint(np.asarray(X.sum(axis=0))).astype(np.int64).ravel()
    if totals.sum() <= 0:
        raise ValueError("all data points have zero total")
    coord = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(cfg.seed), spawn_key=(0,))))
    plan = ShardPlan(X, int(cfg.seed), int(cfg.shard_size), int(cfg.workers))
    flagged = np.flatnonzero(plan.zero)
    if flagged.size:
        log.warning("%d point(s) have zero total and are assigned uniformly at random: %s",
                    flagged.size, flagged[:10].tolist())

    state = initial_state(X, coord)
    iters = int(cfg.iterations)
    labels = np.empty((iters, n), dtype=np.int32)
    ks = np.empty(iters, dtype=np.int64)
    sweeps = int(cfg.subcluster_sweeps)
    try:
        for it in range(iters):
            sample_cluster_params(state, cfg.gamma, beta, coord)
            sample_assignments(X, state, plan=plan, iteration=it)
            sample_subclusters(X, state, cfg.gamma, beta, coord, sweeps)
            if cfg.debug:
                check_conservation(state, totals, n)
            split_merge(state, cfg.gamma, beta, coord, X,
                        attempts=int(cfg.split_merge_attempts), sweeps=sweeps)
            if cfg.debug:
                check_conservation(state, totals, n)
            labels[it] = state.z
            ks[it] = state.K
            if callback is not None:
                callback(it, state)
    finally:
        plan.close()
    return AssignmentTrace(labels=labels, n_clusters=ks, flagged=flagged)
