import math

import numpy as np
import pytest
import scipy.sparse as sp

from conjoined.dpmm import (AssignmentTrace, DpmmConfig, DpmmState, as_points,
                            check_conservation, initial_state, log_dirichlet,
                            log_marginal_dirmult, log_split_ratio, propose_merges, prune,
                            propose_splits, rebuild_stats, run_dpmm, sample_assignments,
                            sample_cluster_params, sample_subclusters, split_merge)


def lgamma_marginal(T, beta):
    """Reference Dirichlet-multinomial marginal built from math.lgamma."""
    b0 = sum(beta)
    out = math.lgamma(b0) - math.lgamma(b0 + sum(T))
    for t, b in zip(T, beta):
        out += math.lgamma(b + t) - math.lgamma(b)
    return out


class FixedRng:
    """Stand-in generator whose uniforms are fixed."""

    def __init__(self, u):
        self.u = u
        self._rng = np.random.default_rng(0)

    def random(self, size=None):
        return self.u if size is None else np.full(size, self.u)

    def integers(self, *args, **kwargs):
        return self._rng.integers(*args, **kwargs)


def _state(X, z, sub=None):
    z = np.asarray(z, dtype=np.int64)
    sub = np.zeros_like(z) if sub is None else np.asarray(sub, dtype=np.int64)
    st = DpmmState(z=z, sub=sub, counts=None, stats=None, sub_counts=None, sub_stats=None)
    return rebuild_stats(X, st, K=int(z.max()) + 1)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(gamma=0), dict(beta=0.0), dict(beta=[1, -1]),
                                    dict(iterations=0), dict(burn_in_fraction=1.0),
                                    dict(workers=0), dict(split_merge_attempts=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DpmmConfig(**kw)

    def test_scalar_beta_broadcasts(self):
        np.testing.assert_array_equal(DpmmConfig(beta=0.5).beta_vector(3), [0.5, 0.5, 0.5])

    def test_vector_beta_length(self):
        with pytest.raises(ValueError, match="length"):
            DpmmConfig(beta=[1.0, 2.0]).beta_vector(3)


class TestMarginal:
    def test_empty(self):
        assert log_marginal_dirmult([0, 0], 0.7) == 0.0

    def test_single_draw(self):
        assert log_marginal_dirmult([1, 0], [1, 1]) == pytest.approx(math.log(0.5), abs=1e-14)

    def test_two_draws(self):
        # Γ(2)/Γ(4) · Γ(2)Γ(2)/(Γ(1)Γ(1)) = 1/6
        assert log_marginal_dirmult([1, 1], [1, 1]) == pytest.approx(math.log(1 / 6),
                                                                     abs=1e-14)

    def test_against_lgamma(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            T = rng.integers(0, 20, size=4)
            beta = rng.uniform(0.05, 3, size=4)
            assert log_marginal_dirmult(T, beta) == pytest.approx(
                lgamma_marginal(T.tolist(), beta.tolist()), abs=1e-10)

    def test_rowwise(self):
        out = log_marginal_dirmult([[1, 0], [1, 1]], 1.0)
        np.testing.assert_allclose(out, np.log([0.5, 1 / 6]))


class TestClusterParams:
    def test_dominant_category(self):
        X = as_points(np.array([[10**6, 0]]))
        st = _state(X, [0])
        rng = np.random.default_rng(1)
        for _ in range(20):
            sample_cluster_params(st, 1.0, np.ones(2), rng)
            assert math.exp(st.log_theta[0, 0]) > 0.99

    def test_normalized(self):
        X = as_points(np.array([[3, 0, 1], [0, 2, 2], [1, 1, 1]]))
        st = _state(X, [0, 1, 1])
        rng = np.random.default_rng(2)
        for _ in range(20):
            sample_cluster_params(st, 1.0, np.full(3, 0.1), rng)
            np.testing.assert_allclose(np.exp(st.log_theta).sum(axis=1), 1.0, atol=1e-9)
            assert np.exp(st.log_pi).sum() < 1.0

    def test_empty_stat_gives_prior(self):
        rng = np.random.default_rng(3)
        alpha = np.array([0.5, 1.5, 2.0])
        draws = np.exp(log_dirichlet(np.tile(alpha, (20000, 1)), rng))
        np.testing.assert_allclose(draws.mean(axis=0), alpha / alpha.sum(), atol=0.01)

    def test_tiny_concentration_is_finite(self):
        out = log_dirichlet(np.full(5, 1e-3), np.random.default_rng(0))
        assert np.all(np.isfinite(out))
        assert np.exp(out).sum() == pytest.approx(1.0, abs=1e-9)


class TestAssignments:
    def test_single_cluster(self):
        X = as_points(np.random.default_rng(0).integers(0, 4, size=(30, 5)))
        st = _state(X, np.zeros(30, dtype=int))
        sample_cluster_params(st, 1.0, np.ones(5), np.random.default_rng(0))
        z = sample_assignments(X, st, np.random.default_rng(1))
        assert np.all(z == 0)

    def test_disjoint_support(self):
        X = as_points(np.array([[5, 5, 0, 0], [0, 0, 5, 5], [4, 6, 0, 0]]))
        st = _state(X, [0, 1, 1])
        st.log_theta = np.log(np.array([[0.5, 0.5 - 1e-12, 1e-12 / 2, 1e-12 / 2],
                                        [1e-12 / 2, 1e-12 / 2, 0.5, 0.5 - 1e-12]]))
        st.log_pi = np.log([0.5, 0.5])
        for seed in range(20):
            z = sample_assignments(X, st, np.random.default_rng(seed))
            assert z[2] == 0

    def test_conservation(self):
        rng = np.random.default_rng(4)
        X = as_points(rng.integers(0, 5, size=(40, 6)))
        st = _state(X, rng.integers(0, 3, size=40))
        totals = np.asarray(X.sum(axis=0)).ravel()
        for _ in range(10):
            sample_cluster_params(st, 1.0, np.ones(6), rng)
            sample_assignments(X, st, rng)
            sample_subclusters(X, st, 1.0, np.ones(6), rng)
            check_conservation(st, totals, 40)
            assert st.K == 3  # restricted: never empties a cluster


class TestSplit:
    X = as_points(np.array([[2, 0], [0, 2]]))
    beta = np.array([0.1, 0.1])

    def reference_log_h(self, gamma=1.0):
        left = lgamma_marginal([2, 0], [0.1, 0.1])
        right = lgamma_marginal([0, 2], [0.1, 0.1])
        whole = lgamma_marginal([2, 2], [0.1, 0.1])
        return (math.log(gamma) + math.lgamma(1) + left + math.lgamma(1) + right
                - math.lgamma(2) - whole)

    def test_ratio_matches_reference(self):
        got = log_split_ratio(1, [2, 0], 1, [0, 2], 1.0, self.beta)
        assert got == pytest.approx(self.reference_log_h(), abs=1e-12)

    def _attempt(self, gamma, u):
        st = _state(self.X, [0, 0])
        logp = np.log(np.full((2, 2), 0.5))
        return propose_splits(st, 0, gamma, self.beta, FixedRng(u), self.X,
                              logp=logp, sides=np.array([0, 1]))

    def test_decision_matches_reference(self):
        # one cluster and a uniform proposal q = 2 * 0.5 * 0.5, so the log
        # acceptance is log H - log q (selection terms are both 1)
        log_a = self.reference_log_h(gamma=1.0) - math.log(0.5)
        assert log_a > 0  # H = 88/3 here: always accepted
        assert self._attempt(1.0, 1 - 1e-12) is not None

    def test_threshold_matches_reference(self):
        gamma = 0.01
        a = math.exp(self.reference_log_h(gamma) - math.log(0.5))
        assert 0 < a < 1
        assert self._attempt(gamma, a * (1 - 1e-9)) is not None
        assert self._attempt(gamma, a * (1 + 1e-9)) is None

    def test_empty_side_no_proposal(self):
        st = _state(self.X, [0, 0])
        logp = np.log(np.full((2, 2), 0.5))
        assert propose_splits(st, 0, 1.0, self.beta, FixedRng(1e-300), self.X,
                              logp=logp, sides=np.array([0, 0])) is None
        assert st.K == 1

    def test_accepted_split_conserves(self):
        st = _state(self.X, [0, 0])
        logp = np.log(np.full((2, 2), 0.5))
        new = propose_splits(st, 0, 1.0, self.beta, FixedRng(1e-300), self.X,
                             logp=logp, sides=np.array([0, 1]))
        assert new == 1
        assert st.counts.tolist() == [1, 1]
        np.testing.assert_array_equal(st.stats.sum(axis=0), [2, 2])


class TestMerge:
    def test_single_cluster_unchanged(self):
        X = as_points(np.array([[1, 2], [2, 1]]))
        st = _state(X, [0, 0], sub=[0, 1])
        sample_cluster_params(st, 1.0, np.ones(2), np.random.default_rng(0))
        sample_subclusters(X, st, 1.0, np.ones(2), np.random.default_rng(0))
        z = st.z.copy()

        class MergeOnly(FixedRng):
            def choice(self, *a, **k):
                raise AssertionError("no pair to merge")

        split_merge(st, 1.0, np.ones(2), MergeOnly(0.9), X, attempts=4)
        np.testing.assert_array_equal(st.z, z)
        assert st.K == 1

    def test_merge_then_resplit_restores(self):
        X = as_points(np.array([[3, 0], [4, 0], [0, 5], [0, 2]]))
        st = _state(X, [0, 0, 1, 1])
        before = st.z.copy()
        assert propose_merges(st, 0, 1, 1.0, np.ones(2), FixedRng(1e-300), X)
        prune(st)
        assert st.K == 1 and np.all(st.z == 0)
        np.testing.assert_array_equal(st.sub, [0, 0, 1, 1])
        logp = np.log(np.full((4, 2), 0.5))
        new = propose_splits(st, 0, 1.0, np.ones(2), FixedRng(1e-300), X,
                             logp=logp, sides=st.sub.copy())
        assert new == 1
        np.testing.assert_array_equal(st.z, before)

    def test_merge_ratio_is_reciprocal(self):
        beta = [50.0, 50.0]
        ref = (math.log(1.0) + math.lgamma(2) + lgamma_marginal([3, 3], beta)
               + math.lgamma(2) + lgamma_marginal([3, 3], beta)
               - math.lgamma(4) - lgamma_marginal([6, 6], beta))
        got = log_split_ratio(2, [3, 3], 2, [3, 3], 1.0, np.array(beta))
        assert -got == pytest.approx(-ref, abs=1e-12)


class TestRun:
    def test_single_point(self):
        trace = run_dpmm(np.array([[3, 1, 0]]), DpmmConfig(iterations=25, seed=1))
        assert len(trace) == 25
        assert np.all(trace.n_clusters == 1)

    def test_labels_compact(self):
        X = np.random.default_rng(0).integers(0, 3, size=(25, 4))
        trace = run_dpmm(X, DpmmConfig(iterations=30, seed=2))
        for labels, k in zip(trace.labels, trace.n_clusters):
            assert labels.max() == k - 1
            assert set(labels.tolist()) == set(range(k))

    def test_deterministic_and_worker_independent(self):
        X = sp.csr_matrix(np.random.default_rng(1).integers(0, 3, size=(60, 5)))
        a = run_dpmm(X, DpmmConfig(iterations=20, seed=5, shard_size=16))
        b = run_dpmm(X, DpmmConfig(iterations=20, seed=5, shard_size=16))
        c = run_dpmm(X, DpmmConfig(iterations=20, seed=5, shard_size=16, workers=3))
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.labels, c.labels)

    def test_debug_conservation_every_iteration(self):
        rng = np.random.default_rng(3)
        X = np.vstack([rng.multinomial(20, [0.8, 0.1, 0.1], size=15),
                       rng.multinomial(20, [0.1, 0.1, 0.8], size=15)])
        totals = X.sum(axis=0)
        seen = []

        def check(it, state):
            check_conservation(state, totals, X.shape[0])
            seen.append(it)

        run_dpmm(X, DpmmConfig(iterations=40, seed=0, debug=True), callback=check)
        assert seen == list(range(40))

    def test_recovers_two_groups(self):
        rng = np.random.default_rng(7)
        X = np.vstack([rng.multinomial(50, [0.45, 0.45, 0.05, 0.05], size=20),
                       rng.multinomial(50, [0.05, 0.05, 0.45, 0.45], size=20)])
        trace = run_dpmm(X, DpmmConfig(iterations=60, seed=0))
        assert trace.n_clusters[-1] == 2
        last = trace.labels[-1]
        assert len(set(last[:20])) == 1 and len(set(last[20:])) == 1
        assert last[0] != last[20]

    def test_zero_row_flagged(self):
        X = np.array([[1, 2], [0, 0], [2, 1]])
        trace = run_dpmm(X, DpmmConfig(iterations=5))
        assert trace.flagged.tolist() == [1]

    def test_no_data(self):
        with pytest.raises(ValueError):
            run_dpmm(np.zeros((3, 2), dtype=int), DpmmConfig(iterations=2))


def test_trace_csv(tmp_path):
    tr = AssignmentTrace(labels=np.array([[0, 1], [0, 0], [1, 0]]),
                         n_clusters=np.array([2, 1, 2]))
    tr.to_csv(tmp_path / "l.csv", tmp_path / "k.csv", thin=2)
    assert (tmp_path / "k.csv").read_text() == "iteration,K\n0,2\n1,1\n2,2\n"
    assert (tmp_path / "l.csv").read_text() == (
        "iteration,point_index,label\n0,0,0\n0,1,1\n2,0,1\n2,1,0\n")


def test_initial_state_single_cluster():
    X = as_points(np.array([[1, 0], [0, 1], [1, 1]]))
    st = initial_state(X, np.random.default_rng(0))
    assert st.K == 1 and st.counts.tolist() == [3]
    assert st.sub_counts.sum() == 3
