import numpy as np
import pytest

from conjoined.countmat import (CountMatrixError, SparseCountMatrix, load_dense_csv,
                                load_matrix, load_matrix_market, preprocess, subset,
                                to_tokens, transpose, write_dense_csv, write_matrix_market)
from conjoined.synth import case_presets, simulate

HEADER = "%%MatrixMarket matrix coordinate integer general\n"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _entries(m):
    return sorted(zip(m.rows.tolist(), m.cols.tolist(), m.counts.tolist()))


class TestMatrixMarket:
    def test_single_entry(self, tmp_path):
        m = load_matrix_market(_write(tmp_path, "a.mtx", HEADER + "2 2 1\n1 1 5\n"))
        assert m.shape == (2, 2)
        assert _entries(m) == [(0, 0, 5)]
        assert m.total == 5

    def test_duplicates_are_summed(self, tmp_path):
        m = load_matrix_market(_write(tmp_path, "a.mtx", HEADER + "2 2 2\n1 1 2\n1 1 3\n"))
        assert _entries(m) == [(0, 0, 5)]

    def test_out_of_bounds(self, tmp_path):
        p = _write(tmp_path, "a.mtx", HEADER + "2 2 1\n3 1 4\n")
        with pytest.raises(CountMatrixError, match="index out of bounds"):
            load_matrix_market(p)

    def test_comments_and_explicit_zeros(self, tmp_path):
        p = _write(tmp_path, "a.mtx", HEADER + "% note\n2 3 2\n1 2 0\n2 3 7\n")
        m = load_matrix_market(p)
        assert _entries(m) == [(1, 2, 7)]

    @pytest.mark.parametrize("body,msg", [
        ("2 2\n", "malformed size line"),
        ("2 2 1\n1 1\n", "expected 'row col value'"),
        ("2 2 1\n1 1 x\n", "non-integer value"),
        ("2 2 1\n1 1 -1\n", "negative count"),
    ])
    def test_malformed(self, tmp_path, body, msg):
        with pytest.raises(CountMatrixError, match=msg):
            load_matrix_market(_write(tmp_path, "a.mtx", HEADER + body))

    def test_bad_header(self, tmp_path):
        p = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix array real general\n2 2\n")
        with pytest.raises(CountMatrixError, match="malformed header"):
            load_matrix_market(p)

    def test_round_trip(self, tmp_path):
        m = SparseCountMatrix.from_dense([[0, 3, 1], [2, 0, 0]])
        write_matrix_market(m, tmp_path / "m.mtx")
        assert load_matrix_market(tmp_path / "m.mtx") == m


class TestDenseCsv:
    def test_basic(self, tmp_path):
        m = load_dense_csv(_write(tmp_path, "a.csv", "0,2\n1,0\n"))
        assert _entries(m) == [(0, 1, 2), (1, 0, 1)]
        assert m.total == 3

    def test_all_zero(self, tmp_path):
        m = load_dense_csv(_write(tmp_path, "a.csv", "0,0\n0,0\n"))
        assert m.nnz == 0 and m.total == 0 and m.shape == (2, 2)

    def test_non_integer(self, tmp_path):
        with pytest.raises(CountMatrixError, match="non-integer cell at row 1, column 2"):
            load_dense_csv(_write(tmp_path, "a.csv", "1,x\n"))

    def test_ragged(self, tmp_path):
        with pytest.raises(CountMatrixError, match="ragged row 2"):
            load_dense_csv(_write(tmp_path, "a.csv", "1,2\n3\n"))

    def test_labels(self, tmp_path):
        m = load_dense_csv(_write(tmp_path, "a.csv", ",c1,c2\nGeneA,1,0\nGeneB,0,4\n"),
                           has_labels=True)
        assert list(m.row_labels) == ["GeneA", "GeneB"]
        assert list(m.col_labels) == ["c1", "c2"]
        assert _entries(m) == [(0, 0, 1), (1, 1, 4)]

    def test_round_trip_with_labels(self, tmp_path):
        m = SparseCountMatrix.from_dense([[1, 0], [0, 2]], ["a", "b"], ["x", "y"])
        write_dense_csv(m, tmp_path / "m.csv", with_labels=True)
        back = load_dense_csv(tmp_path / "m.csv", has_labels=True)
        assert back == m
        assert list(back.row_labels) == ["a", "b"]


def test_load_matrix_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.mtx"):
        load_matrix(tmp_path / "nope.mtx")


class TestPreprocess:
    def test_drops_zero_row(self):
        m = SparseCountMatrix.from_dense([[1, 2, 0], [0, 0, 0], [0, 3, 4]])
        out = preprocess(m)
        assert out.shape == (2, 3)
        np.testing.assert_array_equal(out.to_dense(), [[1, 2, 0], [0, 3, 4]])

    def test_unchanged_without_zeros(self):
        m = SparseCountMatrix.from_dense([[1, 2], [3, 4]])
        assert preprocess(m) == m

    def test_merge_duplicate_labels(self):
        m = SparseCountMatrix.from_dense([[1, 0], [0, 2]], ["GeneA", "GeneA"], ["x", "y"])
        out = preprocess(m, merge_duplicate_labels=True)
        assert list(out.row_labels) == ["GeneA"]
        np.testing.assert_array_equal(out.to_dense(), [[1, 2]])

    def test_empty_after(self):
        with pytest.raises(CountMatrixError, match="empty after preprocessing"):
            preprocess(SparseCountMatrix.from_dense([[0, 0]]))

    def test_subset_order(self):
        m = SparseCountMatrix.from_dense([[1, 2], [3, 4]])
        np.testing.assert_array_equal(subset(m, [1, 0], [1]).to_dense(), [[4], [2]])


class TestTranspose:
    def test_entry(self):
        m = SparseCountMatrix.from_triples(2, 3, [0], [1], [5])
        t = transpose(m)
        assert t.shape == (3, 2) and _entries(t) == [(1, 0, 5)]

    def test_involution(self):
        m = SparseCountMatrix.from_dense([[0, 1, 2], [3, 0, 0]])
        assert transpose(transpose(m)) == m
        assert transpose(m).total == m.total


class TestTokens:
    def test_single_cell(self):
        tok = to_tokens(SparseCountMatrix.from_triples(1, 1, [0], [0], [3]))
        assert len(tok) == 3
        assert tok.row_of.tolist() == [0, 0, 0] and tok.col_of.tolist() == [0, 0, 0]

    def test_case2_length(self):
        m, _ = simulate(case_presets(2, seed=0))
        assert len(to_tokens(m)) == 4000

    def test_round_trip(self):
        m = SparseCountMatrix.from_dense([[0, 2, 1], [4, 0, 0]])
        assert to_tokens(m).to_matrix() == m

    def test_empty_rejected(self):
        with pytest.raises(CountMatrixError):
            to_tokens(SparseCountMatrix.from_dense([[0]]))


def test_invalid_triples():
    with pytest.raises(CountMatrixError):
        SparseCountMatrix.from_triples(2, 2, [2], [0], [1])
    with pytest.raises(CountMatrixError):
        SparseCountMatrix.from_triples(2, 2, [0], [0], [-1])
