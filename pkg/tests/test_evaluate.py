import csv
import json
import logging

import pytest

from conjoined.bicluster import Bicluster, dumps_biclusters, load_biclusters, save_biclusters
from conjoined.evaluate import (REPORT_COLUMNS, RunResult, benchmark_report, jaccard_pair,
                                jaccard_score, write_report)


class TestJaccardPair:
    def test_identical(self):
        a = {(0, 0), (1, 2)}
        assert jaccard_pair(a, set(a)) == 1.0

    def test_disjoint(self):
        assert jaccard_pair({(0, 0)}, {(1, 1)}) == 0.0

    def test_one_seventh(self):
        a = {(0, 0), (0, 1), (1, 0), (1, 1)}
        b = {(1, 1), (1, 2), (2, 1), (2, 2)}
        assert jaccard_pair(a, b) == 1 / 7

    def test_bicluster_fast_path(self):
        a = Bicluster([0, 1], [0, 1])
        b = Bicluster([1, 2], [1, 2])
        assert jaccard_pair(a, b) == 1 / 7
        assert jaccard_pair(a, b) == jaccard_pair(a.cells(), b.cells())


class TestJaccardScore:
    A = Bicluster([0, 1], [0, 1])
    D = Bicluster([5, 6], [5, 6])

    def test_equal_sets(self):
        assert jaccard_score([self.A, self.D], [self.D, self.A]) == 1.0

    def test_half(self):
        assert jaccard_score([self.A], [self.A, self.D]) == 0.5
        assert jaccard_score([self.A, self.D], [self.A]) == 0.5

    def test_all_disjoint(self):
        assert jaccard_score([self.A], [self.D]) == 0.0

    def test_empty(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert jaccard_score([], [self.A]) == 0.0
        assert "empty" in caplog.text


class TestBicluster:
    def test_normalizes_indices(self):
        b = Bicluster([3, 1, 3], (2, 0), 0.5, [1, 0])
        assert b.rows == (1, 3) and b.cols == (0, 2) and b.topic_pair == (1, 0)
        assert b.size == 4

    def test_weight_bounds(self):
        with pytest.raises(ValueError):
            Bicluster([0], [0], 1.5)

    def test_round_trip(self, tmp_path):
        bs = [Bicluster([0, 2], [1], 0.25, (0, 1)), Bicluster([4], [3, 5])]
        save_biclusters(bs, tmp_path / "b.json")
        assert load_biclusters(tmp_path / "b.json") == bs

    def test_transposed(self):
        b = Bicluster([0], [1, 2], 0.3, (4, 5)).transposed()
        assert b.rows == (1, 2) and b.cols == (0,) and b.topic_pair == (5, 4)

    def test_load_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no such file"):
            load_biclusters(tmp_path / "x.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ValueError, match="malformed JSON"):
            load_biclusters(tmp_path / "bad.json")
        (tmp_path / "norows.json").write_text('[{"cols": [0]}]')
        with pytest.raises(ValueError):
            load_biclusters(tmp_path / "norows.json")
        (tmp_path / "oob.json").write_text(dumps_biclusters([Bicluster([9], [0])]))
        with pytest.raises(ValueError):
            load_biclusters(tmp_path / "oob.json", shape=(5, 5))


class TestReport:
    def results(self):
        out = [RunResult("2", "CDP", s, j, 1.0 + s) for s, j in enumerate([1.0, 0.8, 0.9])]
        out.append(RunResult("4", "CDP", 0, 0.0, 2.0, failed=True, error="boom"))
        return out

    def test_rows(self):
        rows = benchmark_report(self.results())
        assert [r["case"] for r in rows] == ["2", "4"]
        r2 = rows[0]
        assert r2["seeds"] == 3
        assert r2["mean_jaccard"] == pytest.approx(0.9)
        assert r2["sd_jaccard"] == pytest.approx(0.1)
        assert r2["mean_runtime_s"] == pytest.approx(2.0)
        assert rows[1]["failures"] == 1 and rows[1]["sd_jaccard"] == 0.0

    def test_order_independent(self):
        res = self.results()
        assert benchmark_report(res) == benchmark_report(res[::-1])

    def test_empty(self):
        with pytest.raises(ValueError, match="nothing to report"):
            benchmark_report([])

    def test_files(self, tmp_path):
        res = self.results()
        rows = benchmark_report(res)
        write_report(rows, res, tmp_path / "r.csv", tmp_path / "r.json")
        with open(tmp_path / "r.csv") as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == REPORT_COLUMNS
            assert len(list(reader)) == 2
        doc = json.loads((tmp_path / "r.json").read_text())
        assert len(doc["runs"]) == 4 and doc["runs"][-1]["failed"]
