import csv

import numpy as np
import pytest

from monosep.decoder import UndefinedReference, si_snr
from monosep.metrics import (
    CLAMP_DB,
    best_matching,
    counting_accuracy,
    format_count_table,
    format_separation_table,
    score_utterance,
    sdr_plain,
    sdri,
    separation_summary,
    si_snri,
    trim,
    write_count_csv,
    write_records_csv,
)


def test_si_snri_mixture_estimate(rng):
    s, x = rng.standard_normal((2, 100))
    assert si_snri(s, x, x) == 0.0


def test_si_snri_perfect(rng):
    s = rng.standard_normal(100)
    x = s + rng.standard_normal(100)
    assert si_snri(s, s, x) >= 80 - si_snr(s, x)


def test_si_snri_hand_case():
    s, x, s_hat = np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([1.0, 0.1])
    p = 1.0
    direct = 10 * np.log10(p * p / (1.0 * 1.01 - p * p + 1e-8) + 1e-8)
    assert si_snri(s, s_hat, x) == pytest.approx(direct - 0.0, abs=1e-6)


class TestSdr:
    def test_perfect(self, rng):
        s = rng.standard_normal(50)
        assert sdr_plain(s, s) == CLAMP_DB

    def test_zero_estimate(self, rng):
        assert sdr_plain(rng.standard_normal(50), np.zeros(50)) == 0.0

    def test_ten_db(self, rng):
        s = rng.standard_normal(64)
        e = rng.standard_normal(64)
        e *= np.sqrt(0.1 * (s @ s) / (e @ e))
        assert sdr_plain(s, s + e) == pytest.approx(10.0, abs=1e-9)

    def test_zero_reference(self):
        with pytest.raises(UndefinedReference):
            sdr_plain(np.zeros(5), np.ones(5))

    def test_improvement(self, rng):
        s = rng.standard_normal(64)
        x = s + rng.standard_normal(64)
        est = s + 0.1 * rng.standard_normal(64)
        assert sdri(s, est, x) == pytest.approx(sdr_plain(s, est) - sdr_plain(s, x))


class TestCounting:
    def test_all_correct(self):
        assert counting_accuracy([(2, 2), (3, 3), (3, 3)]) == {2: 100.0, 3: 100.0, "avg": 100.0}

    def test_macro_average(self):
        acc = counting_accuracy([(2, 2), (2, 3), (3, 3), (3, 3), (3, 3), (3, 1)])
        assert acc[2] == 50.0 and acc[3] == 75.0 and acc["avg"] == 62.5

    def test_empty(self):
        with pytest.raises(ValueError):
            counting_accuracy([])


class TestMatching:
    def test_square(self, rng):
        s = rng.standard_normal((3, 80))
        est = s[[1, 2, 0]] + 0.01 * rng.standard_normal((3, 80))
        assert best_matching(s, est) == [(0, 2), (1, 0), (2, 1)]

    def test_over_estimate(self, rng):
        s = rng.standard_normal((2, 80))
        est = np.vstack([rng.standard_normal(80), s[1], s[0]])
        assert best_matching(s, est) == [(0, 2), (1, 1)]

    def test_under_estimate(self, rng):
        s = rng.standard_normal((3, 80))
        est = s[[2]] + 0.01 * rng.standard_normal((1, 80))
        assert best_matching(s, est) == [(2, 0)]


class TestRecords:
    def test_improvements_consistent(self, rng):
        s = rng.standard_normal((2, 300))
        x = s.sum(0)
        est = s[::-1] + 0.2 * rng.standard_normal((2, 300))
        rec = score_utterance("u1", s, est, x)
        assert rec.permutation == (1, 0) and not rec.mismatch
        for i in range(2):
            ts, te, tx = trim(s[i]), trim(est[1 - i]), trim(x)
            assert rec.si_snri[i] == pytest.approx(si_snr(ts, te) - si_snr(ts, tx))
            assert rec.sdri[i] == pytest.approx(sdr_plain(ts, te) - sdr_plain(ts, tx))

    def test_trim(self):
        assert len(trim(np.zeros(100))) == 80
        assert len(trim(np.zeros(15))) == 15

    def test_mismatch_flag(self, rng):
        s = rng.standard_normal((3, 200))
        rec = score_utterance("u", s, s[:2], s.sum(0), n_est=2)
        assert rec.mismatch and len(rec.si_snri) == 2

    def test_csv_and_tables(self, rng, tmp_path):
        s = rng.standard_normal((2, 200))
        recs = [score_utterance(f"u{i}", s, s + 0.1 * rng.standard_normal(s.shape), s.sum(0))
                for i in range(3)]
        path = tmp_path / "r.csv"
        write_records_csv(path, recs)
        rows = list(csv.reader(open(path)))
        assert rows[0][0] == "id" and len(rows) == 4
        summary = separation_summary(recs)
        assert summary[2]["n"] == 3
        assert "SI-SNRi" in format_separation_table(summary)
        tables = {"gde": counting_accuracy([(2, 2), (3, 2)]), "rank": counting_accuracy([(2, 2), (3, 3)])}
        text = format_count_table(tables)
        assert "2 speakers" in text and "3 speakers" in text and "avg" in text
        write_count_csv(tmp_path / "c.csv", tables)
        lines = open(tmp_path / "c.csv").read().splitlines()
        assert lines == ["method,2_speakers,3_speakers,avg", "gde,100.00,0.00,50.00",
                         "rank,100.00,100.00,100.00"]
