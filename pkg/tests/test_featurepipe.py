from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ussr.featurepipe import (EncodedData, FeatureError, FeatureStats, Schema, batch_iter, fit_stats,
                              index_batches, rank_categories, read_cache, read_csv, signed_log, transform,
                              transform_rows, write_cache)

FIXTURE = Path(__file__).parent / "data" / "fixture20.csv"

LN2, LN4, LN8, LN16 = 0.6931471805599453, 1.3862943611198906, 2.0794415416798357, 2.772588722239781

# hand-computed from the fixture: C1 counts A6 B5 C4 D3 E2, C2 has w x y z five times each
FIXTURE_C1 = "ABCDEABCDEABCDABCABA"
FIXTURE_I1 = [0, 1, 3, 7, -1, -3, 15, 0, 1, 3, 7, -1, -3, 15, 0, 1, 3, 7, -1, -3]
LOG_OF = {0: 0.0, 1: LN2, 3: LN4, 7: LN8, 15: LN16, -1: -LN2, -3: -LN4}


def rows_from_counts(counts):
    return [{"C1": k, "label": "0"} for k, n in counts.items() for _ in range(n)]


def test_frequency_ranking_examples():
    stats = fit_stats(rows_from_counts({"A": 5, "B": 3, "C": 1}), cap=10, embed_dim=2)
    assert stats.vocab["C1"] == {"A": 1, "B": 2, "C": 3}
    stats = fit_stats(rows_from_counts({"A": 5, "B": 3, "C": 1}), cap=2, embed_dim=2)
    assert stats.vocab["C1"] == {"A": 1, "B": 2, "C": 0}
    assert fit_stats(rows_from_counts({"A": 1}), cap=5, embed_dim=2).vocab["C1"] == {"A": 1}


def test_ties_broken_lexicographically():
    assert rank_categories(Counter({"b": 2, "a": 2, "c": 3}), cap=10) == {"c": 1, "a": 2, "b": 3}


def test_fit_on_empty_input_fails():
    with pytest.raises(FeatureError):
        fit_stats([], cap=3, embed_dim=2)


def test_signed_log_examples():
    assert signed_log(0.0) == 0.0
    assert signed_log(np.e - 1) == pytest.approx(1.0, abs=1e-15)
    assert signed_log(-(np.e - 1)) == pytest.approx(-1.0, abs=1e-15)


def test_unseen_category_maps_to_zero():
    stats = fit_stats([{"I1": "1", "C1": "A", "label": "1"}], cap=5, embed_dim=2)
    ex = transform({"I1": "0", "C1": "ZZZ", "label": "0"}, stats)
    assert ex.sparse.tolist() == [0]
    assert ex.dense.tolist() == [0.0]


def test_malformed_rows_report_row_number():
    stats = fit_stats([{"I1": "1", "C1": "A", "label": "1"}], cap=5, embed_dim=2)
    with pytest.raises(FeatureError, match="row 7"):
        transform({"I1": "abc", "C1": "A", "label": "1"}, stats, row_number=7)
    with pytest.raises(FeatureError, match="row 3"):
        transform({"I1": "1", "C1": "A", "label": "2"}, stats, row_number=3)


def test_unknown_header_rejected():
    with pytest.raises(FeatureError):
        Schema.from_header(["I1", "label", "extra"])
    with pytest.raises(FeatureError):
        Schema.from_header(["I1", "C1"])


def test_fixture_indexing_and_log_transform():
    rows = read_csv(FIXTURE)
    assert len(rows) == 20
    stats = fit_stats(rows, cap=3, embed_dim=4)
    assert stats.vocab["C1"] == {"A": 1, "B": 2, "C": 3, "D": 0, "E": 0}
    assert stats.vocab["C2"] == {"w": 1, "x": 2, "y": 3, "z": 0}
    data = transform_rows(rows, stats)
    expected_c1 = [{"A": 1, "B": 2, "C": 3, "D": 0, "E": 0}[c] for c in FIXTURE_C1]
    assert data.sparse[:, 0].tolist() == expected_c1
    assert data.sparse[:, 1].tolist() == [2, 3, 1, 0] * 5
    assert data.dense[:, 0].tolist() == [LOG_OF[v] for v in FIXTURE_I1]
    assert data.dense[:2, 1].tolist() == [0.0, 1.0]      # empty cell, then e - 1
    assert data.label.tolist() == [n % 2 for n in range(20)]
    assert data.segment.tolist() == [n % 3 for n in range(20)]
    assert (data.sparse <= stats.cap).all()


def test_fixture_without_cap_pressure():
    stats = fit_stats(read_csv(FIXTURE), cap=10, embed_dim=4)
    assert stats.vocab["C1"] == {"A": 1, "B": 2, "C": 3, "D": 4, "E": 5}
    assert stats.field_sizes() == [6, 5]


def test_stats_json_round_trip():
    stats = fit_stats(read_csv(FIXTURE), cap=3, embed_dim=4)
    again = FeatureStats.from_json(stats.to_json())
    assert again == stats
    assert again.to_json() == stats.to_json()


def test_transform_is_pure():
    rows = read_csv(FIXTURE)
    stats = fit_stats(rows, cap=3, embed_dim=4)
    a, b = transform(rows[5], stats), transform(rows[5], stats)
    assert a.dense.tobytes() == b.dense.tobytes() and a.sparse.tolist() == b.sparse.tolist()


def test_batch_sizes():
    assert [len(b) for b in index_batches(10, 4)] == [4, 4, 2]
    with pytest.raises(ValueError):
        list(index_batches(10, 0))


def test_shuffle_determinism_and_permutation():
    a = np.concatenate(list(index_batches(50, 8, shuffle_seed=3)))
    b = np.concatenate(list(index_batches(50, 8, shuffle_seed=3)))
    c = np.concatenate(list(index_batches(50, 8, shuffle_seed=4)))
    assert a.tolist() == b.tolist()
    assert a.tolist() != c.tolist()
    assert sorted(c.tolist()) == list(range(50))


def test_batch_iter_yields_rows():
    rows = read_csv(FIXTURE)
    data = transform_rows(rows, fit_stats(rows, cap=3, embed_dim=4))
    seen = np.concatenate([b.label for b in batch_iter(data, 6, shuffle_seed=1)])
    assert sorted(seen.tolist()) == sorted(data.label.tolist())


def test_cache_round_trip_is_bit_identical(tmp_path):
    rows = read_csv(FIXTURE)
    data = transform_rows(rows, fit_stats(rows, cap=3, embed_dim=4))
    write_cache(data, tmp_path / "d.enc")
    back = read_cache(tmp_path / "d.enc")
    for f in ("dense", "sparse", "label", "segment"):
        assert getattr(back, f).tobytes() == getattr(data, f).tobytes()
    write_cache(back, tmp_path / "e.enc")
    assert (tmp_path / "d.enc").read_bytes() == (tmp_path / "e.enc").read_bytes()


def test_cache_rejects_bad_magic_and_truncation(tmp_path):
    rows = read_csv(FIXTURE)
    write_cache(transform_rows(rows, fit_stats(rows, cap=3, embed_dim=4)), tmp_path / "d.enc")
    raw = (tmp_path / "d.enc").read_bytes()
    (tmp_path / "t.enc").write_bytes(raw[:-5])
    with pytest.raises(FeatureError, match="size"):
        read_cache(tmp_path / "t.enc")
    (tmp_path / "m.enc").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FeatureError, match="magic"):
        read_cache(tmp_path / "m.enc")


def test_csv_field_count_checked(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("I1,C1,label\n1,a,0\n2,b\n")
    with pytest.raises(FeatureError, match="row 3"):
        read_csv(p)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3), st.integers(1, 20), min_size=1, max_size=12),
       st.integers(1, 15))
def test_index_invariants(counts, cap):
    ranks = rank_categories(Counter(counts), cap)
    nonzero = sorted(v for v in ranks.values() if v)
    assert nonzero == list(range(1, min(cap, len(counts)) + 1))
    assert max(ranks.values()) <= cap
    # a more frequent category never gets a larger nonzero index
    for a, ia in ranks.items():
        for b, ib in ranks.items():
            if ia and ib and counts[a] > counts[b]:
                assert ia < ib


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_signed_log_is_odd_and_monotone(v):
    assert signed_log(-v) == -signed_log(v)
    assert signed_log(v + 1.0) >= signed_log(v)


def test_encoded_data_indexing():
    d = EncodedData(np.arange(6.0).reshape(3, 2), np.ones((3, 1)), [0, 1, 0], [2, 1, 0])
    assert d[1].dense.tolist() == [[2.0, 3.0]]
    ex = d.example(2)
    assert ex.segment == 0 and ex.label == 0
    assert len(EncodedData.concat([d, d])) == 6
