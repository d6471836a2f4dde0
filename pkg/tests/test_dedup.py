import itertools
import random

import numpy as np
import pytest

from casma import dedup
from casma.records import Record


def dp_oracle(a: str, b: str) -> int:
    """Textbook full-table Wagner-Fischer, kept independent of the library code."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[-1][-1]


class TestLevenshtein:
    def test_kitten_sitting(self):
        assert dedup.levenshtein("kitten", "sitting") == 3

    @pytest.mark.parametrize("s", ["", "a", "endometriosis"])
    def test_empty(self, s):
        assert dedup.levenshtein("", s) == len(s)

    def test_case_significant_whitespace_not(self):
        assert dedup.levenshtein("GnRH  agonist ", "GnRH agonist") == 0
        assert dedup.levenshtein("GnRH", "gnrh") == 3

    def test_nfc(self):
        assert dedup.levenshtein("café", "café") == 0

    def test_matches_oracle_on_random_strings(self):
        rng = random.Random(7)
        for _ in range(200):
            a = "".join(rng.choice("abc ") for _ in range(rng.randint(0, 12))).strip()
            b = "".join(rng.choice("abc ") for _ in range(rng.randint(0, 12))).strip()
            a, b = " ".join(a.split()), " ".join(b.split())
            assert dedup.levenshtein(a, b) == dp_oracle(a, b)

    def test_bounded_agrees_within_limit(self):
        rng = random.Random(11)
        for _ in range(300):
            a = "".join(rng.choice("xyz") for _ in range(rng.randint(0, 10)))
            b = "".join(rng.choice("xyz") for _ in range(rng.randint(0, 10)))
            full = dp_oracle(a, b)
            for limit in (0, 1, 2, 4):
                got = dedup.bounded_levenshtein(a, b, limit)
                assert got == (full if full <= limit else None)


class TestTableS2:
    def test_vercellini_pair_zero(self, s2_titles):
        assert dedup.levenshtein(s2_titles[5], s2_titles[6]) == 0

    def test_pair_2_8(self, s2_titles):
        assert dedup.levenshtein(s2_titles[1], s2_titles[7]) == 58

    def test_matrix_vs_published(self, s2_titles, s2_matrix):
        """Every deviation is one short and sits on a pair with exactly one en-dash title (1 or 4)."""
        m = dedup.dissimilarity_matrix(list(zip(map(str, range(8)), s2_titles))).entries
        diff = m - s2_matrix
        cells = sorted((int(i) + 1, int(j) + 1) for i, j in zip(*np.nonzero(diff)) if i < j)
        assert cells == [(1, 2), (1, 6), (1, 7), (1, 8), (2, 4), (3, 4), (4, 6), (4, 7), (4, 8)]
        assert all((a in (1, 4)) != (b in (1, 4)) for a, b in cells)
        assert set(diff[np.nonzero(diff)].tolist()) == {-1}

    def test_double_hyphen_reproduces_all_cells(self, s2_titles, s2_matrix):
        fixed = [t.replace("–", "--") for t in s2_titles]
        m = dedup.dissimilarity_matrix(list(zip(map(str, range(8)), fixed))).entries
        np.testing.assert_array_equal(m, s2_matrix)

    def test_threshold_pairs(self, s2_titles):
        m = dedup.dissimilarity_matrix(list(zip(map(str, range(8)), s2_titles)))
        assert dedup.duplicate_pairs(m, 5) == [(5, 6)]
        assert (1, 7) in dedup.duplicate_pairs(m, 59)
        assert dedup.find_duplicate_pairs(s2_titles, 5) == [(5, 6, 0)]


class TestMatrix:
    def test_invariants(self, s2_titles):
        e = dedup.dissimilarity_matrix(list(zip(map(str, range(8)), s2_titles))).entries
        assert (e == e.T).all() and (np.diag(e) == 0).all() and (e >= 0).all()
        assert not e.flags.writeable

    def test_single_title(self):
        m = dedup.dissimilarity_matrix([("a", "title")])
        assert m.n == 1 and m.entries.tolist() == [[0]]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dedup.dissimilarity_matrix([])

    def test_permutation(self, s2_titles):
        sample = list(zip("abcd", s2_titles[:4]))
        base = dedup.dissimilarity_matrix(sample).entries
        for perm in itertools.permutations(range(4)):
            m = dedup.dissimilarity_matrix([sample[p] for p in perm]).entries
            np.testing.assert_array_equal(m, base[np.ix_(perm, perm)])

    def test_bit_identical(self, s2_titles):
        t = list(zip(map(str, range(8)), s2_titles))
        assert dedup.dissimilarity_matrix(t).entries.tobytes() == dedup.dissimilarity_matrix(t).entries.tobytes()

    def test_threshold_one_no_zeros(self):
        m = dedup.dissimilarity_matrix([("a", "abc"), ("b", "abd"), ("c", "xyz")])
        assert dedup.duplicate_pairs(m, 1) == []

    def test_threshold_validated(self):
        m = dedup.dissimilarity_matrix([("a", "abc")])
        with pytest.raises(ValueError):
            dedup.duplicate_pairs(m, 0)

    def test_triangle_inequality(self, s2_titles):
        e = dedup.dissimilarity_matrix(list(zip(map(str, range(8)), s2_titles))).entries
        for i, j, k in itertools.permutations(range(8), 3):
            assert e[i, k] <= e[i, j] + e[j, k]


def rec(n, date, source="manual"):
    return Record.build(source=source, title=f"title {n}", native_id=str(n), created_date=date)


class TestMerge:
    def test_transitive_component(self):
        recs = [rec(0, "2020-01-01"), rec(1, "2019-01-01"), rec(2, "2021-01-01"), rec(3, "2018-01-01")]
        kept, removed = dedup.merge_duplicates(recs, [(0, 1), (1, 2)])
        assert kept == [recs[1], recs[3]]
        assert removed == [recs[0], recs[2]]

    def test_empty_pairs(self):
        recs = [rec(0, None), rec(1, None)]
        assert dedup.merge_duplicates(recs, []) == (recs, [])

    def test_source_priority_tie_break(self):
        recs = [rec(0, "2020-01-01", "crossref"), rec(1, "2020-01-01", "pubmed")]
        kept, _ = dedup.merge_duplicates(recs, [(0, 1)])
        assert kept == [recs[1]]

    def test_stable_under_pair_order(self):
        recs = [rec(i, f"20{10 + i % 3}-01-01") for i in range(6)]
        pairs = [(0, 1), (1, 2), (3, 4), (4, 5), (0, 2)]
        base = dedup.merge_duplicates(recs, pairs)
        rng = random.Random(3)
        for _ in range(20):
            shuffled = [p if rng.random() < 0.5 else p[::-1] for p in rng.sample(pairs, len(pairs))]
            assert dedup.merge_duplicates(recs, shuffled) == base

    def test_bad_index(self):
        with pytest.raises(IndexError):
            dedup.merge_duplicates([rec(0, None)], [(0, 3)])
