from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from lyricsmith.corpus import SongForm
from lyricsmith.metrics import (
    EmptyInputError,
    LengthMismatchError,
    build_report,
    consistency_matrices,
    levenshtein,
    nld,
    scd,
    scerr,
    similarity,
)
from lyricsmith.planner import Granularity, SyllablePair

from .conftest import make_doc


# -- Independent brute-force references (kept deliberately naive) ---------------


def scd_reference(expected, realized):
    n = len(expected)
    total = 0.0
    for s, r in zip(expected, realized):
        term1 = abs(s - r) / s
        term2 = abs(s - r) / (r if r != 0 else 1)
        total += term1 + term2
    return total / (2 * n)


def scerr_reference(expected, realized):
    return 100.0 * sum(int(s != r) for s, r in zip(expected, realized)) / len(expected)


def levenshtein_reference(a: str, b: str) -> int:
    rows = len(a) + 1
    cols = len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        table[i][0] = i
    for j in range(cols):
        table[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(
                table[i - 1][j] + 1, table[i][j - 1] + 1, table[i - 1][j - 1] + cost
            )
    return table[-1][-1]


def test_scd_examples():
    assert scd([4], [4]) == 0.0
    assert scd([4, 6], [4, 3]) == pytest.approx(0.375)  # (1/4)(0 + 0.5 + 1.0)
    assert scd([2], [1]) == pytest.approx(0.75)  # (1/2)(0.5 + 1.0)


def test_scd_zero_realized_floors_denominator():
    assert scd([3], [0]) == pytest.approx((3 / 3 + 3 / 1) / 2)


def test_scd_errors():
    with pytest.raises(LengthMismatchError):
        scd([1, 2], [1])
    with pytest.raises(EmptyInputError):
        scd([], [])


def test_scerr_examples():
    assert scerr([4, 6, 2], [4, 6, 2]) == 0.0
    assert scerr([4, 6, 2], [4, 5, 2]) == pytest.approx(100 / 3)
    assert scerr([1, 2], [2, 3]) == 100.0


def test_levenshtein_examples():
    assert levenshtein("kitten", "sitting") == 3
    assert nld("kitten", "sitting") == pytest.approx(3 / 7)
    assert levenshtein("same", "same") == 0
    assert nld("", "abc") == 1.0
    assert nld("", "") == 0.0


def test_metric_randomized_against_references():
    rng = random.Random(2024)
    for _ in range(1000):
        n = rng.randint(1, 12)
        expected = [rng.randint(1, 40) for _ in range(n)]
        realized = [rng.randint(0, 40) for _ in range(n)]
        assert abs(scd(expected, realized) - scd_reference(expected, realized)) < 1e-9
        assert abs(scerr(expected, realized) - scerr_reference(expected, realized)) < 1e-9
    alphabet = "abcde"
    for _ in range(300):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
        assert levenshtein(a, b) == levenshtein_reference(a, b)


def test_scd_symmetry_positive_entries():
    rng = random.Random(7)
    for _ in range(200):
        n = rng.randint(1, 8)
        s = [rng.randint(1, 20) for _ in range(n)]
        r = [rng.randint(1, 20) for _ in range(n)]
        assert scd(s, r) == pytest.approx(scd(r, s))
        assert (scd(s, s) == 0.0) and (scerr(s, s) == 0.0)
        assert (scerr(s, r) == 0.0) == (scd(s, r) == 0.0)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=20), st.text(max_size=20), st.text(max_size=20))
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert 0.0 <= nld(a, b) <= 1.0


def test_similarity_contracts():
    assert similarity("hello world", "hello world") == pytest.approx(1.0, abs=1e-6)
    assert similarity("", "anything") == 0.0
    assert similarity("hello", "") == 0.0
    # Bucket-disjoint vocabularies score ~0 under the hashed default.
    value = similarity("water garden", "melody gold")
    assert abs(value) < 0.5  # no shared buckets barring hash collisions
    custom = similarity("a", "b", scorer=lambda x, y: 0.25)
    assert custom == 0.25


def test_file_similarity_scorer(tmp_path):
    import hashlib
    import json

    from lyricsmith.metrics import FileSimilarityScorer

    key = (
        hashlib.sha256(b"input text").hexdigest()
        + ":"
        + hashlib.sha256(b"generated").hexdigest()
    )
    path = tmp_path / "scores.json"
    path.write_text(json.dumps({key: 0.83}))
    scorer = FileSimilarityScorer(path)
    assert similarity("input text", "generated", scorer) == pytest.approx(0.83)
    with pytest.raises(KeyError):
        scorer("missing", "pair")


def test_build_report_pools_per_granularity():
    pairs = [
        [
            SyllablePair(Granularity.LINE, 4, 4),
            SyllablePair(Granularity.WORD, 2, 1),
        ],
        [SyllablePair(Granularity.PARAGRAPH, 9, 9)],
    ]
    report = build_report(pairs, similarities={"full": [0.5, 0.7]})
    assert report.columns["full"].count == 3
    assert report.columns["full"].scerr == pytest.approx(100 / 3)
    assert report.columns["word"].scerr == 100.0
    assert report.columns["line"].scd == 0.0
    assert report.columns["full"].similarity == pytest.approx(0.6)
    table = report.to_table()
    assert "Full" in table and "Paragraph" in table
    with pytest.raises(EmptyInputError):
        build_report([])


def test_consistency_identical_choruses_and_skips():
    chorus = ["la la la", "water line"]
    song = make_doc(
        (SongForm.VERSE, 1, ["hello bright world"]),
        (SongForm.CHORUS, 1, chorus),
        (SongForm.CHORUS, 2, chorus),
    )
    single = make_doc((SongForm.VERSE, 1, ["alone here"]))
    mats = consistency_matrices([song, single])
    key = (SongForm.CHORUS, SongForm.CHORUS)
    assert mats.nld[key] == 0.0
    assert mats.similarity[key] == pytest.approx(1.0, abs=1e-6)
    assert mats.counts[key] == 1
    # The single-paragraph song contributes nothing: verse pairs only come
    # from song1's verse against its two choruses.
    assert mats.counts[(SongForm.VERSE, SongForm.CHORUS)] == 2
    assert (SongForm.VERSE, SongForm.VERSE) not in mats.counts


def test_consistency_hand_averaged():
    # Two songs, <= 6 pairs total, averaged by hand.
    song1 = make_doc(
        (SongForm.VERSE, 1, ["aa bb"]),
        (SongForm.CHORUS, 1, ["aa bb"]),
    )
    song2 = make_doc(
        (SongForm.VERSE, 1, ["aa"]),
        (SongForm.CHORUS, 1, ["bb cc"]),
    )
    mats = consistency_matrices([song1, song2])
    key = (SongForm.CHORUS, SongForm.VERSE)
    # song1: nld("aa bb","aa bb") = 0; song2: nld("aa","bb cc") = 5/5 = 1.
    assert mats.nld[key] == pytest.approx(0.5)
    assert mats.counts[key] == 2
    assert mats.nld[(SongForm.VERSE, SongForm.CHORUS)] == mats.nld[key]
