from __future__ import annotations

import random

import pytest

from lyricsmith.corpus import (
    BadRatiosError,
    EmptySectionError,
    NoSectionsError,
    SongForm,
    UnknownFormError,
    WordlistScorer,
    build_line_frequencies,
    doc_from_json,
    doc_to_json,
    is_english,
    parse_song,
    render_song,
    score_toxicity,
    split_corpus,
    summarize_for_eval,
)
from lyricsmith.synth import generate_corpus

from .conftest import make_doc


def test_parse_two_sections():
    doc = parse_song("[Verse 1]\nhello world\n\n[Chorus]\nla la la")
    assert [p.form for p in doc.paragraphs] == [SongForm.VERSE, SongForm.CHORUS]
    assert doc.paragraphs[0].form_index == 1
    assert doc.paragraphs[0].lines[0].text == "hello world"


def test_parse_unknown_form():
    with pytest.raises(UnknownFormError):
        parse_song("[Interlude]\nhmm")


def test_parse_empty_section():
    with pytest.raises(EmptySectionError):
        parse_song("[Chorus]\n\n")


def test_parse_no_sections():
    with pytest.raises(NoSectionsError):
        parse_song("just some text\n")


def test_header_tolerance():
    for header in ("[PRE-CHORUS]", "[pre chorus 2]", "[Pre-Chorus 2]", "[pre_chorus]"):
        doc = parse_song(f"{header}\nla la")
        assert doc.paragraphs[0].form == SongForm.PRE_CHORUS
    assert parse_song("[pre chorus 2]\nla").paragraphs[0].form_index == 2


def test_syllable_annotation_consistency():
    from lyricsmith.syllables import count_word

    doc = parse_song("[Verse 1]\nhello bright water\n\n[Bridge]\nsilver line")
    for paragraph in doc.paragraphs:
        for line in paragraph.lines:
            for word in line.words:
                assert word.syllables == count_word(word.text)


def test_numeric_tokens_dropped():
    doc = parse_song("[Verse 1]\nhello 42 world")
    assert [w.text for w in doc.paragraphs[0].lines[0].words] == ["hello", "world"]


def test_render_parse_round_trip():
    rng = random.Random(5)
    for doc in generate_corpus(25, seed=rng.randrange(1000)):
        again = parse_song(render_song(doc), doc.id)
        assert again.paragraphs == doc.paragraphs


def test_json_round_trip():
    doc = make_doc((SongForm.VERSE, 1, ["hello world", "water line"]))
    assert doc_from_json(doc_to_json(doc)) == doc


def test_language_gate():
    english = make_doc((SongForm.VERSE, 1, ["hello world"]))
    assert is_english(english)
    cyrillic = parse_song("[Verse 1]\nпривет мир")
    assert not is_english(cyrillic)


def test_toxicity_default_scorer():
    doc = make_doc((SongForm.VERSE, 1, ["hello world"]))
    assert score_toxicity(doc, WordlistScorer([])) == 0.0
    assert score_toxicity(doc, lambda text: 1.0) == 1.0


def test_toxicity_hand_computed_fraction():
    # 20 words, 2 on the blocklist: 2/20 = 0.1 under the documented formula.
    words = ["ga"] * 18 + ["bad", "worse"]
    doc = make_doc((SongForm.VERSE, 1, [" ".join(words[:10]), " ".join(words[10:])]))
    scorer = WordlistScorer(["bad", "worse"])
    assert score_toxicity(doc, scorer) == pytest.approx(0.1)


def test_split_sizes_and_determinism():
    docs = generate_corpus(10, seed=1)
    train, valid, evals = split_corpus(docs, (0.8, 0.1, 0.1), seed=7)
    assert (len(train), len(valid), len(evals)) == (8, 1, 1)
    again = split_corpus(docs, (0.8, 0.1, 0.1), seed=7)
    assert ([d.id for d in train], [d.id for d in valid], [d.id for d in evals]) == (
        [d.id for d in again[0]],
        [d.id for d in again[1]],
        [d.id for d in again[2]],
    )
    ids = {d.id for d in train} | {d.id for d in valid} | {d.id for d in evals}
    assert len(ids) == 10


def test_split_degenerate_and_bad_ratios():
    docs = generate_corpus(3, seed=2)
    train, valid, evals = split_corpus(docs, (1.0, 0.0, 0.0), seed=0)
    assert (len(train), len(valid), len(evals)) == (3, 0, 0)
    with pytest.raises(BadRatiosError):
        split_corpus(docs, (0.5, 0.2, 0.2), seed=0)
    with pytest.raises(BadRatiosError):
        split_corpus(docs, (1.2, -0.1, -0.1), seed=0)


def test_summarize_single_line_and_saturation():
    doc = make_doc((SongForm.VERSE, 1, ["hello world"]))
    assert summarize_for_eval(doc, 1) == "hello world"
    doc2 = make_doc((SongForm.VERSE, 1, ["hello world", "water line"]))
    assert summarize_for_eval(doc2, 5) == "hello world. water line"


def test_summarize_prefers_rare_line():
    # Hand-scored on a 3-document toy corpus: "silver" and "window" appear in
    # one line each; "la" appears in many lines, making line B cheap.
    corpus = [
        make_doc((SongForm.VERSE, 1, ["la la la", "silver window"]), doc_id="a"),
        make_doc((SongForm.VERSE, 1, ["la la again"]), doc_id="b"),
        make_doc((SongForm.CHORUS, 1, ["la forever"]), doc_id="c"),
    ]
    freqs = build_line_frequencies(corpus)
    # line A = "silver window": 1/1 + 1/1 = 2.0; line B = "la la la": 3 * 1/3.
    assert freqs["la"] == 3 and freqs["silver"] == 1
    doc = corpus[0]
    assert summarize_for_eval(doc, 1, freqs) == "silver window"
