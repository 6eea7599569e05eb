from __future__ import annotations

import random
from pathlib import Path

import pytest

from lyricsmith.corpus import Line, Paragraph, SongDocument, SongForm, Word
from lyricsmith.decoder import OracleModel
from lyricsmith.synth import generate_corpus
from lyricsmith.tokenizer import train_vocab

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def toy_docs():
    return generate_corpus(60, seed=9)


@pytest.fixture(scope="session")
def toy_vocab(toy_docs):
    return train_vocab((d.text for d in toy_docs), 8192)


@pytest.fixture(scope="session")
def oracle(toy_vocab):
    return OracleModel(toy_vocab)


def make_doc(*paragraph_specs: tuple[SongForm, int, list[str]], doc_id: str = "t") -> SongDocument:
    """Document from (form, index, [line text, ...]) triples."""
    from lyricsmith.syllables import count_word

    paragraphs = []
    for form, index, lines in paragraph_specs:
        built = tuple(
            Line(tuple(Word(w, count_word(w)) for w in line.split()))
            for line in lines
        )
        paragraphs.append(Paragraph(form, index, built))
    return SongDocument(id=doc_id, paragraphs=tuple(paragraphs))


def random_document(rng: random.Random, doc_id: str = "r") -> SongDocument:
    """Random synthetic-vocabulary document with sequential form indices."""
    from lyricsmith.synth import synth_vocabulary

    vocab = synth_vocabulary(seed=4)
    pools = [vocab.verse_words, vocab.chorus_words]
    forms = list(SongForm)
    counts: dict[SongForm, int] = {}
    paragraphs = []
    for _ in range(rng.randint(1, 4)):
        form = forms[rng.randrange(len(forms))]
        counts[form] = counts.get(form, 0) + 1
        pool = pools[rng.randrange(2)]
        lines = []
        for _ in range(rng.randint(1, 4)):
            words = []
            for _ in range(rng.randint(1, 6)):
                syllables = rng.choice((1, 2, 3, 4))
                words.append(Word(rng.choice(pool[syllables]), syllables))
            lines.append(Line(tuple(words)))
        paragraphs.append(Paragraph(form, counts[form], tuple(lines)))
    return SongDocument(id=doc_id, paragraphs=tuple(paragraphs))
