"""Synthetic toy corpus with oracle-known syllable counts.

Words are consonant-vowel patterns (no e/y, so the syllable counter is exact
by construction), split into a chorus vocabulary and a verse vocabulary so
that song forms are lexically distinguishable. Choruses repeat verbatim
within a song and are drawn from a small global pool, giving a trainable
song-form consistency signal at desk scale.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import Line, Paragraph, SongDocument, SongForm, Word
from .syllables import count_word

_CONSONANTS = "bdfgklmnprst"
_VOWELS = "aiou"


def _pattern_words(syllables: int, rng: random.Random, count: int) -> list[str]:
    """Distinct CV(C) words with exactly the requested syllable count."""
    seen: set[str] = set()
    words: list[str] = []
    while len(words) < count:
        parts = []
        for _ in range(syllables):
            parts.append(rng.choice(_CONSONANTS) + rng.choice(_VOWELS))
        if rng.random() < 0.4:
            parts.append(rng.choice(_CONSONANTS))
        word = "".join(parts)
        if word in seen:
            continue
        seen.add(word)
        assert count_word(word) == syllables, word
        words.append(word)
    return words


@dataclass
class SynthVocabulary:
    chorus_words: dict[int, list[str]]
    verse_words: dict[int, list[str]]

    def all_words(self) -> list[str]:
        out = []
        for pool in (self.chorus_words, self.verse_words):
            for words in pool.values():
                out.extend(words)
        return out


def synth_vocabulary(seed: int = 0) -> SynthVocabulary:
    """~100 words: 40 chorus-flavored, 60 verse-flavored, 1-4 syllables."""
    rng = random.Random(seed)
    sizes = {1: 30, 2: 30, 3: 25, 4: 15}
    chorus_share = {1: 12, 2: 12, 3: 10, 4: 6}
    chorus: dict[int, list[str]] = {}
    verse: dict[int, list[str]] = {}
    for syllables, total in sizes.items():
        words = _pattern_words(syllables, rng, total)
        chorus[syllables] = words[: chorus_share[syllables]]
        verse[syllables] = words[chorus_share[syllables] :]
    return SynthVocabulary(chorus, verse)


def _random_line(pool: dict[int, list[str]], rng: random.Random) -> Line:
    n_words = rng.randint(2, 3)
    words = []
    for _ in range(n_words):
        syllables = rng.choice((1, 1, 2, 2, 3, 4))
        text = rng.choice(pool[syllables])
        words.append(Word(text, syllables))
    return Line(tuple(words))


def _random_paragraph(
    form: SongForm, index: int, pool: dict[int, list[str]], rng: random.Random
) -> Paragraph:
    lines = tuple(_random_line(pool, rng) for _ in range(2))
    return Paragraph(form, index, lines)


# Short songs keep desk-scale training fast; weights favor two-section songs
# while still covering all five forms and within-song chorus repetition.
_TEMPLATES = [
    (SongForm.VERSE, SongForm.CHORUS),
    (SongForm.VERSE, SongForm.CHORUS),
    (SongForm.VERSE, SongForm.CHORUS, SongForm.CHORUS),
    (SongForm.VERSE, SongForm.PRE_CHORUS, SongForm.CHORUS),
    (SongForm.VERSE, SongForm.CHORUS, SongForm.POST_CHORUS),
    (SongForm.VERSE, SongForm.CHORUS, SongForm.BRIDGE, SongForm.CHORUS),
]


def generate_corpus(
    n_songs: int, seed: int = 0, chorus_pool_size: int = 30
) -> list[SongDocument]:
    """Deterministic synthetic corpus; choruses repeat verbatim within songs."""
    rng = random.Random(seed)
    vocab = synth_vocabulary(seed)
    chorus_pool = [
        tuple(_random_line(vocab.chorus_words, rng) for _ in range(2))
        for _ in range(chorus_pool_size)
    ]
    docs = []
    for song_index in range(n_songs):
        template = _TEMPLATES[rng.randrange(len(_TEMPLATES))]
        chorus_lines = chorus_pool[rng.randrange(len(chorus_pool))]
        paragraphs = []
        form_counts: dict[SongForm, int] = {}
        for form in template:
            form_counts[form] = form_counts.get(form, 0) + 1
            if form == SongForm.CHORUS:
                paragraphs.append(Paragraph(form, form_counts[form], chorus_lines))
            else:
                paragraphs.append(
                    _random_paragraph(form, form_counts[form], vocab.verse_words, rng)
                )
        docs.append(SongDocument(id=f"synth-{song_index:05d}", paragraphs=tuple(paragraphs)))
    return docs
