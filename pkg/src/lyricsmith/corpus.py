"""Corpus ingestion: parsing bracketed-section lyrics, filtering, annotation,
and deterministic train/valid/eval splitting.

Input files use the bracketed-header convention::

    [Verse 1]
    first line of the verse
    second line

    [Chorus]
    ...

Each section header names one of the five supported song forms; the lines
until the next header (blank lines allowed as separators) form one paragraph.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .syllables import EmptyWordError, count_word


class SongForm(Enum):
    VERSE = "Verse"
    CHORUS = "Chorus"
    PRE_CHORUS = "PreChorus"
    POST_CHORUS = "PostChorus"
    BRIDGE = "Bridge"

    @property
    def header_label(self) -> str:
        return _HEADER_LABELS[self]


_HEADER_LABELS = {
    SongForm.VERSE: "Verse",
    SongForm.CHORUS: "Chorus",
    SongForm.PRE_CHORUS: "Pre-Chorus",
    SongForm.POST_CHORUS: "Post-Chorus",
    SongForm.BRIDGE: "Bridge",
}

# Header labels are case-insensitive and hyphen/space tolerant.
_FORM_BY_KEY = {
    "verse": SongForm.VERSE,
    "chorus": SongForm.CHORUS,
    "prechorus": SongForm.PRE_CHORUS,
    "postchorus": SongForm.POST_CHORUS,
    "bridge": SongForm.BRIDGE,
}


class CorpusError(ValueError):
    pass


class UnknownFormError(CorpusError):
    def __init__(self, label: str):
        super().__init__(f"unknown song form header: {label!r}")
        self.label = label


class EmptySectionError(CorpusError):
    pass


class NoSectionsError(CorpusError):
    pass


class BadRatiosError(CorpusError):
    pass


@dataclass(frozen=True)
class Word:
    text: str
    syllables: int


@dataclass(frozen=True)
class Line:
    words: tuple[Word, ...]

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words)

    @property
    def syllables(self) -> int:
        return sum(w.syllables for w in self.words)


@dataclass(frozen=True)
class Paragraph:
    form: SongForm
    form_index: int
    lines: tuple[Line, ...]

    @property
    def text(self) -> str:
        return "\n".join(line.text for line in self.lines)

    @property
    def syllables(self) -> int:
        return sum(line.syllables for line in self.lines)


@dataclass(frozen=True)
class SongDocument:
    id: str
    paragraphs: tuple[Paragraph, ...]
    language_tag: str = "en"

    @property
    def text(self) -> str:
        return "\n".join(p.text for p in self.paragraphs)

    @property
    def all_lines(self) -> list[Line]:
        return [line for p in self.paragraphs for line in p.lines]


_HEADER_RE = re.compile(r"^\[([^\[\]]+)\]\s*$")


def _parse_header(label: str) -> tuple[SongForm, int]:
    body = label.strip()
    match = re.match(r"^(.*?)(\d+)?$", body)
    assert match is not None
    name, index = match.group(1), match.group(2)
    key = re.sub(r"[\s\-_]+", "", name).lower()
    form = _FORM_BY_KEY.get(key)
    if form is None:
        raise UnknownFormError(label)
    return form, int(index) if index else 1


def _annotate_line(raw: str, exceptions: dict[str, int] | None) -> Line | None:
    words = []
    for token in raw.split():
        try:
            words.append(Word(token, count_word(token, exceptions)))
        except EmptyWordError:
            continue  # numeric/punctuation tokens are dropped, not verbalized
    if not words:
        return None
    return Line(tuple(words))


def parse_song(
    raw: str,
    song_id: str = "",
    exceptions: dict[str, int] | None = None,
) -> SongDocument:
    """Parse bracketed-header lyrics into a syllable-annotated document."""
    paragraphs: list[Paragraph] = []
    current: tuple[SongForm, int] | None = None
    current_lines: list[Line] = []

    def flush() -> None:
        nonlocal current, current_lines
        if current is None:
            return
        if not current_lines:
            raise EmptySectionError(f"section {current[0].value} has no lines")
        paragraphs.append(Paragraph(current[0], current[1], tuple(current_lines)))
        current, current_lines = None, []

    for raw_line in raw.splitlines():
        line = raw_line.strip()
        header = _HEADER_RE.match(line)
        if header:
            flush()
            current = _parse_header(header.group(1))
            continue
        if not line:
            continue
        if current is None:
            raise NoSectionsError("lyric lines before any section header")
        annotated = _annotate_line(line, exceptions)
        if annotated is not None:
            current_lines.append(annotated)
    flush()

    if not paragraphs:
        raise NoSectionsError("no section headers found")
    return SongDocument(id=song_id, paragraphs=tuple(paragraphs))


def render_song(doc: SongDocument) -> str:
    """Inverse of parse_song: bracketed headers plus raw lines."""
    blocks = []
    for p in doc.paragraphs:
        header = f"[{p.form.header_label} {p.form_index}]"
        blocks.append(header + "\n" + p.text)
    return "\n\n".join(blocks) + "\n"


def is_english(doc: SongDocument, threshold: float = 0.9) -> bool:
    """Trivial language gate: >= 90% of alphabetic characters are ASCII."""
    alpha = [ch for ch in doc.text if ch.isalpha()]
    if not alpha:
        return False
    ascii_alpha = sum(1 for ch in alpha if ch.isascii())
    return ascii_alpha / len(alpha) >= threshold


class WordlistScorer:
    """Default toxicity scorer: fraction of words hitting a blocked wordlist.

    score(text) = blocked_hits / total_words, in [0, 1]. Words are
    lowercased and stripped of non-alphabetic edges before lookup.
    """

    def __init__(self, blocked: Iterable[str] = ()):
        self.blocked = {w.strip().lower() for w in blocked if w.strip()}

    @classmethod
    def from_file(cls, path: str | Path) -> "WordlistScorer":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())

    def __call__(self, text: str) -> float:
        words = text.split()
        if not words:
            return 0.0
        hits = sum(1 for w in words if w.strip(".,!?;:'\"-").lower() in self.blocked)
        return hits / len(words)


def score_toxicity(doc: SongDocument, scorer: Callable[[str], float]) -> float:
    """Apply a pluggable text -> [0, 1] scorer to the document text."""
    return scorer(doc.text)


def split_corpus(
    docs: Sequence[SongDocument],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[SongDocument], list[SongDocument], list[SongDocument]]:
    """Deterministic seeded shuffle, then floor-based partition.

    The remainder after flooring goes to the training split. Ratios must be
    non-negative and sum to 1.
    """
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatiosError(f"ratios must be non-negative and sum to 1: {ratios}")
    shuffled = list(docs)
    random.Random(seed).shuffle(shuffled)
    n = len(shuffled)
    n_valid = int(n * ratios[1])
    n_eval = int(n * ratios[2])
    n_train = n - n_valid - n_eval
    train = shuffled[:n_train]
    valid = shuffled[n_train : n_train + n_valid]
    evals = shuffled[n_train + n_valid :]
    return train, valid, evals


def build_line_frequencies(docs: Iterable[SongDocument]) -> dict[str, int]:
    """Number of corpus lines containing each lowercased word."""
    freq: dict[str, int] = {}
    for doc in docs:
        for line in doc.all_lines:
            for word in {w.text.lower() for w in line.words}:
                freq[word] = freq.get(word, 0) + 1
    return freq


def summarize_for_eval(
    doc: SongDocument,
    sentence_budget: int,
    line_frequencies: dict[str, int] | None = None,
) -> str:
    """Extractive summary: top-budget lines by summed inverse line frequency.

    Rarer words (corpus-wide) score higher; selected lines are returned in
    document order, joined by ". ". Unseen words count as frequency 1.
    """
    freq = line_frequencies or {}
    lines = doc.all_lines
    scored = [
        (sum(1.0 / freq.get(w.text.lower(), 1) for w in line.words), i)
        for i, line in enumerate(lines)
    ]
    # Stable pick: higher score wins, earlier line breaks ties.
    picked = sorted(sorted(scored, key=lambda t: t[1]), key=lambda t: t[0], reverse=True)
    keep = sorted(i for _, i in picked[: max(sentence_budget, 0)])
    return ". ".join(lines[i].text for i in keep)


# -- JSON-lines persistence ---------------------------------------------------


def doc_to_json(doc: SongDocument) -> dict:
    return {
        "id": doc.id,
        "language_tag": doc.language_tag,
        "paragraphs": [
            {
                "form": p.form.value,
                "form_index": p.form_index,
                "lines": [
                    {"words": [{"text": w.text, "syllables": w.syllables} for w in line.words]}
                    for line in p.lines
                ],
            }
            for p in doc.paragraphs
        ],
    }


def doc_from_json(data: dict) -> SongDocument:
    return SongDocument(
        id=data["id"],
        language_tag=data.get("language_tag", "en"),
        paragraphs=tuple(
            Paragraph(
                form=SongForm(p["form"]),
                form_index=p["form_index"],
                lines=tuple(
                    Line(tuple(Word(w["text"], w["syllables"]) for w in line["words"]))
                    for line in p["lines"]
                ),
            )
            for p in data["paragraphs"]
        ),
    )


def save_corpus(docs: Iterable[SongDocument], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc_to_json(doc), ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> list[SongDocument]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                docs.append(doc_from_json(json.loads(line)))
    return docs


def load_corpus_dir(
    directory: str | Path,
    exceptions: dict[str, int] | None = None,
) -> list[SongDocument]:
    """Parse every .txt file in a directory (file stem becomes the song id)."""
    docs = []
    for path in sorted(Path(directory).glob("*.txt")):
        docs.append(parse_song(path.read_text(encoding="utf-8"), path.stem, exceptions))
    return docs
