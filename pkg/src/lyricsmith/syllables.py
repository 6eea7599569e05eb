"""Deterministic English syllable counting for words, lines, and paragraphs.

The counter is a heuristic, not a pronunciation model: downstream training
targets and evaluation both use it, so it only has to be self-consistent.
An exception dictionary (word -> count) overrides the heuristic per word.
"""

from __future__ import annotations

from pathlib import Path

VOWELS = frozenset("aeiouy")


class EmptyWordError(ValueError):
    """Raised when a word has no alphabetic characters to count."""


class EmptyTextError(ValueError):
    """Raised when a text has no whitespace-separated words."""


def _count_core(core: str) -> int:
    """Count syllables of a lowercase, edge-stripped word fragment."""
    groups = 0
    in_group = False
    for i, ch in enumerate(core):
        is_vowel = ch in VOWELS and not (ch == "y" and i == 0)
        if is_vowel and not in_group:
            groups += 1
        in_group = is_vowel
    # Trailing "e" is usually silent, except in consonant+"le" endings
    # ("table", "little") and when dropping it would leave nothing.
    if core.endswith("e") and groups > 1:
        le_ending = (
            len(core) >= 3 and core.endswith("le") and core[-3] not in VOWELS
        )
        if not le_ending:
            groups -= 1
    return max(groups, 1)


def count_word(word: str, exceptions: dict[str, int] | None = None) -> int:
    """Count spoken syllables in a single word.

    Hyphenated words count each part separately and sum. Raises
    EmptyWordError if no alphabetic characters remain after stripping
    punctuation.
    """
    lowered = word.lower()
    if exceptions:
        override = exceptions.get(lowered)
        if override is None:
            override = exceptions.get(_strip_edges(lowered))
        if override is not None:
            return override

    total = 0
    for part in lowered.split("-"):
        core = _strip_edges(part)
        if not any(ch.isalpha() for ch in core):
            continue
        total += _count_core(core)
    if total == 0:
        raise EmptyWordError(f"no countable characters in {word!r}")
    return total


def _strip_edges(part: str) -> str:
    start, stop = 0, len(part)
    while start < stop and not part[start].isalpha():
        start += 1
    while stop > start and not part[stop - 1].isalpha():
        stop -= 1
    return part[start:stop]


def count_text(text: str, exceptions: dict[str, int] | None = None) -> int:
    """Sum of count_word over whitespace-separated words.

    Words without alphabetic characters contribute 0 rather than raising,
    so the function is total on arbitrary generated text. Raises
    EmptyTextError when the text has no words at all.
    """
    words = text.split()
    if not words:
        raise EmptyTextError("no words in text")
    total = 0
    for word in words:
        try:
            total += count_word(word, exceptions)
        except EmptyWordError:
            continue
    return total


def count_text_or_zero(text: str, exceptions: dict[str, int] | None = None) -> int:
    """Like count_text but returns 0 for empty or uncountable input."""
    try:
        return count_text(text, exceptions)
    except EmptyTextError:
        return 0


def load_exceptions(path: str | Path) -> dict[str, int]:
    """Load a word<TAB>count exception dictionary (lowercase keys)."""
    table: dict[str, int] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        word, _, count = line.partition("\t")
        table[word.strip().lower()] = int(count)
    return table
