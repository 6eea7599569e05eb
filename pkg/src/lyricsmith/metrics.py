"""Evaluation metrics: syllable count distance and error rate, normalized
Levenshtein distance, pluggable semantic similarity, per-granularity reports,
and song-form consistency matrices.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import SongDocument, SongForm
from .lm import HashedBagEmbedder
from .planner import Granularity, SyllablePair


class MetricsError(ValueError):
    pass


class LengthMismatchError(MetricsError):
    pass


class EmptyInputError(MetricsError):
    pass


def scd(expected: Sequence[int], realized: Sequence[int]) -> float:
    """Symmetric relative discrepancy between syllable count sets.

    (1/2n) * sum(|s - r|/s + |s - r|/r); a realized count of zero floors the
    second denominator at 1 so empty segments are penalized, not fatal.
    """
    if len(expected) != len(realized):
        raise LengthMismatchError(f"{len(expected)} expected vs {len(realized)} realized")
    if not expected:
        raise EmptyInputError("empty syllable sets")
    total = 0.0
    for s, r in zip(expected, realized):
        diff = abs(s - r)
        total += diff / s + diff / max(r, 1)
    return total / (2 * len(expected))


def scerr(expected: Sequence[int], realized: Sequence[int]) -> float:
    """Percentage of positions where the realized count differs at all."""
    if len(expected) != len(realized):
        raise LengthMismatchError(f"{len(expected)} expected vs {len(realized)} realized")
    if not expected:
        raise EmptyInputError("empty syllable sets")
    wrong = sum(1 for s, r in zip(expected, realized) if s != r)
    return 100.0 * wrong / len(expected)


def levenshtein(a: str, b: str) -> int:
    """Character-level edit distance (two-row dynamic programming)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def nld(a: str, b: str) -> float:
    """Levenshtein distance over the longer length; two empties give 0."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def similarity(
    a: str, b: str, scorer: Callable[[str, str], float] | None = None
) -> float:
    """Semantic similarity in [-1, 1]; the default is cosine over hashed
    bag-of-words embeddings. Empty input scores 0 by convention."""
    if scorer is not None:
        return scorer(a, b)
    embedder = HashedBagEmbedder()
    va, vb = embedder(a), embedder(b)
    norm = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if norm == 0:
        return 0.0
    return float(np.dot(va, vb) / norm)


class FileSimilarityScorer:
    """Precomputed scores keyed by sha256(a) + ':' + sha256(b), allowing an
    offline model (e.g. a real BERT-Score run) to be dropped in."""

    def __init__(self, path: str | Path):
        self.table = json.loads(Path(path).read_text(encoding="utf-8"))

    def __call__(self, a: str, b: str) -> float:
        import hashlib

        key = (
            hashlib.sha256(a.encode()).hexdigest()
            + ":"
            + hashlib.sha256(b.encode()).hexdigest()
        )
        return float(self.table[key])  # KeyError surfaces the missing pair


# -- Per-granularity report ---------------------------------------------------

GRANULARITY_COLUMNS = ["full", "paragraph", "line", "phrase", "word"]


@dataclass
class GranularityStats:
    count: int = 0
    scd: float | None = None
    scerr: float | None = None
    ppl: float | None = None
    similarity: float | None = None


@dataclass
class MetricsReport:
    columns: dict[str, GranularityStats] = field(default_factory=dict)
    injected_on_timeout: int = 0
    documents: int = 0

    def to_json(self) -> dict:
        return {
            "documents": self.documents,
            "injected_on_timeout": self.injected_on_timeout,
            "columns": {
                name: {
                    "count": stats.count,
                    "scd": stats.scd,
                    "scerr": stats.scerr,
                    "ppl": stats.ppl,
                    "similarity": stats.similarity,
                }
                for name, stats in self.columns.items()
            },
        }

    def to_table(self) -> str:
        """Fixed-width table with Full/Para/Line/Phrase/Word columns."""
        headers = ["metric"] + [c.capitalize() for c in GRANULARITY_COLUMNS]
        rows = []
        for metric in ("scd", "scerr", "ppl", "similarity", "count"):
            row = [metric.upper() if metric != "similarity" else "SIM"]
            for col in GRANULARITY_COLUMNS:
                stats = self.columns.get(col, GranularityStats())
                value = getattr(stats, metric)
                if value is None:
                    row.append("-")
                elif metric == "count":
                    row.append(str(value))
                else:
                    row.append(f"{value:.3f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        for row in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
        return "\n".join(lines)


_GRAN_TO_COLUMN = {
    Granularity.PARAGRAPH: "paragraph",
    Granularity.LINE: "line",
    Granularity.PHRASE: "phrase",
    Granularity.WORD: "word",
}


def pool_pairs(
    pair_lists: Iterable[Sequence[SyllablePair]],
) -> dict[str, tuple[list[int], list[int]]]:
    pools: dict[str, tuple[list[int], list[int]]] = {
        col: ([], []) for col in GRANULARITY_COLUMNS
    }
    for pairs in pair_lists:
        for pair in pairs:
            for col in ("full", _GRAN_TO_COLUMN[pair.granularity]):
                pools[col][0].append(pair.expected)
                pools[col][1].append(pair.realized)
    return pools


def build_report(
    pair_lists: Sequence[Sequence[SyllablePair]],
    similarities: dict[str, Sequence[float]] | None = None,
    ppls: dict[str, float] | None = None,
    injected_on_timeout: int = 0,
) -> MetricsReport:
    """Pool syllable pairs per granularity ('full' pools everything) and
    attach averaged similarities and PPLs given per column."""
    if not pair_lists:
        raise EmptyInputError("no parsed outputs to report on")
    report = MetricsReport(
        documents=len(pair_lists), injected_on_timeout=injected_on_timeout
    )
    pools = pool_pairs(pair_lists)
    for col, (expected, realized) in pools.items():
        stats = GranularityStats(count=len(expected))
        if expected:
            stats.scd = scd(expected, realized)
            stats.scerr = scerr(expected, realized)
        if similarities and col in similarities and len(similarities[col]) > 0:
            stats.similarity = float(sum(similarities[col]) / len(similarities[col]))
        if ppls and col in ppls:
            stats.ppl = ppls[col]
        report.columns[col] = stats
    return report


# -- Song-form consistency ----------------------------------------------------

FORM_ORDER = [
    SongForm.VERSE,
    SongForm.CHORUS,
    SongForm.PRE_CHORUS,
    SongForm.POST_CHORUS,
    SongForm.BRIDGE,
]


@dataclass
class ConsistencyMatrices:
    similarity: dict[tuple[SongForm, SongForm], float]
    nld: dict[tuple[SongForm, SongForm], float]
    counts: dict[tuple[SongForm, SongForm], int]

    def to_json(self) -> dict:
        def dump(table: dict) -> dict:
            return {f"{a.value}|{b.value}": v for (a, b), v in table.items()}

        return {
            "similarity": dump(self.similarity),
            "nld": dump(self.nld),
            "counts": dump(self.counts),
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "form_a", "form_b", "value", "pairs"])
            for table, name in ((self.similarity, "similarity"), (self.nld, "nld")):
                for (a, b), value in sorted(
                    table.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
                ):
                    writer.writerow(
                        [name, a.value, b.value, f"{value:.6f}", self.counts[(a, b)]]
                    )


def consistency_matrices(
    docs: Iterable[SongDocument],
    scorer: Callable[[str, str], float] | None = None,
) -> ConsistencyMatrices:
    """Average similarity and NLD between distinct paragraphs within a song,
    per unordered form pair. Songs with fewer than two paragraphs are skipped;
    a paragraph is never paired with itself."""
    sums_sim: dict[tuple[SongForm, SongForm], float] = {}
    sums_nld: dict[tuple[SongForm, SongForm], float] = {}
    counts: dict[tuple[SongForm, SongForm], int] = {}
    for doc in docs:
        paragraphs = doc.paragraphs
        if len(paragraphs) < 2:
            continue
        for i in range(len(paragraphs)):
            for j in range(i + 1, len(paragraphs)):
                pa, pb = paragraphs[i], paragraphs[j]
                key = tuple(sorted((pa.form, pb.form), key=lambda f: f.value))
                ta, tb = _normalize_ws(pa.text), _normalize_ws(pb.text)
                sums_sim[key] = sums_sim.get(key, 0.0) + similarity(ta, tb, scorer)
                sums_nld[key] = sums_nld.get(key, 0.0) + nld(ta, tb)
                counts[key] = counts.get(key, 0) + 1
    sim = {}
    dist = {}
    final_counts = {}
    for key, count in counts.items():
        a, b = key
        for oriented in {(a, b), (b, a)}:
            sim[oriented] = sums_sim[key] / count
            dist[oriented] = sums_nld[key] / count
            final_counts[oriented] = count
    return ConsistencyMatrices(sim, dist, final_counts)
