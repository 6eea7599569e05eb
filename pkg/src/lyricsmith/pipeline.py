"""End-to-end orchestration: preprocessing, dataset building, evaluation
decoding, and report assembly. The CLI, the HTTP service, and the acceptance
suite all drive these functions rather than re-wiring the modules themselves.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import (
    SongDocument,
    is_english,
    score_toxicity,
    split_corpus,
    summarize_for_eval,
)
from .decoder import (
    BudgetExhaustedError,
    DecodeParams,
    DecodeResult,
    execute_infill,
    execute_plan,
)
from .lm import EncodedExample, HashedBagEmbedder, encode_example
from .metrics import MetricsReport, build_report
from .planner import (
    Granularity,
    GrammarViolationError,
    Layout,
    PlanTree,
    SyllablePair,
    SyllableCapExceededError,
    assemble_infilling,
    build_tree,
    iter_masked,
    parse_output,
    select_masks,
    select_spans,
    serialize_generation,
    serialize_infilling,
    tree_constraints,
)
from .tokenizer import Vocab


# -- Preprocessing ------------------------------------------------------------


@dataclass
class PreprocessStats:
    total: int = 0
    kept: int = 0
    dropped_language: int = 0
    dropped_toxicity: int = 0
    dropped_syllable_cap: int = 0


def preprocess_corpus(
    docs: Sequence[SongDocument],
    ratios: tuple[float, float, float],
    seed: int,
    toxicity_scorer: Callable[[str], float] | None = None,
    toxicity_threshold: float = 0.5,
) -> tuple[list[SongDocument], list[SongDocument], list[SongDocument], PreprocessStats]:
    """Language gate, syllable cap, toxicity filter, then deterministic split."""
    stats = PreprocessStats(total=len(docs))
    kept = []
    for doc in docs:
        if not is_english(doc):
            stats.dropped_language += 1
            continue
        try:
            build_tree(doc)
        except SyllableCapExceededError:
            stats.dropped_syllable_cap += 1
            continue
        if toxicity_scorer is not None and score_toxicity(doc, toxicity_scorer) > toxicity_threshold:
            stats.dropped_toxicity += 1
            continue
        kept.append(doc)
    stats.kept = len(kept)
    train, valid, evals = split_corpus(kept, ratios, seed)
    return train, valid, evals, stats


# -- Dataset building ---------------------------------------------------------


def make_generation_dataset(
    docs: Sequence[SongDocument],
    vocab: Vocab,
    layout: Layout,
    p: float,
    seed: int,
    embedder: Callable[[str], np.ndarray] | None = None,
) -> list[EncodedExample]:
    """One serialized, encoded example per document; the document's own text
    supplies the semantic conditioning vector."""
    embedder = embedder or HashedBagEmbedder()
    rng = random.Random(seed)
    examples = []
    for doc in docs:
        tree = select_spans(build_tree(doc), p, rng)
        seq = serialize_generation(tree, layout)
        examples.append(encode_example(vocab, seq, embedder(doc.text)))
    return examples


def make_infilling_dataset(
    docs: Sequence[SongDocument],
    vocab: Vocab,
    p: float,
    seed: int,
    embedder: Callable[[str], np.ndarray] | None = None,
    same_mask: bool = False,
    no_songform: bool = False,
) -> list[EncodedExample]:
    embedder = embedder or HashedBagEmbedder()
    rng = random.Random(seed)
    examples = []
    for doc in docs:
        tree = select_masks(build_tree(doc), p, rng)
        context, answer = serialize_infilling(tree, same_mask, no_songform)
        seq = assemble_infilling(context, answer)
        examples.append(encode_example(vocab, seq, embedder(doc.text)))
    return examples


# -- Evaluation decoding ------------------------------------------------------


@dataclass
class GenerationRecord:
    doc_id: str
    input_text: str
    pairs: list[SyllablePair]
    generated: SongDocument | None
    truncated_segments: int
    grammar_violation: bool = False
    result: DecodeResult | None = None


def _align_front_pairs(
    constraints: list[tuple[Granularity, int]], parsed: list[SyllablePair]
) -> list[SyllablePair]:
    """Greedy in-order matching of plan constraints to parsed segments.

    A Front model emits its own structure; segments it dropped or mangled
    score a realized count of 0 against the plan's expectation.
    """
    aligned = []
    j = 0
    for gran, expected in constraints:
        found = None
        for k in range(j, len(parsed)):
            if parsed[k].granularity == gran:
                found = k
                break
        if found is None:
            aligned.append(SyllablePair(gran, expected, 0, ""))
        else:
            pair = parsed[found]
            aligned.append(SyllablePair(gran, expected, pair.realized, pair.text))
            j = found + 1
    return aligned


def generate_documents(
    model,
    vocab: Vocab,
    docs: Sequence[SongDocument],
    layout: Layout,
    p: float,
    params: DecodeParams,
    plan_seed: int,
    embedder: Callable[[str], np.ndarray] | None = None,
    line_frequencies: dict[str, int] | None = None,
    summary_budget: int = 2,
) -> list[GenerationRecord]:
    """Plan, decode, parse, and score one record per evaluation document."""
    embedder = embedder or HashedBagEmbedder()
    rng = random.Random(plan_seed)
    records = []
    for doc in docs:
        tree = select_spans(build_tree(doc), p, rng)
        plan = serialize_generation(_strip_text(tree, layout), layout)
        input_text = summarize_for_eval(doc, summary_budget, line_frequencies)
        embedding = embedder(input_text)
        constraints = tree_constraints(tree)
        try:
            result = execute_plan(model, vocab, plan, params, embedding)
        except (GrammarViolationError, BudgetExhaustedError):
            records.append(
                GenerationRecord(
                    doc.id,
                    input_text,
                    [SyllablePair(g, e, 0, "") for g, e in constraints],
                    None,
                    0,
                    grammar_violation=True,
                )
            )
            continue
        if result.parsed is not None:  # Front: align model structure to plan
            pairs = _align_front_pairs(constraints, result.parsed.pairs)
            generated = result.parsed.document
        else:
            from .planner import body_of

            parsed = parse_output(body_of(result.sequence), song_id=doc.id)
            pairs = parsed.pairs
            generated = parsed.document
        records.append(
            GenerationRecord(
                doc.id, input_text, pairs, generated, result.truncated_segments,
                result=result,
            )
        )
    return records


def _strip_text(tree: PlanTree, layout: Layout) -> PlanTree:
    """Plans fed to the decoder carry no gold text (skeleton only)."""
    import copy

    skeleton = copy.deepcopy(tree)
    for plan in skeleton.paragraphs:
        stack = [plan.node]
        while stack:
            node = stack.pop()
            node.text = None
            stack.extend(node.children)
    return skeleton


@dataclass
class InfillRecord:
    doc_id: str
    segments: list[dict]  # granularity, expected, realized, original, generated
    truncated_segments: int


def infill_documents(
    model,
    vocab: Vocab,
    docs: Sequence[SongDocument],
    p: float,
    params: DecodeParams,
    plan_seed: int,
    embedder: Callable[[str], np.ndarray] | None = None,
    same_mask: bool = False,
    no_songform: bool = False,
    baseline: bool = False,
) -> list[InfillRecord]:
    from .syllables import count_text_or_zero

    embedder = embedder or HashedBagEmbedder()
    rng = random.Random(plan_seed)
    records = []
    for doc in docs:
        tree = select_masks(build_tree(doc), p, rng)
        masked = list(iter_masked(tree))
        context, answer = serialize_infilling(tree, same_mask, no_songform)
        embedding = embedder(doc.text)
        result = execute_infill(
            model, vocab, context, answer, params, embedding, baseline=baseline
        )
        segments = []
        for (plan, node), text in zip(masked, result.segment_texts):
            segments.append(
                {
                    "granularity": node.granularity.value,
                    "expected": node.syllable_target,
                    "realized": count_text_or_zero(text),
                    "original": node.text or "",
                    "generated": text,
                }
            )
        records.append(InfillRecord(doc.id, segments, result.truncated_segments))
    return records


# -- Reports ------------------------------------------------------------------

_GRAN_COLUMN = {
    "paragraph": "paragraph",
    "line": "line",
    "phrase": "phrase",
    "word": "word",
}


def generation_report(
    records: Sequence[GenerationRecord],
    ppls: dict[str, float] | None = None,
    similarity_scorer: Callable[[str, str], float] | None = None,
) -> MetricsReport:
    from .metrics import similarity as sim_fn

    pair_lists = [r.pairs for r in records]
    sims: list[float] = []
    for record in records:
        if record.generated is not None:
            sims.append(
                sim_fn(record.input_text, record.generated.text, similarity_scorer)
            )
    return build_report(
        pair_lists,
        similarities={"full": sims} if sims else None,
        ppls=ppls,
        injected_on_timeout=sum(r.truncated_segments for r in records),
    )


def infill_report(
    records: Sequence[InfillRecord],
    ppls: dict[str, float] | None = None,
    similarity_scorer: Callable[[str, str], float] | None = None,
) -> MetricsReport:
    from .metrics import similarity as sim_fn

    pair_lists = []
    sims: dict[str, list[float]] = {c: [] for c in ("full", "paragraph", "line", "phrase", "word")}
    for record in records:
        pairs = []
        for seg in record.segments:
            gran = Granularity(seg["granularity"])
            pairs.append(SyllablePair(gran, seg["expected"], seg["realized"], seg["generated"]))
            score = sim_fn(seg["original"], seg["generated"], similarity_scorer)
            sims["full"].append(score)
            sims[_GRAN_COLUMN[seg["granularity"]]].append(score)
        pair_lists.append(pairs)
    return build_report(
        pair_lists,
        similarities={k: v for k, v in sims.items() if v},
        ppls=ppls,
        injected_on_timeout=sum(r.truncated_segments for r in records),
    )


def granularity_ppls(model, examples: Sequence[EncodedExample]) -> dict[str, float]:
    """Trimmed-mean PPL per report column over gold eval serializations."""
    from .lm import EmptyEvalError, perplexity_eval

    out: dict[str, float] = {}
    columns = {
        "full": None,
        "paragraph": Granularity.PARAGRAPH,
        "line": Granularity.LINE,
        "phrase": Granularity.PHRASE,
        "word": Granularity.WORD,
    }
    for name, gran in columns.items():
        try:
            out[name] = perplexity_eval(model, examples, gran)
        except EmptyEvalError:
            continue
    return out
