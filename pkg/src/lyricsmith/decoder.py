"""Constrained autoregressive execution of generation and infilling plans.

Condition items from a plan are force-fed into the model context; between a
directive and its end token the model samples text (other control ids are
masked out, since the plan fixes the structure), stopping when it emits the
segment's end token or exhausts the per-segment budget, in which case the end
token is injected and the truncation recorded. The Front layout instead
samples everything after the prompt, structure included.

An oracle model that always satisfies syllable directives lets the whole
harness be validated independently of any trained weights.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .planner import (
    DOC_END,
    END_L,
    END_NW,
    END_P,
    GEN_L,
    GEN_N,
    GEN_P,
    GEN_W,
    INF_L,
    INF_N,
    INF_P,
    INF_W,
    LYR_START,
    MASK,
    PAD,
    START,
    ControlToken,
    NothingMaskedError,
    ParsedOutput,
    Role,
    SeqItem,
    SymbolicSequence,
    body_of,
    parse_output,
    syl_value,
)
from .syllables import count_word
from .tokenizer import Vocab, decode, encode, encode_text


class DecoderError(RuntimeError):
    pass


class BudgetExhaustedError(DecoderError):
    pass


class Provenance(Enum):
    FORCED = "forced"
    SAMPLED = "sampled"
    INJECTED_TIMEOUT = "injected_on_timeout"


@dataclass
class DecodeParams:
    top_k: int = 20
    top_p: float = 0.9
    temperature: float = 1.0
    repetition_penalty: float = 1.2
    max_tokens_per_segment: int | None = None  # None: 4 * syllable target + 8
    max_total_tokens: int = 8192
    seed: int = 0

    def __post_init__(self) -> None:
        if self.top_k < 1 or not 0 < self.top_p <= 1 or self.temperature <= 0:
            raise ValueError("invalid sampling parameters")
        if self.repetition_penalty < 1:
            raise ValueError("repetition penalty must be >= 1")

    def segment_budget(self, syllables: int) -> int:
        if self.max_tokens_per_segment is not None:
            return self.max_tokens_per_segment
        return 4 * syllables + 8


def sample_next(
    logits: np.ndarray,
    params: DecodeParams,
    history: Sequence[int],
    rng: random.Random,
    exempt_ids: frozenset[int] = frozenset(),
) -> tuple[int, int]:
    """Sample one token id; returns (id, rank in the final distribution).

    Repetition penalty divides positive logits of history tokens and
    multiplies negative ones; ids in exempt_ids (the control tokens) are
    untouched. Then temperature, top-k by logit, the smallest prefix with
    cumulative probability >= top_p, renormalize, draw.
    """
    scores = np.asarray(logits, dtype=np.float64).copy()
    if params.repetition_penalty != 1.0:
        for token_id in set(history) - exempt_ids:
            if scores[token_id] > 0:
                scores[token_id] /= params.repetition_penalty
            else:
                scores[token_id] *= params.repetition_penalty
    scores /= params.temperature

    order = np.argsort(-scores, kind="stable")
    kept = order[: min(params.top_k, len(order))]
    kept_scores = scores[kept]
    kept_scores -= kept_scores.max()
    probs = np.exp(kept_scores)
    probs /= probs.sum()

    cumulative = np.cumsum(probs)
    cutoff = min(int(np.searchsorted(cumulative, params.top_p) + 1), len(probs))
    nucleus = probs[:cutoff] / probs[:cutoff].sum()

    draw = rng.random()
    pick = min(int(np.searchsorted(np.cumsum(nucleus), draw)), cutoff - 1)
    return int(kept[pick]), pick


@dataclass
class DecodeResult:
    sequence: SymbolicSequence
    provenance: list[Provenance]
    truncated_segments: int = 0
    trace: list[dict] = field(default_factory=list)
    parsed: ParsedOutput | None = None
    segment_texts: list[str] = field(default_factory=list)


class _Session:
    """One decoding run: id history, model session, output assembly."""

    def __init__(
        self,
        model,
        vocab: Vocab,
        params: DecodeParams,
        embedding: np.ndarray | None,
        trace_hook: Callable[[dict], None] | None = None,
    ):
        self.vocab = vocab
        self.params = params
        self.rng = random.Random(params.seed)
        self.session = model.start_session(embedding)
        self.history: list[int] = []
        self.special_ids = frozenset(vocab.special_surfaces)
        self.out = SymbolicSequence()
        self.provenance: list[Provenance] = []
        self.segment_texts: list[str] = []
        self.trace: list[dict] = []
        self.trace_hook = trace_hook
        self.truncated = 0
        self.total_sampled = 0
        if embedding is not None:
            self._feed([vocab.special_id(PAD)])

    def _feed(self, ids: list[int]) -> None:
        self.session.feed(ids)
        self.history.extend(ids)

    def _event(self, event: dict) -> None:
        self.trace.append(event)
        if self.trace_hook:
            self.trace_hook(event)

    def force(self, item: SeqItem, record: bool = True) -> None:
        self._feed(encode(self.vocab, [item.value]))
        if record:
            self.out.items.append(item)
            self.provenance.append(Provenance.FORCED)
        surface = item.value.surface if item.is_token else item.value
        self._event({"type": "token", "value": surface, "provenance": "forced", "rank": None})

    def _context_remaining(self) -> int:
        cfg = getattr(getattr(self.session, "model", None), "cfg", None)
        if cfg is None:
            return 1 << 30
        return cfg.context_len - self.session.length

    def _sample_id(self, allowed_special: frozenset[int] | None) -> tuple[int, int]:
        logits = self.session.next_logits()
        if allowed_special is not None:
            blocked = self.special_ids - allowed_special
            if blocked:
                logits = logits.copy()
                logits[list(blocked)] = -1e30
        token_id, rank = sample_next(
            logits, self.params, self.history, self.rng, self.special_ids
        )
        self.total_sampled += 1
        return token_id, rank

    def sample_segment(self, end_token: ControlToken, role: Role, budget: int) -> str:
        """Sample text until end_token (or inject it when the budget runs out)."""
        end_id = self.vocab.special_id(end_token)
        text_ids: list[int] = []
        emitted_end = False
        for _ in range(budget):
            if self.total_sampled >= self.params.max_total_tokens:
                break
            if self._context_remaining() <= 1:  # keep room for the end token
                break
            token_id, rank = self._sample_id(allowed_special=frozenset((end_id,)))
            self._feed([token_id])
            value = end_token.surface if token_id == end_id else self.vocab.surface(token_id)
            self._event({"type": "token", "value": value, "provenance": "sampled", "rank": rank})
            if token_id == end_id:
                emitted_end = True
                break
            text_ids.append(token_id)
        text = _ids_to_text(self.vocab, text_ids)
        if text:
            self.out.append(text, role)
            self.provenance.append(Provenance.SAMPLED)
        self.out.append(end_token, role)
        if emitted_end:
            self.provenance.append(Provenance.SAMPLED)
        else:
            if self._context_remaining() >= 1:
                self._feed([end_id])
            self.provenance.append(Provenance.INJECTED_TIMEOUT)
            self.truncated += 1
            self._event({
                "type": "token", "value": end_token.surface,
                "provenance": "injected_on_timeout", "rank": None,
            })
        self.segment_texts.append(text)
        return text

    def sample_free(self, stop_token: ControlToken) -> None:
        """Front mode: sample everything (structure included) until stop.

        Raises BudgetExhaustedError if the global token budget runs out
        before the stop token appears.
        """
        stop_id = self.vocab.special_id(stop_token)
        text_ids: list[int] = []

        def flush() -> None:
            nonlocal text_ids
            if text_ids:
                self.out.append(_ids_to_text(self.vocab, text_ids), Role.PREDICT)
                self.provenance.append(Provenance.SAMPLED)
                text_ids = []

        while self.total_sampled < self.params.max_total_tokens and self._context_remaining() > 0:
            token_id, rank = self._sample_id(allowed_special=None)
            self._feed([token_id])
            self._event({
                "type": "token", "value": self.vocab.surface(token_id),
                "provenance": "sampled", "rank": rank,
            })
            if self.vocab.is_special(token_id):
                flush()
                self.out.append(ControlToken(self.vocab.surface(token_id)), Role.PREDICT)
                self.provenance.append(Provenance.SAMPLED)
                if token_id == stop_id:
                    return
            else:
                text_ids.append(token_id)
        flush()
        raise BudgetExhaustedError(
            f"budget exhausted after {self.total_sampled} sampled tokens"
        )

    def done(self) -> None:
        self._event({"type": "done", "truncated_segments": self.truncated})


def _ids_to_text(vocab: Vocab, ids: list[int]) -> str:
    if not ids:
        return ""
    items = decode(vocab, ids)
    return "".join(i if isinstance(i, str) else i.surface for i in items).strip()


def _is_front_plan(plan: SymbolicSequence) -> bool:
    seen_lyr = False
    for item in plan.items:
        if item.is_token and item.value == LYR_START:
            seen_lyr = True
            continue
        if seen_lyr and item.is_token and item.value != DOC_END:
            return item.role == Role.PREDICT
    return False


def execute_plan(
    model,
    vocab: Vocab,
    plan: SymbolicSequence,
    params: DecodeParams,
    embedding: np.ndarray | None = None,
    trace_hook: Callable[[dict], None] | None = None,
    parse_front: bool = True,
) -> DecodeResult:
    """Execute a generation plan from serialize_generation.

    Back/Both: condition items are teacher-forced; each predicted segment is
    sampled until its end token. Front: everything after the prompt is
    sampled until DOC_END, then grammar-parsed (raising GrammarViolationError
    on malformed output when parse_front is set).
    """
    session = _Session(model, vocab, params, embedding, trace_hook)
    if _is_front_plan(plan):
        for item in plan.items:
            if item.role == Role.CONDITION:
                session.force(item)
            else:
                break
        session.sample_free(DOC_END)
        session.done()
        result = DecodeResult(
            session.out, session.provenance, session.truncated, session.trace
        )
        if parse_front:
            result.parsed = parse_output(body_of(result.sequence))
        return result

    last_syl = 1
    items = list(plan.items)
    for i, item in enumerate(items):
        if item.role == Role.CONDITION:
            session.force(item)
            if item.is_token and syl_value(item.value) is not None:
                last_syl = syl_value(item.value)
            continue
        if not item.is_token:
            continue  # gold text slot: replaced by sampling
        if item.value in (END_P, END_L, END_NW):
            # The END_L closing a word/phrase line directly follows the last
            # END_NW; there is no text slot for it, so it is forced.
            prev = items[i - 1] if i > 0 else None
            if item.value == END_L and prev is not None and prev.is_token and prev.value == END_NW:
                session.force(item)
            else:
                session.sample_segment(item.value, item.role, params.segment_budget(last_syl))
        else:
            session.force(item)  # DOC_END
    session.done()
    result = DecodeResult(
        session.out, session.provenance, session.truncated, session.trace,
        segment_texts=list(session.segment_texts),
    )
    return result


def execute_infill(
    model,
    vocab: Vocab,
    context: SymbolicSequence,
    answer: SymbolicSequence,
    params: DecodeParams,
    embedding: np.ndarray | None = None,
    baseline: bool = False,
    trace_hook: Callable[[dict], None] | None = None,
) -> DecodeResult:
    """Fill masked segments following an infilling scaffold; returns the
    completed answer sequence.

    Full-context mode feeds the whole masked document, then completes each
    answer segment in order. Baseline mode (past-context only) truncates the
    visible context at each mask, splicing in previously sampled text, and
    never sees anything after the mask being filled.
    """
    if not any(
        item.is_token and item.value in (END_P, END_L, END_NW) for item in answer.items
    ):
        raise NothingMaskedError("answer scaffold has no segments")
    if baseline:
        return _execute_infill_baseline(
            model, vocab, context, answer, params, embedding, trace_hook
        )
    session = _Session(model, vocab, params, embedding, trace_hook)
    for item in context.items:
        session.force(item, record=False)
    last_syl = 1
    for item in answer.items:
        if item.role == Role.CONDITION:
            session.force(item)
            if item.is_token and syl_value(item.value) is not None:
                last_syl = syl_value(item.value)
            continue
        if not item.is_token:
            continue
        session.sample_segment(item.value, item.role, params.segment_budget(last_syl))
    session.done()
    return DecodeResult(
        session.out, session.provenance, session.truncated, session.trace,
        segment_texts=list(session.segment_texts),
    )


def _answer_segments(answer: SymbolicSequence) -> list[list[SeqItem]]:
    """Per-segment item groups of an answer scaffold (START dropped)."""
    segments: list[list[SeqItem]] = []
    current: list[SeqItem] = []
    for item in answer.items:
        if item.is_token and item.value == START:
            continue
        current.append(item)
        if item.is_token and item.value in (END_P, END_L, END_NW):
            segments.append(current)
            current = []
    return segments


_MASK_MARKERS = {INF_P, INF_L, INF_N, INF_W, MASK}


def _visible_context(
    context: SymbolicSequence, upto_mask: int, filled: Sequence[str]
) -> SymbolicSequence:
    """Context items before the upto_mask-th marker, earlier masks filled."""
    visible = SymbolicSequence()
    seen = 0
    idx = 0
    items = context.items
    while idx < len(items):
        item = items[idx]
        if item.is_token and item.value in _MASK_MARKERS:
            if seen == upto_mask:
                break
            if filled[seen]:
                visible.append(filled[seen], Role.CONDITION)
            idx += 1
            if idx < len(items) and items[idx].is_token and syl_value(items[idx].value) is not None:
                idx += 1  # the marker's syllable token goes with it
            seen += 1
            continue
        visible.items.append(item)
        idx += 1
    return visible


def _execute_infill_baseline(
    model,
    vocab: Vocab,
    context: SymbolicSequence,
    answer: SymbolicSequence,
    params: DecodeParams,
    embedding: np.ndarray | None,
    trace_hook: Callable[[dict], None] | None,
) -> DecodeResult:
    segments = _answer_segments(answer)
    segment_texts: list[str] = []
    out = SymbolicSequence()
    provenance: list[Provenance] = [Provenance.FORCED]
    out.append(START, Role.CONDITION)
    trace: list[dict] = []
    truncated = 0

    for k, segment in enumerate(segments):
        visible = _visible_context(context, k, segment_texts)
        session = _Session(
            model, vocab, replace(params, seed=params.seed + k), embedding, trace_hook
        )
        session._event({
            "type": "segment_context",
            "segment": k,
            "visible_items": len(visible.items),
            "visible_text": visible.render(),
        })
        for item in visible.items:
            session.force(item, record=False)
        session.force(SeqItem(START, Role.CONDITION), record=False)
        last_syl = 1
        for item in segment:
            if item.role == Role.CONDITION:
                session.force(item)
                if item.is_token and syl_value(item.value) is not None:
                    last_syl = syl_value(item.value)
                continue
            if not item.is_token:
                continue
            session.sample_segment(item.value, item.role, params.segment_budget(last_syl))
        segment_texts.append(session.segment_texts[-1] if session.segment_texts else "")
        out.items.extend(session.out.items)
        provenance.extend(session.provenance)
        truncated += session.truncated
        trace.extend(session.trace)
    trace.append({"type": "done", "truncated_segments": truncated})
    return DecodeResult(out, provenance, truncated, trace, segment_texts=segment_texts)


# -- Oracle model -------------------------------------------------------------

_DEFAULT_LEXICON = {
    1: ["sun", "moon", "rain", "light", "gold", "sea"],
    2: ["water", "river", "window", "silver", "garden"],
    3: ["melody", "memory", "paradise", "wandering"],
    4: ["celebration", "ceremony", "watermelon"],
}


class OracleModel:
    """Deterministic test model that always satisfies syllable directives.

    Whenever asked for logits inside a segment, it plans a word sequence with
    exactly the requested syllable count (greedy, largest words first), then
    emits it one id at a time followed by the segment's end token. This
    validates the decoding harness independently of learning. Only the
    standard INF/GEN directives are understood; the same-mask ablation hides
    granularity and is not supported.
    """

    def __init__(self, vocab: Vocab, lexicon: dict[int, list[str]] | None = None):
        self.vocab = vocab
        self.lexicon = lexicon or _DEFAULT_LEXICON
        for count, words in self.lexicon.items():
            for word in words:
                actual = count_word(word)
                if actual != count:
                    raise ValueError(
                        f"oracle lexicon word {word!r} counts {actual}, expected {count}"
                    )
        self.sizes = sorted(self.lexicon, reverse=True)

    def words_for(self, syllables: int) -> list[str]:
        remaining = syllables
        words = []
        choice = 0
        while remaining > 0:
            size = next((s for s in self.sizes if s <= remaining), None)
            if size is None:
                raise ValueError(f"cannot compose {syllables} syllables")
            pool = self.lexicon[size]
            words.append(pool[choice % len(pool)])
            choice += 1
            remaining -= size
        return words

    def start_session(self, embedding: np.ndarray | None = None) -> "OracleSession":
        return OracleSession(self)


_DIRECTIVES = {
    GEN_P: END_P,
    GEN_L: END_L,
    GEN_N: END_NW,
    GEN_W: END_NW,
    INF_P: END_P,
    INF_L: END_L,
    INF_N: END_NW,
    INF_W: END_NW,
}


class OracleSession:
    def __init__(self, oracle: OracleModel):
        self.oracle = oracle
        self.vocab = oracle.vocab
        self.history: list[int] = []
        self.queue: list[int] = []

    def feed(self, ids: Sequence[int]) -> None:
        self.history.extend(ids)
        if self.queue and list(ids) == [self.queue[0]]:
            self.queue.pop(0)
        elif ids:
            self.queue = []

    def _plan_segment(self) -> None:
        items = decode(self.vocab, self.history)
        directive = None
        directive_pos = -1
        for pos in range(len(items) - 1, -1, -1):
            item = items[pos]
            if isinstance(item, ControlToken) and item in _DIRECTIVES:
                directive, directive_pos = item, pos
                break
        if directive is None:
            self.queue = [self.vocab.special_id(DOC_END)]
            return
        target = None
        if directive in (INF_P, INF_L, INF_N, INF_W):
            nxt = items[directive_pos + 1] if directive_pos + 1 < len(items) else None
            if isinstance(nxt, ControlToken):
                target = syl_value(nxt)
        if target is None:
            for pos in range(directive_pos - 1, -1, -1):
                item = items[pos]
                if isinstance(item, ControlToken) and syl_value(item) is not None:
                    target = syl_value(item)
                    break
        if target is None:
            target = 1
        text = " ".join(self.oracle.words_for(target))
        ids = encode_text(self.vocab, " " + text)
        ids.append(self.vocab.special_id(_DIRECTIVES[directive]))
        self.queue = ids

    def next_logits(self) -> np.ndarray:
        if not self.queue:
            self._plan_segment()
        logits = np.zeros(self.vocab.size, dtype=np.float64)
        logits[self.queue[0]] = 1000.0
        return logits
