"""Hierarchical generation/infilling plans and their token serializations.

A plan tree mirrors a document: one paragraph root per section, line
children, word leaves. Stochastic span selection turns the tree into a
tiling of target segments at mixed granularities; serialization turns the
tiling into the exact control-token sequences the model trains on and the
decoder executes. parse_output inverts serialization, recovering the
document plus expected/realized syllable pairs for every syllable condition.

Token grammar (generation body, one paragraph)::

    FORM ( SYL GEN_P text END_P
         | ( SYL ( GEN_L text END_L
                 | GEN_L_NW ( SYL (GEN_N|GEN_W) text END_NW )+ END_L ) )+ )

The document is closed by DOC_END. In the Back layout the body follows
LYR_START directly; the Front layout puts the token stream (minus text)
before LYR_START as a prompt and predicts everything after; Both does both.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Union

from .corpus import Line, Paragraph, SongDocument, SongForm, Word
from .syllables import count_text_or_zero, count_word

SYL_CAP = 300
MAX_PHRASE_WORDS = 8


class PlannerError(ValueError):
    pass


class SyllableCapExceededError(PlannerError):
    pass


class IncompleteTilingError(PlannerError):
    pass


class NothingMaskedError(PlannerError):
    pass


class GrammarViolationError(PlannerError):
    def __init__(self, position: int, expected: str, found: str):
        super().__init__(f"at item {position}: expected {expected}, found {found}")
        self.position = position
        self.expected = expected
        self.found = found


# -- Control tokens -----------------------------------------------------------


@dataclass(frozen=True)
class ControlToken:
    surface: str

    def __str__(self) -> str:
        return self.surface


LYR_START = ControlToken("<LYR_START>")
GEN_P = ControlToken("<GEN_P>")
END_P = ControlToken("<END_P>")
GEN_L = ControlToken("<GEN_L>")
END_L = ControlToken("<END_L>")
GEN_L_NW = ControlToken("<GEN_L_NW>")
GEN_N = ControlToken("<GEN_N>")
GEN_W = ControlToken("<GEN_W>")
END_NW = ControlToken("<END_NW>")
INF_P = ControlToken("<INF_P>")
INF_L = ControlToken("<INF_L>")
INF_N = ControlToken("<INF_N>")
INF_W = ControlToken("<INF_W>")
START = ControlToken("<START>")
MASK = ControlToken("<MASK>")
PAD = ControlToken("<PAD>")
DOC_END = ControlToken("<DOC_END>")

FORM_TOKENS = {
    SongForm.VERSE: ControlToken("<VERSE>"),
    SongForm.CHORUS: ControlToken("<CHORUS>"),
    SongForm.PRE_CHORUS: ControlToken("<PRE_CHORUS>"),
    SongForm.POST_CHORUS: ControlToken("<POST_CHORUS>"),
    SongForm.BRIDGE: ControlToken("<BRIDGE>"),
}
_FORM_BY_SURFACE = {tok.surface: form for form, tok in FORM_TOKENS.items()}

_SYL_RE = re.compile(r"^<SYL:(\d+)>$")


def syl_token(count: int) -> ControlToken:
    if not 1 <= count <= SYL_CAP:
        raise SyllableCapExceededError(f"syllable count {count} outside 1..{SYL_CAP}")
    return ControlToken(f"<SYL:{count}>")


def syl_value(token: ControlToken) -> int | None:
    match = _SYL_RE.match(token.surface)
    return int(match.group(1)) if match else None


def form_value(token: ControlToken) -> SongForm | None:
    return _FORM_BY_SURFACE.get(token.surface)


def all_control_tokens() -> list[ControlToken]:
    """The closed token vocabulary, in canonical id-assignment order."""
    tokens = [FORM_TOKENS[f] for f in SongForm]
    tokens += [ControlToken(f"<SYL:{n}>") for n in range(1, SYL_CAP + 1)]
    tokens += [
        LYR_START, GEN_P, END_P, GEN_L, END_L, GEN_L_NW, GEN_N, GEN_W,
        END_NW, INF_P, INF_L, INF_N, INF_W, START, MASK, PAD, DOC_END,
    ]
    return tokens


# -- Symbolic sequences -------------------------------------------------------


class Role(Enum):
    CONDITION = "condition"
    PREDICT = "predict"


Item = Union[ControlToken, str]


@dataclass(frozen=True)
class SeqItem:
    value: Item
    role: Role

    @property
    def is_token(self) -> bool:
        return isinstance(self.value, ControlToken)


@dataclass
class SymbolicSequence:
    items: list[SeqItem] = field(default_factory=list)

    def append(self, value: Item, role: Role) -> None:
        self.items.append(SeqItem(value, role))

    def extend(self, other: "SymbolicSequence") -> None:
        self.items.extend(other.items)

    def surfaces(self) -> list[str]:
        return [i.value.surface if i.is_token else i.value for i in self.items]

    def render(self) -> str:
        return " ".join(self.surfaces())

    def to_json(self) -> list[dict]:
        records = []
        for item in self.items:
            key = "token" if item.is_token else "text"
            value = item.value.surface if item.is_token else item.value
            records.append({key: value, "role": item.role.value})
        return records

    @classmethod
    def from_json(cls, records: Iterable[dict]) -> "SymbolicSequence":
        seq = cls()
        for rec in records:
            role = Role(rec["role"])
            if "token" in rec:
                seq.append(ControlToken(rec["token"]), role)
            else:
                seq.append(rec["text"], role)
        return seq

    def __len__(self) -> int:
        return len(self.items)


class Layout(Enum):
    FRONT = "front"
    BACK = "back"
    BOTH = "both"


# -- Plan trees ---------------------------------------------------------------


class Granularity(Enum):
    PARAGRAPH = "paragraph"
    LINE = "line"
    PHRASE = "phrase"
    WORD = "word"


class Mode(Enum):
    TARGET = "target"
    RECURSE = "recurse"
    CONTEXT = "context"


@dataclass
class PlanNode:
    granularity: Granularity
    syllable_target: int
    mode: Mode
    text: str | None = None
    children: list["PlanNode"] = field(default_factory=list)


@dataclass
class ParagraphPlan:
    form: SongForm
    form_index: int
    node: PlanNode


@dataclass
class PlanTree:
    song_id: str
    paragraphs: list[ParagraphPlan]


def build_tree(doc: SongDocument) -> PlanTree:
    """Paragraph roots with line children and word leaves; exact syllable sums."""
    plans = []
    for para in doc.paragraphs:
        if para.syllables > SYL_CAP:
            raise SyllableCapExceededError(
                f"paragraph of {para.syllables} syllables exceeds cap {SYL_CAP}"
            )
        lines = []
        for line in para.lines:
            leaves = [
                PlanNode(Granularity.WORD, w.syllables, Mode.TARGET, w.text)
                for w in line.words
            ]
            lines.append(
                PlanNode(Granularity.LINE, line.syllables, Mode.RECURSE, line.text, leaves)
            )
        root = PlanNode(
            Granularity.PARAGRAPH, para.syllables, Mode.RECURSE, para.text, lines
        )
        plans.append(ParagraphPlan(para.form, para.form_index, root))
    return PlanTree(doc.id, plans)


def _segment_line(
    words: list[PlanNode], rng: random.Random, unit_mode: "callable"
) -> list[PlanNode]:
    """Left-to-right word walk: single words (p=0.5) or phrases of 1..8 words."""
    out = []
    i = 0
    while i < len(words):
        if rng.random() < 0.5:
            node = PlanNode(Granularity.WORD, words[i].syllable_target, Mode.TARGET, words[i].text)
            i += 1
        else:
            k = rng.randint(1, min(MAX_PHRASE_WORDS, len(words) - i))
            span = words[i : i + k]
            text = " ".join(w.text for w in span)
            total = sum(w.syllable_target for w in span)
            node = PlanNode(Granularity.PHRASE, total, Mode.TARGET, text)
            i += k
        node.mode = unit_mode(rng)
        out.append(node)
    return out


def select_spans(tree: PlanTree, p: float, rng: random.Random) -> PlanTree:
    """Generation tiling: pre-order subtree selection with probability p.

    Selected paragraph/line nodes become whole targets; lines that recurse
    are segmented into word/phrase targets. The resulting frontier tiles the
    document exactly.
    """
    plans = []
    for plan in tree.paragraphs:
        root = plan.node
        if rng.random() < p:
            new_root = PlanNode(root.granularity, root.syllable_target, Mode.TARGET, root.text)
        else:
            lines = []
            for line in root.children:
                if rng.random() < p:
                    lines.append(PlanNode(line.granularity, line.syllable_target, Mode.TARGET, line.text))
                else:
                    segs = _segment_line(line.children, rng, lambda _: Mode.TARGET)
                    lines.append(
                        PlanNode(line.granularity, line.syllable_target, Mode.RECURSE, line.text, segs)
                    )
            new_root = PlanNode(root.granularity, root.syllable_target, Mode.RECURSE, root.text, lines)
        plans.append(ParagraphPlan(plan.form, plan.form_index, new_root))
    return PlanTree(tree.song_id, plans)


def select_masks(tree: PlanTree, p: float, rng: random.Random) -> PlanTree:
    """Infilling marking: masked targets with probability p, context otherwise.

    Uses the same traversal as select_spans; sub-line units are formed by the
    word/phrase walk and then masked independently with probability p. If the
    walk masks nothing, one uniformly chosen line is masked so the example is
    usable.
    """
    plans = []
    for plan in tree.paragraphs:
        root = plan.node
        if rng.random() < p:
            new_root = PlanNode(root.granularity, root.syllable_target, Mode.TARGET, root.text)
        else:
            lines = []
            for line in root.children:
                if rng.random() < p:
                    lines.append(PlanNode(line.granularity, line.syllable_target, Mode.TARGET, line.text))
                else:
                    mode = lambda r: Mode.TARGET if r.random() < p else Mode.CONTEXT
                    segs = _segment_line(line.children, rng, mode)
                    lines.append(
                        PlanNode(line.granularity, line.syllable_target, Mode.RECURSE, line.text, segs)
                    )
            new_root = PlanNode(root.granularity, root.syllable_target, Mode.RECURSE, root.text, lines)
        plans.append(ParagraphPlan(plan.form, plan.form_index, new_root))
    result = PlanTree(tree.song_id, plans)
    if not any(True for _ in iter_masked(result)):
        flat = [
            (pi, li)
            for pi, plan in enumerate(result.paragraphs)
            if plan.node.mode == Mode.RECURSE
            for li in range(len(plan.node.children))
        ]
        pi, li = flat[rng.randrange(len(flat))]
        line = result.paragraphs[pi].node.children[li]
        result.paragraphs[pi].node.children[li] = PlanNode(
            Granularity.LINE, line.syllable_target, Mode.TARGET, line.text
        )
    return result


def iter_frontier(tree: PlanTree) -> Iterable[tuple[ParagraphPlan, PlanNode]]:
    """Target/context units in document order."""
    for plan in tree.paragraphs:
        if plan.node.mode != Mode.RECURSE:
            yield plan, plan.node
            continue
        for line in plan.node.children:
            if line.mode != Mode.RECURSE:
                yield plan, line
            else:
                for seg in line.children:
                    yield plan, seg


def iter_masked(tree: PlanTree) -> Iterable[tuple[ParagraphPlan, PlanNode]]:
    for plan, node in iter_frontier(tree):
        if node.mode == Mode.TARGET:
            yield plan, node


def frontier_text(tree: PlanTree) -> str:
    """Concatenated frontier spans; equals the document text for valid tilings."""
    parts = []
    for plan in tree.paragraphs:
        if plan.node.mode != Mode.RECURSE:
            parts.append(plan.node.text or "")
            continue
        lines = []
        for line in plan.node.children:
            if line.mode != Mode.RECURSE:
                lines.append(line.text or "")
            else:
                lines.append(" ".join(seg.text or "" for seg in line.children))
        parts.append("\n".join(lines))
    return "\n".join(parts)


# -- Generation serialization -------------------------------------------------

_END_FOR = {
    Granularity.PARAGRAPH: END_P,
    Granularity.LINE: END_L,
    Granularity.PHRASE: END_NW,
    Granularity.WORD: END_NW,
}
_GEN_FOR = {Granularity.PHRASE: GEN_N, Granularity.WORD: GEN_W}
_INF_FOR = {
    Granularity.PARAGRAPH: INF_P,
    Granularity.LINE: INF_L,
    Granularity.PHRASE: INF_N,
    Granularity.WORD: INF_W,
}


def _body_items(tree: PlanTree) -> SymbolicSequence:
    seq = SymbolicSequence()

    def emit_text(node: PlanNode) -> None:
        if node.text is not None:
            seq.append(node.text, Role.PREDICT)

    for plan in tree.paragraphs:
        root = plan.node
        seq.append(FORM_TOKENS[plan.form], Role.CONDITION)
        if root.mode == Mode.TARGET:
            seq.append(syl_token(root.syllable_target), Role.CONDITION)
            seq.append(GEN_P, Role.CONDITION)
            emit_text(root)
            seq.append(END_P, Role.PREDICT)
            continue
        if root.mode != Mode.RECURSE:
            raise IncompleteTilingError("context node in a generation plan")
        for line in root.children:
            seq.append(syl_token(line.syllable_target), Role.CONDITION)
            if line.mode == Mode.TARGET:
                seq.append(GEN_L, Role.CONDITION)
                emit_text(line)
                seq.append(END_L, Role.PREDICT)
            elif line.mode == Mode.RECURSE:
                seq.append(GEN_L_NW, Role.CONDITION)
                for seg in line.children:
                    if seg.mode != Mode.TARGET:
                        raise IncompleteTilingError("context segment in a generation plan")
                    seq.append(syl_token(seg.syllable_target), Role.CONDITION)
                    seq.append(_GEN_FOR[seg.granularity], Role.CONDITION)
                    emit_text(seg)
                    seq.append(END_NW, Role.PREDICT)
                seq.append(END_L, Role.PREDICT)
            else:
                raise IncompleteTilingError("context line in a generation plan")
    seq.append(DOC_END, Role.PREDICT)
    return seq


def serialize_generation(tree: PlanTree, layout: Layout) -> SymbolicSequence:
    """Serialize a tiled plan tree to its layout-specific token sequence."""
    body = _body_items(tree)
    seq = SymbolicSequence()
    if layout in (Layout.FRONT, Layout.BOTH):
        for item in body.items:
            if item.is_token:
                seq.append(item.value, Role.CONDITION)
    seq.append(LYR_START, Role.CONDITION)
    if layout == Layout.FRONT:
        for item in body.items:
            seq.append(item.value, Role.PREDICT)
    else:
        seq.extend(body)
    return seq


def tree_constraints(tree: PlanTree) -> list[tuple[Granularity, int]]:
    """Syllable conditions in serialization order: one entry per SYL token."""
    out = []
    for plan in tree.paragraphs:
        root = plan.node
        if root.mode == Mode.TARGET:
            out.append((Granularity.PARAGRAPH, root.syllable_target))
            continue
        for line in root.children:
            out.append((Granularity.LINE, line.syllable_target))
            if line.mode == Mode.RECURSE:
                for seg in line.children:
                    out.append((seg.granularity, seg.syllable_target))
    return out


# -- Infilling serialization --------------------------------------------------


class _TextMerger:
    """Accumulates text fragments; words joined by spaces, lines by newlines."""

    def __init__(self, seq: SymbolicSequence, role: Role):
        self.seq = seq
        self.role = role
        self.parts: list[str] = []

    def add(self, fragment: str) -> None:
        if fragment:
            self.parts.append(fragment)

    def newline(self) -> None:
        self.parts.append("\n")

    def flush(self) -> None:
        if not self.parts:
            return
        text = ""
        for part in self.parts:
            if part == "\n":
                text = text + "\n"
            else:
                text = text + (" " if text and not text.endswith("\n") else "") + part
        self.seq.append(text, self.role)
        self.parts = []


def serialize_infilling(
    tree: PlanTree, same_mask: bool = False, no_songform: bool = False
) -> tuple[SymbolicSequence, SymbolicSequence]:
    """Context (document with masked spans) and answer (<START> + segments).

    Masked spans render as ``INF_X SYL(s)`` in the context, or a bare MASK
    under the same_mask ablation (the syllable token then only appears in the
    answer). Answer segments are FORM (unless no_songform), the mask marker,
    SYL, the true text, and the granularity's end token.
    """
    masked = list(iter_masked(tree))
    if not masked:
        raise NothingMaskedError("no masked target nodes in tree")

    context = SymbolicSequence()
    merger = _TextMerger(context, Role.CONDITION)

    def emit_mask_marker(node: PlanNode) -> None:
        merger.flush()
        if same_mask:
            context.append(MASK, Role.CONDITION)
        else:
            context.append(_INF_FOR[node.granularity], Role.CONDITION)
            context.append(syl_token(node.syllable_target), Role.CONDITION)

    for plan in tree.paragraphs:
        merger.flush()
        context.append(FORM_TOKENS[plan.form], Role.CONDITION)
        context.append(syl_token(plan.node.syllable_target), Role.CONDITION)
        root = plan.node
        if root.mode == Mode.TARGET:
            emit_mask_marker(root)
            merger.newline()
            continue
        if root.mode == Mode.CONTEXT:
            merger.add(root.text or "")
            merger.newline()
            continue
        for line in root.children:
            if line.mode == Mode.TARGET:
                emit_mask_marker(line)
            elif line.mode == Mode.CONTEXT:
                merger.add(line.text or "")
            else:
                for seg in line.children:
                    if seg.mode == Mode.TARGET:
                        emit_mask_marker(seg)
                    else:
                        merger.add(seg.text or "")
            merger.newline()
    merger.flush()

    answer = SymbolicSequence()
    answer.append(START, Role.CONDITION)
    for plan, node in masked:
        if not no_songform:
            answer.append(FORM_TOKENS[plan.form], Role.CONDITION)
        answer.append(MASK if same_mask else _INF_FOR[node.granularity], Role.CONDITION)
        answer.append(syl_token(node.syllable_target), Role.CONDITION)
        if node.text is not None:
            answer.append(node.text, Role.PREDICT)
        answer.append(_END_FOR[node.granularity], Role.PREDICT)
    return context, answer


def assemble_infilling(context: SymbolicSequence, answer: SymbolicSequence) -> SymbolicSequence:
    seq = SymbolicSequence(list(context.items))
    seq.extend(answer)
    return seq


# -- Structured plan construction (service front door) -------------------------


def tree_from_plan(sections: list[dict], song_id: str = "") -> PlanTree:
    """Build a skeleton plan tree from structured section specs.

    Each section is either ``{"form": ..., "paragraph_syllables": n}`` or
    ``{"form": ..., "lines": [{"syllables": n, "segmentation": [...]}]}``
    where segmentation entries are ``{"kind": "word"|"phrase", "syllables": n}``.
    Targets carry no text; the decoder fills them.
    """
    if not sections:
        raise PlannerError("plan has no sections")
    plans = []
    counts: dict[SongForm, int] = {}
    for section in sections:
        form = SongForm(section["form"])
        counts[form] = counts.get(form, 0) + 1
        if section.get("paragraph_syllables"):
            target = int(section["paragraph_syllables"])
            syl_token(target)  # range check
            node = PlanNode(Granularity.PARAGRAPH, target, Mode.TARGET)
        else:
            lines = section.get("lines") or []
            if not lines:
                raise PlannerError("section needs paragraph_syllables or lines")
            line_nodes = []
            for line in lines:
                segmentation = line.get("segmentation")
                if segmentation:
                    units = []
                    for seg in segmentation:
                        seg_target = int(seg["syllables"])
                        syl_token(seg_target)
                        kind = seg["kind"]
                        if kind not in ("word", "phrase"):
                            raise PlannerError(f"unknown segment kind {kind!r}")
                        units.append(
                            PlanNode(
                                Granularity.WORD if kind == "word" else Granularity.PHRASE,
                                seg_target,
                                Mode.TARGET,
                            )
                        )
                    total = sum(u.syllable_target for u in units)
                    declared = line.get("syllables")
                    if declared is not None and int(declared) != total:
                        raise PlannerError(
                            f"line syllables {declared} != segmentation total {total}"
                        )
                    syl_token(total)
                    line_nodes.append(
                        PlanNode(Granularity.LINE, total, Mode.RECURSE, None, units)
                    )
                else:
                    target = int(line["syllables"])
                    syl_token(target)
                    line_nodes.append(PlanNode(Granularity.LINE, target, Mode.TARGET))
            total = sum(n.syllable_target for n in line_nodes)
            syl_token(total)
            node = PlanNode(Granularity.PARAGRAPH, total, Mode.RECURSE, None, line_nodes)
        plans.append(ParagraphPlan(form, counts[form], node))
    return PlanTree(song_id, plans)


def tree_with_masks(doc, masks: list[dict]) -> PlanTree:
    """Mark spans of an existing document as infill targets.

    Mask refs: ``{"paragraph": i, "granularity": "paragraph"|"line"|"phrase"|
    "word", "line": j, "word_start": k, "word_count": n, "syllables": m}``.
    An omitted syllable target keeps the current text's count. Everything
    not masked becomes verbatim context.
    """
    tree = build_tree(doc)
    if not masks:
        raise NothingMaskedError("no masks requested")
    by_paragraph: dict[int, list[dict]] = {}
    for mask in masks:
        by_paragraph.setdefault(int(mask["paragraph"]), []).append(mask)

    for pi, plan in enumerate(tree.paragraphs):
        para_masks = by_paragraph.pop(pi, [])
        root = plan.node
        if any(m["granularity"] == "paragraph" for m in para_masks):
            if len(para_masks) != 1:
                raise PlannerError("paragraph mask cannot be combined with others")
            mask = para_masks[0]
            target = int(mask.get("syllables") or root.syllable_target)
            syl_token(target)
            plan.node = PlanNode(
                Granularity.PARAGRAPH, target, Mode.TARGET, root.text
            )
            continue
        by_line: dict[int, list[dict]] = {}
        for mask in para_masks:
            if "line" not in mask:
                raise PlannerError("non-paragraph masks need a line index")
            by_line.setdefault(int(mask["line"]), []).append(mask)
        new_lines = []
        for li, line in enumerate(root.children):
            line_masks = by_line.pop(li, [])
            if not line_masks:
                new_lines.append(
                    PlanNode(Granularity.LINE, line.syllable_target, Mode.CONTEXT, line.text)
                )
                continue
            if any(m["granularity"] == "line" for m in line_masks):
                if len(line_masks) != 1:
                    raise PlannerError("line mask cannot be combined with span masks")
                mask = line_masks[0]
                target = int(mask.get("syllables") or line.syllable_target)
                syl_token(target)
                new_lines.append(PlanNode(Granularity.LINE, target, Mode.TARGET, line.text))
                continue
            new_lines.append(_line_with_span_masks(line, line_masks))
        if by_line:
            raise PlannerError(f"mask line index out of range: {sorted(by_line)}")
        plan.node = PlanNode(
            Granularity.PARAGRAPH,
            sum(n.syllable_target for n in new_lines),
            Mode.RECURSE,
            root.text,
            new_lines,
        )
    if by_paragraph:
        raise PlannerError(f"mask paragraph index out of range: {sorted(by_paragraph)}")
    return tree


def _line_with_span_masks(line: PlanNode, masks: list[dict]) -> PlanNode:
    words = line.children
    spans = []
    for mask in masks:
        start = int(mask.get("word_start", 0))
        count = int(mask.get("word_count", 1))
        if mask["granularity"] == "word" and count != 1:
            raise PlannerError("word masks span exactly one word")
        if not (0 <= start and start + count <= len(words) and count >= 1):
            raise PlannerError("mask word span out of range")
        spans.append((start, count, mask))
    spans.sort()
    for (s1, c1, _), (s2, _, _) in zip(spans, spans[1:]):
        if s1 + c1 > s2:
            raise PlannerError("overlapping masks in one line")

    units: list[PlanNode] = []

    def context_chunk(start: int, stop: int) -> None:
        idx = start
        while idx < stop:
            chunk = words[idx : min(idx + MAX_PHRASE_WORDS, stop)]
            units.append(
                PlanNode(
                    Granularity.PHRASE if len(chunk) > 1 else Granularity.WORD,
                    sum(w.syllable_target for w in chunk),
                    Mode.CONTEXT,
                    " ".join(w.text for w in chunk),
                )
            )
            idx += len(chunk)

    cursor = 0
    for start, count, mask in spans:
        context_chunk(cursor, start)
        span_words = words[start : start + count]
        current = sum(w.syllable_target for w in span_words)
        target = int(mask.get("syllables") or current)
        syl_token(target)
        units.append(
            PlanNode(
                Granularity.WORD if mask["granularity"] == "word" else Granularity.PHRASE,
                target,
                Mode.TARGET,
                " ".join(w.text for w in span_words),
            )
        )
        cursor = start + count
    context_chunk(cursor, len(words))
    return PlanNode(
        Granularity.LINE,
        sum(u.syllable_target for u in units),
        Mode.RECURSE,
        line.text,
        units,
    )


def document_from_filled_tree(tree: PlanTree, filled: list[str], song_id: str = ""):
    """Rebuild a document from a masked tree plus sampled texts (in mask order)."""
    texts = list(filled)

    def take(node: PlanNode) -> str:
        if node.mode == Mode.TARGET:
            if not texts:
                raise PlannerError("fewer filled texts than masked nodes")
            return texts.pop(0)
        return node.text or ""

    paragraphs = []
    for plan in tree.paragraphs:
        root = plan.node
        if root.mode != Mode.RECURSE:
            raw_lines = [l for l in take(root).split("\n") if l.strip()]
        else:
            raw_lines = []
            for line in root.children:
                if line.mode != Mode.RECURSE:
                    raw_lines.append(take(line))
                else:
                    raw_lines.append(" ".join(t for t in (take(u) for u in line.children) if t))
        lines = []
        for raw in raw_lines:
            words = _words_of(raw, None)
            if words:
                lines.append(Line(tuple(words)))
        if lines:
            paragraphs.append(Paragraph(plan.form, plan.form_index, tuple(lines)))
    if texts:
        raise PlannerError("more filled texts than masked nodes")
    return SongDocument(id=song_id or tree.song_id, paragraphs=tuple(paragraphs))


# -- Output parsing -----------------------------------------------------------


@dataclass(frozen=True)
class SyllablePair:
    granularity: Granularity
    expected: int
    realized: int
    text: str = ""


@dataclass
class ParsedOutput:
    document: SongDocument
    pairs: list[SyllablePair]


def body_of(seq: SymbolicSequence) -> SymbolicSequence:
    """Items after the last LYR_START (the whole sequence if none)."""
    for i in range(len(seq.items) - 1, -1, -1):
        item = seq.items[i]
        if item.is_token and item.value == LYR_START:
            return SymbolicSequence(list(seq.items[i + 1 :]))
    return SymbolicSequence(list(seq.items))


def _words_of(text: str, exceptions: dict[str, int] | None) -> list[Word]:
    words = []
    for token in text.split():
        try:
            words.append(Word(token, count_word(token, exceptions)))
        except Exception:
            words.append(Word(token, 0))
    return words


def parse_output(
    seq: SymbolicSequence,
    song_id: str = "",
    exceptions: dict[str, int] | None = None,
) -> ParsedOutput:
    """Parse a body-grammar sequence back into a document plus syllable pairs.

    Every SYL condition yields one (expected, realized) pair at the
    granularity of the span it governs. Raises GrammarViolationError on any
    token outside the grammar.
    """
    items = list(seq.items)
    pairs: list[SyllablePair] = []
    paragraphs: list[Paragraph] = []
    form_counts: dict[SongForm, int] = {}
    pos = 0
    n = len(items)

    def fail(expected: str) -> GrammarViolationError:
        found = "end of sequence"
        if pos < n:
            item = items[pos]
            found = item.value.surface if item.is_token else f"text {item.value!r}"
        return GrammarViolationError(pos, expected, found)

    def peek_token() -> ControlToken | None:
        if pos < n and items[pos].is_token:
            return items[pos].value
        return None

    def take_text() -> str:
        nonlocal pos
        parts = []
        while pos < n and not items[pos].is_token:
            parts.append(items[pos].value)
            pos += 1
        return " ".join(parts)

    def expect(token: ControlToken) -> None:
        nonlocal pos
        if peek_token() != token:
            raise fail(token.surface)
        pos += 1

    def take_syl() -> int:
        nonlocal pos
        tok = peek_token()
        value = syl_value(tok) if tok else None
        if value is None:
            raise fail("<SYL:n>")
        pos += 1
        return value

    while pos < n:
        tok = peek_token()
        if tok == DOC_END:
            pos += 1
            break
        form = form_value(tok) if tok else None
        if form is None:
            raise fail("song form token or <DOC_END>")
        pos += 1
        form_counts[form] = form_counts.get(form, 0) + 1
        syl = take_syl()
        lines: list[Line] = []

        tok = peek_token()
        if tok == GEN_P:
            pos += 1
            text = take_text()
            expect(END_P)
            pairs.append(
                SyllablePair(Granularity.PARAGRAPH, syl, count_text_or_zero(text), text)
            )
            for raw in text.split("\n"):
                words = _words_of(raw, exceptions)
                if words:
                    lines.append(Line(tuple(words)))
        else:
            # Line-decomposed paragraph; the SYL already read is the first line's.
            line_syl = syl
            while True:
                # The line's pair precedes its segments' pairs, matching the
                # order in which the SYL conditions appear in the stream.
                line_pair_slot = len(pairs)
                tok = peek_token()
                if tok == GEN_L:
                    pos += 1
                    text = take_text()
                    expect(END_L)
                    line_text = text
                elif tok == GEN_L_NW:
                    pos += 1
                    seg_texts = []
                    while True:
                        tok = peek_token()
                        if tok is not None and syl_value(tok) is not None:
                            seg_syl = take_syl()
                            tok = peek_token()
                            if tok == GEN_N:
                                gran = Granularity.PHRASE
                            elif tok == GEN_W:
                                gran = Granularity.WORD
                            else:
                                raise fail("<GEN_N> or <GEN_W>")
                            pos += 1
                            text = take_text()
                            expect(END_NW)
                            pairs.append(
                                SyllablePair(gran, seg_syl, count_text_or_zero(text), text)
                            )
                            seg_texts.append(text)
                        elif tok == END_L:
                            pos += 1
                            break
                        else:
                            raise fail("<SYL:n> or <END_L>")
                    line_text = " ".join(t for t in seg_texts if t)
                else:
                    raise fail("<GEN_L> or <GEN_L_NW>")
                pairs.insert(
                    line_pair_slot,
                    SyllablePair(Granularity.LINE, line_syl, count_text_or_zero(line_text), line_text),
                )
                words = _words_of(line_text, exceptions)
                if words:
                    lines.append(Line(tuple(words)))
                tok = peek_token()
                if tok is not None and syl_value(tok) is not None:
                    line_syl = take_syl()
                    continue
                break
        # Paragraphs whose segments produced no words (degenerate decodes)
        # cannot be represented and are dropped from the document; their
        # syllable pairs above still count against the metrics.
        if lines:
            paragraphs.append(Paragraph(form, form_counts[form], tuple(lines)))
    if pos < n:
        raise fail("end of sequence after <DOC_END>")
    doc = SongDocument(id=song_id, paragraphs=tuple(paragraphs))
    return ParsedOutput(doc, pairs)
