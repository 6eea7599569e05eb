"""Local HTTP service exposing generation, infilling, and syllable utilities.

The service accepts structured plans and performs token serialization itself,
so the grammar stays an internal contract. Responses embed the exact symbolic
sequence used, letting clients round-trip losslessly. Identical request plus
seed yields an identical response.

Endpoints (JSON): POST /v1/generate, POST /v1/infill, POST /v1/syllables,
GET /v1/models, GET /v1/generate/stream?session=ID (line-delimited JSON
events).
"""

from __future__ import annotations

import json
import threading
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from .corpus import doc_from_json, doc_to_json
from .decoder import (
    BudgetExhaustedError,
    DecodeParams,
    DecodeResult,
    OracleModel,
    execute_infill,
    execute_plan,
)
from .lm import HashedBagEmbedder, LMError, load_checkpoint, read_checkpoint_header
from .planner import (
    GrammarViolationError,
    Layout,
    PlannerError,
    SyllableCapExceededError,
    body_of,
    document_from_filled_tree,
    iter_masked,
    parse_output,
    serialize_generation,
    serialize_infilling,
    tree_constraints,
    tree_from_plan,
    tree_with_masks,
)
from .syllables import EmptyWordError, count_word
from .tokenizer import Vocab, load_vocab


# -- Requests -----------------------------------------------------------------


class SegmentSpec(BaseModel):
    kind: Literal["word", "phrase"]
    syllables: int = Field(ge=1, le=300)


class LineSpec(BaseModel):
    syllables: int | None = Field(default=None, ge=1, le=300)
    segmentation: list[SegmentSpec] | None = None


class SectionSpec(BaseModel):
    form: str
    paragraph_syllables: int | None = Field(default=None, ge=1, le=300)
    lines: list[LineSpec] | None = None


class DecodeOverrides(BaseModel):
    top_k: int | None = None
    top_p: float | None = None
    temperature: float | None = None
    repetition_penalty: float | None = None
    max_tokens_per_segment: int | None = None


class GenerateRequest(BaseModel):
    input_text: str = ""
    plan: list[SectionSpec] = Field(min_length=1)
    layout: Literal["front", "back", "both"] = "back"
    params: DecodeOverrides | None = None
    seed: int = 0
    model: str | None = None
    session_id: str | None = None


class MaskSpec(BaseModel):
    paragraph: int = Field(ge=0)
    granularity: Literal["paragraph", "line", "phrase", "word"]
    line: int | None = Field(default=None, ge=0)
    word_start: int | None = Field(default=None, ge=0)
    word_count: int | None = Field(default=None, ge=1)
    syllables: int | None = Field(default=None, ge=1, le=300)


class InfillRequest(BaseModel):
    document: dict
    masks: list[MaskSpec] = Field(min_length=1)
    same_mask: bool = False
    no_songform: bool = False
    n_samples: int = Field(default=1, ge=1, le=16)
    params: DecodeOverrides | None = None
    seed: int = 0
    model: str | None = None
    session_id: str | None = None


class SyllablesRequest(BaseModel):
    text: str


# -- Session event log for streaming -------------------------------------------


class SessionLog:
    def __init__(self) -> None:
        self.events: list[dict] = []
        self.done = False
        self.cond = threading.Condition()

    def push(self, event: dict) -> None:
        with self.cond:
            self.events.append(event)
            if event.get("type") == "done":
                self.done = True
            self.cond.notify_all()

    def follow(self) -> Iterator[dict]:
        index = 0
        while True:
            with self.cond:
                while index >= len(self.events) and not self.done:
                    self.cond.wait(timeout=30)
                if index >= len(self.events) and self.done:
                    return
                event = self.events[index]
            index += 1
            yield event


class ModelRegistry:
    """Lazy checkpoint loading; the oracle test model is always available."""

    def __init__(self, model_dir: str | Path | None):
        self.model_dir = Path(model_dir) if model_dir else None
        self.lock = threading.Lock()
        self.vocab: Vocab | None = None
        self.models: dict[str, object] = {}
        if self.model_dir and (self.model_dir / "vocab.json").exists():
            self.vocab = load_vocab(self.model_dir / "vocab.json")

    def names(self) -> list[dict]:
        entries: list[dict] = [{"name": "oracle", "kind": "oracle"}]
        if self.model_dir:
            for path in sorted(self.model_dir.glob("*.ckpt")):
                entry = {"name": path.stem, "kind": "checkpoint"}
                try:
                    entry["config"] = read_checkpoint_header(path)["config"]
                except Exception:
                    entry["kind"] = "unreadable"
                entries.append(entry)
        return entries

    def require_vocab(self) -> Vocab:
        if self.vocab is None:
            raise HTTPException(status_code=409, detail="no vocabulary loaded")
        return self.vocab

    def get(self, name: str | None):
        chosen = name or ("oracle" if not self._checkpoints() else self._checkpoints()[0])
        with self.lock:
            if chosen in self.models:
                return self.models[chosen]
            if chosen == "oracle":
                model = OracleModel(self.require_vocab())
            else:
                if not self.model_dir or not (self.model_dir / f"{chosen}.ckpt").exists():
                    raise HTTPException(status_code=409, detail=f"model {chosen!r} not loaded")
                model, _ = load_checkpoint(self.model_dir / f"{chosen}.ckpt")
            self.models[chosen] = model
            return model

    def _checkpoints(self) -> list[str]:
        if not self.model_dir:
            return []
        return [p.stem for p in sorted(self.model_dir.glob("*.ckpt"))]


def _params_from(overrides: DecodeOverrides | None, seed: int) -> DecodeParams:
    params = DecodeParams(seed=seed)
    if overrides:
        fields = {k: v for k, v in overrides.model_dump().items() if v is not None}
        params = replace(params, **fields)
    return params


def _sequence_items(result: DecodeResult) -> list[dict]:
    items = result.sequence.to_json()
    for item, prov in zip(items, result.provenance):
        item["provenance"] = prov.value
    return items


def create_app(model_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="lyricsmith service")
    registry = ModelRegistry(model_dir)
    sessions: dict[str, SessionLog] = {}
    sessions_lock = threading.Lock()
    embedder = HashedBagEmbedder()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "schema", "detail": exc.errors()})

    @app.exception_handler(PlannerError)
    async def planner_handler(request: Request, exc: PlannerError):
        status = 422 if isinstance(exc, SyllableCapExceededError) else 400
        return JSONResponse(
            status_code=status, content={"error": type(exc).__name__, "message": str(exc)}
        )

    @app.exception_handler(LMError)
    async def lm_handler(request: Request, exc: LMError):
        # Plans too large for the loaded model's context are unprocessable.
        return JSONResponse(
            status_code=422, content={"error": type(exc).__name__, "message": str(exc)}
        )

    @app.exception_handler(Exception)
    async def fallback_handler(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500, content={"error": type(exc).__name__, "message": str(exc)}
        )

    def session_hook(session_id: str | None):
        if not session_id:
            return None, None
        log = SessionLog()
        with sessions_lock:
            sessions[session_id] = log
        return log, log.push

    @app.get("/v1/models")
    def models() -> dict:
        return {"models": registry.names(), "vocab_loaded": registry.vocab is not None}

    @app.post("/v1/syllables")
    def syllables(request: SyllablesRequest) -> dict:
        counts = []
        for word in request.text.split():
            try:
                counts.append([word, count_word(word)])
            except EmptyWordError:
                counts.append([word, 0])
        return {"counts": counts}

    @app.post("/v1/generate")
    def generate(request: GenerateRequest) -> dict:
        vocab = registry.require_vocab()
        model = registry.get(request.model)
        tree = tree_from_plan([s.model_dump() for s in request.plan])
        layout = Layout(request.layout)
        plan_seq = serialize_generation(tree, layout)
        params = _params_from(request.params, request.seed)
        embedding = embedder(request.input_text)
        log, hook = session_hook(request.session_id)
        try:
            result = execute_plan(model, vocab, plan_seq, params, embedding, trace_hook=hook)
        except (GrammarViolationError, BudgetExhaustedError) as error:
            # Model-output failures (possible in the front layout) are module
            # errors, not client errors.
            return JSONResponse(
                status_code=500,
                content={"error": type(error).__name__, "message": str(error)},
            )
        if result.parsed is not None:
            parsed = result.parsed
        else:
            parsed = parse_output(body_of(result.sequence))
        constraints = tree_constraints(tree)
        segments = [
            {
                "granularity": pair.granularity.value,
                "requested": pair.expected,
                "realized": pair.realized,
                "text": pair.text,
            }
            for pair in parsed.pairs
        ]
        return {
            "document": doc_to_json(parsed.document),
            "segments": segments,
            "requested_constraints": [
                {"granularity": g.value, "syllables": s} for g, s in constraints
            ],
            "sequence": _sequence_items(result),
            "truncated_segments": result.truncated_segments,
            "seed": request.seed,
            "layout": request.layout,
        }

    @app.post("/v1/infill")
    def infill(request: InfillRequest) -> dict:
        vocab = registry.require_vocab()
        model = registry.get(request.model)
        doc = doc_from_json(request.document)
        tree = tree_with_masks(doc, [m.model_dump(exclude_none=True) for m in request.masks])
        masked = list(iter_masked(tree))
        context, answer = serialize_infilling(
            tree, same_mask=request.same_mask, no_songform=request.no_songform
        )
        embedding = embedder(doc.text)
        log, hook = session_hook(request.session_id)
        alternatives = []
        for sample_index in range(request.n_samples):
            params = _params_from(request.params, request.seed + sample_index)
            result = execute_infill(
                model, vocab, context, answer, params, embedding,
                trace_hook=hook if sample_index == 0 else None,
            )
            filled = document_from_filled_tree(tree, result.segment_texts, doc.id)
            from .syllables import count_text_or_zero

            segments = [
                {
                    "granularity": node.granularity.value,
                    "requested": node.syllable_target,
                    "realized": count_text_or_zero(text),
                    "text": text,
                }
                for (plan, node), text in zip(masked, result.segment_texts)
            ]
            alternatives.append(
                {
                    "document": doc_to_json(filled),
                    "segments": segments,
                    "sequence": _sequence_items(result),
                    "truncated_segments": result.truncated_segments,
                    "seed": request.seed + sample_index,
                }
            )
        return {"alternatives": alternatives, "document": alternatives[0]["document"]}

    @app.get("/v1/generate/stream")
    def stream(session: str) -> StreamingResponse:
        with sessions_lock:
            log = sessions.get(session)
        if log is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session!r}")

        def lines() -> Iterator[bytes]:
            for event in log.follow():
                yield (json.dumps(event) + "\n").encode("utf-8")

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    app.state.registry = registry
    app.state.sessions = sessions
    return app
