"""Small decoder-only transformer trained from scratch, with a semantic
conditioning slot at position zero.

The first input position carries a learned projection of a text embedding
instead of a token embedding (a reserved placeholder id sits there in the id
sequence). Loss is next-token cross-entropy over positions whose *target*
token is flagged as predicted; condition positions contribute nothing.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .planner import Granularity, Role, SymbolicSequence
from .tokenizer import Vocab, encode_text


class LMError(RuntimeError):
    pass


class ContextOverflowError(LMError):
    pass


class DivergenceDetectedError(LMError):
    pass


class EmptyEvalError(LMError):
    pass


# -- Semantic embeddings ------------------------------------------------------


@dataclass(frozen=True)
class SemanticEmbedding:
    vector: np.ndarray
    source_text_hash: str


class HashedBagEmbedder:
    """Default embedder: signed hashed bag of words, L2-normalized.

    Order-invariant by construction; empty text maps to the zero vector,
    which is left unnormalized.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for word in text.lower().split():
            digest = hashlib.md5(word.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return vec.astype(np.float32)


class FileEmbedder:
    """Reads precomputed vectors keyed by sha256 of the exact text."""

    def __init__(self, path: str | Path):
        self.table = json.loads(Path(path).read_text(encoding="utf-8"))

    def __call__(self, text: str) -> np.ndarray:
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        if key not in self.table:
            raise KeyError(f"no precomputed embedding for text hash {key}")
        return np.asarray(self.table[key], dtype=np.float32)


def embed_text(text: str, embedder: Callable[[str], np.ndarray] | None = None) -> SemanticEmbedding:
    if embedder is None:
        embedder = HashedBagEmbedder()
    vector = np.asarray(embedder(text), dtype=np.float32)
    return SemanticEmbedding(vector, hashlib.sha256(text.encode("utf-8")).hexdigest())


# -- Model --------------------------------------------------------------------


@dataclass
class LMConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 256
    ff_dim: int = 1024
    context_len: int = 1024
    vocab_size: int = 8192
    embed_dim: int = 256
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")


class _Attention(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.model_dim // cfg.heads
        self.qkv = nn.Linear(cfg.model_dim, 3 * cfg.model_dim)
        self.proj = nn.Linear(cfg.model_dim, cfg.model_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        past: tuple[torch.Tensor, torch.Tensor] | None = None,
        return_attn: bool = False,
    ):
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=2)

        def heads(m: torch.Tensor) -> torch.Tensor:
            return m.view(b, -1, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(q), heads(k), heads(v)
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        present = (k, v)
        total = k.shape[2]
        offset = total - t
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # Causal: query at absolute position offset+i sees keys <= offset+i.
        qpos = torch.arange(t, device=x.device).unsqueeze(1) + offset
        kpos = torch.arange(total, device=x.device).unsqueeze(0)
        scores = scores.masked_fill(kpos > qpos, float("-inf"))
        attn = F.softmax(scores, dim=-1)
        out = attn @ v
        out = out.transpose(1, 2).contiguous().view(b, t, d)
        out = self.dropout(self.proj(out))
        if return_attn:
            return out, present, attn
        return out, present, None


class _Block(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.attn = _Attention(cfg)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.model_dim, cfg.ff_dim),
            nn.GELU(),
            nn.Linear(cfg.ff_dim, cfg.model_dim),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x, past=None, return_attn=False):
        a, present, attn = self.attn(self.ln1(x), past, return_attn)
        x = x + a
        x = x + self.mlp(self.ln2(x))
        return x, present, attn


class LanguageModel(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.model_dim)
        self.pos_emb = nn.Embedding(cfg.context_len, cfg.model_dim)
        self.sem_proj = nn.Linear(cfg.embed_dim, cfg.model_dim)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.model_dim)
        self.head = nn.Linear(cfg.model_dim, cfg.vocab_size, bias=False)

    def forward(
        self,
        ids: torch.Tensor,
        embedding: torch.Tensor | None = None,
        past: list | None = None,
        return_attn: bool = False,
    ):
        """Return logits (B, T, vocab); optionally attention maps and KV cache.

        With `embedding` (B, E), position 0 consumes the projected embedding
        in place of its token embedding. `past` enables incremental decoding;
        new ids are treated as a suffix starting at the cached length.
        """
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        b, t = ids.shape
        offset = past[0][0].shape[2] if past else 0
        if offset + t > self.cfg.context_len:
            raise ContextOverflowError(
                f"sequence length {offset + t} exceeds context {self.cfg.context_len}"
            )
        pos = torch.arange(offset, offset + t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)
        if embedding is not None and offset == 0:
            if embedding.dim() == 1:
                embedding = embedding.unsqueeze(0)
            sem = self.sem_proj(embedding.to(x.dtype))
            x = torch.cat([(sem + self.pos_emb(pos[:1])).unsqueeze(1), x[:, 1:]], dim=1)
        presents = []
        attns = []
        for i, block in enumerate(self.blocks):
            x, present, attn = block(x, past[i] if past else None, return_attn)
            presents.append(present)
            if return_attn:
                attns.append(attn)
        logits = self.head(self.ln_f(x))
        if return_attn:
            return logits, presents, attns
        return logits, presents

    @torch.no_grad()
    def start_session(self, embedding: np.ndarray | None = None) -> "ModelSession":
        return ModelSession(self, embedding)


class ModelSession:
    """Incremental decoding over a frozen model with a KV cache."""

    def __init__(self, model: LanguageModel, embedding: np.ndarray | None):
        self.model = model
        self.embedding = (
            torch.from_numpy(np.asarray(embedding, dtype=np.float32))
            if embedding is not None
            else None
        )
        self.past: list | None = None
        self.length = 0
        self._last_logits: np.ndarray | None = None

    def feed(self, ids: Sequence[int]) -> None:
        if not ids:
            return
        with torch.no_grad():
            tensor = torch.tensor(list(ids), dtype=torch.long)
            emb = self.embedding if self.length == 0 else None
            logits, self.past = self.model(tensor, embedding=emb, past=self.past)
        self.length += len(ids)
        self._last_logits = logits[0, -1].double().numpy()

    def next_logits(self) -> np.ndarray:
        if self._last_logits is None:
            raise LMError("session has no context yet")
        return self._last_logits


# -- Encoded examples ---------------------------------------------------------

_GRAN_CODE = {
    None: 0,
    Granularity.PARAGRAPH: 1,
    Granularity.LINE: 2,
    Granularity.PHRASE: 3,
    Granularity.WORD: 4,
}
GRAN_BY_CODE = {v: k for k, v in _GRAN_CODE.items()}


@dataclass
class EncodedExample:
    ids: list[int]
    predict: list[bool]       # role of each position
    special: list[bool]       # token at position is a control token
    gran: list[int]           # granularity code of the enclosing segment
    embedding: np.ndarray | None = None


def encode_example(
    vocab: Vocab,
    seq: SymbolicSequence,
    embedding: np.ndarray | None = None,
    with_slot: bool = True,
) -> EncodedExample:
    """Encode a symbolic sequence, tracking roles, specialness, and segment
    granularity per id position. With a semantic slot, a PAD placeholder id
    occupies position 0."""
    from .planner import (
        END_L, END_NW, END_P, GEN_L, GEN_N, GEN_P, GEN_W, INF_L, INF_N,
        INF_P, INF_W, PAD,
    )

    opens = {
        GEN_P.surface: Granularity.PARAGRAPH,
        GEN_L.surface: Granularity.LINE,
        GEN_N.surface: Granularity.PHRASE,
        GEN_W.surface: Granularity.WORD,
        INF_P.surface: Granularity.PARAGRAPH,
        INF_L.surface: Granularity.LINE,
        INF_N.surface: Granularity.PHRASE,
        INF_W.surface: Granularity.WORD,
    }
    closes = {END_P.surface, END_L.surface, END_NW.surface}

    ids: list[int] = []
    predict: list[bool] = []
    special: list[bool] = []
    gran: list[int] = []
    if with_slot:
        ids.append(vocab.special_id(PAD))
        predict.append(False)
        special.append(True)
        gran.append(0)

    current: Granularity | None = None
    for item in seq.items:
        flag = item.role == Role.PREDICT
        if item.is_token:
            token_id = vocab.special_id(item.value)
            code = _GRAN_CODE[current]
            if item.value.surface in closes:
                current = None
            ids.append(token_id)
            predict.append(flag)
            special.append(True)
            gran.append(code)
            if item.value.surface in opens:
                current = opens[item.value.surface]
        else:
            for token_id in encode_text(vocab, item.value):
                ids.append(token_id)
                predict.append(flag)
                special.append(False)
                gran.append(_GRAN_CODE[current])
    return EncodedExample(ids, predict, special, gran, embedding)


# -- Training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch: int = 8
    lr: float = 5e-5
    warmup_steps: int = 500
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0


def _batches(
    examples: Sequence[EncodedExample], batch_size: int, rng: random.Random
) -> list[list[EncodedExample]]:
    by_len = sorted(range(len(examples)), key=lambda i: (len(examples[i].ids), i))
    groups = [
        [examples[i] for i in by_len[s : s + batch_size]]
        for s in range(0, len(by_len), batch_size)
    ]
    rng.shuffle(groups)
    return groups


def _collate(
    batch: Sequence[EncodedExample], pad_id: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    width = max(len(ex.ids) for ex in batch)
    ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(batch), width), dtype=torch.bool)
    for row, ex in enumerate(batch):
        ids[row, : len(ex.ids)] = torch.tensor(ex.ids, dtype=torch.long)
        mask[row, : len(ex.ids)] = torch.tensor(ex.predict, dtype=torch.bool)
    embeddings = None
    if batch[0].embedding is not None:
        embeddings = torch.from_numpy(
            np.stack([np.asarray(ex.embedding, dtype=np.float32) for ex in batch])
        )
    return ids, mask, embeddings


def _masked_loss(
    model: LanguageModel,
    ids: torch.Tensor,
    predict_mask: torch.Tensor,
    embeddings: torch.Tensor | None,
) -> tuple[torch.Tensor, int]:
    logits, _ = model(ids, embedding=embeddings)
    targets = ids[:, 1:]
    mask = predict_mask[:, 1:]
    count = int(mask.sum().item())
    if count == 0:
        return torch.zeros((), dtype=logits.dtype), 0
    losses = F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        reduction="none",
    )
    losses = losses.view(targets.shape)
    loss = (losses * mask).sum() / count
    return loss, count


def _truncated(example: EncodedExample, limit: int) -> EncodedExample:
    if len(example.ids) <= limit:
        return example
    return EncodedExample(
        example.ids[:limit],
        example.predict[:limit],
        example.special[:limit],
        example.gran[:limit],
        example.embedding,
    )


def train(
    model: LanguageModel,
    examples: Sequence[EncodedExample],
    tc: TrainConfig,
    pad_id: int,
    progress: Callable[[int, int, float], None] | None = None,
) -> tuple[LanguageModel, list[float]]:
    """Train with AdamW, linear warmup then constant lr; returns loss curve.

    Loss is averaged over predicted target positions only. Examples longer
    than the model's context are truncated. Raises DivergenceDetectedError
    if the loss goes non-finite.
    """
    if not examples:
        raise LMError("empty training dataset")
    examples = [_truncated(ex, model.cfg.context_len) for ex in examples]
    torch.manual_seed(tc.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay
    )
    step = 0
    curve: list[float] = []
    for epoch in range(tc.epochs):
        rng = random.Random(tc.seed * 1_000_003 + epoch)
        total_loss = 0.0
        total_count = 0
        for batch in _batches(examples, tc.batch, rng):
            ids, mask, embeddings = _collate(batch, pad_id)
            loss, count = _masked_loss(model, ids, mask, embeddings)
            if count == 0:
                continue
            if not torch.isfinite(loss):
                raise DivergenceDetectedError(f"non-finite loss at step {step}")
            step += 1
            warm = min(1.0, step / max(tc.warmup_steps, 1))
            for group in optimizer.param_groups:
                group["lr"] = tc.lr * warm
            optimizer.zero_grad()
            loss.backward()
            if tc.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            optimizer.step()
            total_loss += float(loss.item()) * count
            total_count += count
        epoch_loss = total_loss / max(total_count, 1)
        curve.append(epoch_loss)
        if progress:
            progress(epoch, tc.epochs, epoch_loss)
    return model, curve


# -- Perplexity ---------------------------------------------------------------


def example_perplexities(
    model,
    examples: Sequence[EncodedExample],
    granularity: Granularity | None = None,
) -> list[float]:
    """Per-example PPL over text-token targets (specials excluded).

    Only positions whose target is a predicted, non-special token count;
    with `granularity`, targets are further filtered to segments of that
    level. Examples with no qualifying position are skipped.
    """
    ppls: list[float] = []
    want = _GRAN_CODE[granularity] if granularity else None
    cfg = getattr(model, "cfg", None)
    if cfg is not None:
        examples = [_truncated(ex, cfg.context_len) for ex in examples]
    with torch.no_grad():
        for ex in examples:
            keep = [
                t
                for t in range(1, len(ex.ids))
                if ex.predict[t]
                and not ex.special[t]
                and (want is None or ex.gran[t] == want)
            ]
            if not keep:
                continue
            ids = torch.tensor(ex.ids, dtype=torch.long).unsqueeze(0)
            emb = (
                torch.from_numpy(np.asarray(ex.embedding, dtype=np.float32)).unsqueeze(0)
                if ex.embedding is not None
                else None
            )
            logits = model(ids, embedding=emb)
            if isinstance(logits, tuple):
                logits = logits[0]
            logp = F.log_softmax(logits[0].double(), dim=-1)
            total = 0.0
            for t in keep:
                total += -float(logp[t - 1, ex.ids[t]].item())
            ppls.append(math.exp(total / len(keep)))
    return ppls


def trimmed_mean_ppl(ppls: Sequence[float], trim_fraction: float = 0.01) -> float:
    """Mean after discarding the top `trim_fraction` of values."""
    if not ppls:
        raise EmptyEvalError("no examples with text tokens to evaluate")
    ordered = sorted(ppls)
    drop = int(len(ordered) * trim_fraction)
    kept = ordered[: len(ordered) - drop] if drop else ordered
    return sum(kept) / len(kept)


def perplexity_eval(
    model,
    examples: Sequence[EncodedExample],
    granularity: Granularity | None = None,
) -> float:
    return trimmed_mean_ppl(example_perplexities(model, examples, granularity))


# -- Checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"LYCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    model: LanguageModel, path: str | Path, vocab_hash: str = ""
) -> None:
    """Container: magic, u32 version, u64 header length, JSON header, then
    float32 little-endian tensor data in header order."""
    tensors = {}
    blobs = []
    offset = 0
    state = model.state_dict()
    for name in sorted(state):
        array = state[name].detach().cpu().to(torch.float32).numpy()
        data = array.astype("<f4").tobytes()
        tensors[name] = {"shape": list(array.shape), "offset": offset, "size": len(data)}
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"config": asdict(model.cfg), "vocab_hash": vocab_hash, "tensors": tensors}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint_header(path: str | Path) -> dict:
    """Config and vocab hash without loading tensor data."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise LMError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise LMError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
    return {"config": header["config"], "vocab_hash": header.get("vocab_hash", "")}


def load_checkpoint(path: str | Path) -> tuple[LanguageModel, str]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise LMError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise LMError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        data = fh.read()
    cfg = LMConfig(**header["config"])
    model = LanguageModel(cfg)
    state = {}
    for name, meta in header["tensors"].items():
        raw = data[meta["offset"] : meta["offset"] + meta["size"]]
        array = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"]).copy()
        state[name] = torch.from_numpy(array)
    model.load_state_dict(state)
    model.eval()
    return model, header.get("vocab_hash", "")
