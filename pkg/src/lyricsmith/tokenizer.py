"""Byte-level BPE vocabulary with the control-token set as atomic specials.

Training is greedy pair merging over byte sequences, chunked at whitespace
boundaries (a leading whitespace run sticks to the following word) so merges
never cross words. Ties between equally frequent pairs break by lexicographic
pair order, making training deterministic. Special tokens are appended after
the learned merges and can never be produced by encoding plain text.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from .planner import ControlToken, all_control_tokens

_CHUNK_RE = re.compile(r"\s*\S+|\s+")

VOCAB_FORMAT_VERSION = 1


class TokenizerError(ValueError):
    pass


class SizeTooSmallError(TokenizerError):
    pass


class UnknownIdError(TokenizerError):
    pass


@dataclass
class Vocab:
    merges: list[tuple[int, int]]
    specials: dict[str, int]
    requested_size: int
    merge_ranks: dict[tuple[int, int], int] = field(init=False, repr=False)
    id_bytes: dict[int, bytes] = field(init=False, repr=False)
    special_surfaces: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.merge_ranks = {pair: i for i, pair in enumerate(self.merges)}
        self.id_bytes = {i: bytes([i]) for i in range(256)}
        for i, (a, b) in enumerate(self.merges):
            self.id_bytes[256 + i] = self.id_bytes[a] + self.id_bytes[b]
        self.special_surfaces = {i: s for s, i in self.specials.items()}

    @property
    def size(self) -> int:
        return 256 + len(self.merges) + len(self.specials)

    def special_id(self, token: ControlToken) -> int:
        return self.specials[token.surface]

    def is_special(self, token_id: int) -> bool:
        return token_id in self.special_surfaces

    def surface(self, token_id: int) -> str:
        if token_id in self.special_surfaces:
            return self.special_surfaces[token_id]
        if token_id in self.id_bytes:
            return self.id_bytes[token_id].decode("utf-8", errors="replace")
        raise UnknownIdError(f"id {token_id} not in vocabulary")

    def content_hash(self) -> str:
        payload = json.dumps(
            {"merges": self.merges, "specials": self.specials},
            sort_keys=True,
        ).encode()
        return hashlib.sha256(payload).hexdigest()


def _chunks(text: str) -> list[str]:
    return _CHUNK_RE.findall(text)


def train_vocab(corpus: Iterable[str], size: int) -> Vocab:
    """Greedy BPE training to (at most) `size` total entries.

    `size` counts the 256 byte ids, learned merges, and special tokens.
    Training stops early if no byte pair occurs at least twice.
    """
    specials = all_control_tokens()
    min_size = 256 + len(specials)
    if size < min_size:
        raise SizeTooSmallError(f"size {size} below minimum {min_size}")
    merge_budget = size - min_size

    # Unique chunk types with frequencies keep training cost independent of
    # corpus repetition.
    chunk_freq: dict[bytes, int] = {}
    for text in corpus:
        for chunk in _chunks(text):
            key = chunk.encode("utf-8")
            chunk_freq[key] = chunk_freq.get(key, 0) + 1
    seqs = [list(key) for key in chunk_freq]
    freqs = list(chunk_freq.values())

    pair_counts: dict[tuple[int, int], int] = {}
    pair_chunks: dict[tuple[int, int], set[int]] = {}
    for ci, seq in enumerate(seqs):
        f = freqs[ci]
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] = pair_counts.get(pair, 0) + f
            pair_chunks.setdefault(pair, set()).add(ci)

    merges: list[tuple[int, int]] = []
    for _ in range(merge_budget):
        best: tuple[int, int] | None = None
        best_count = 1
        for pair, count in pair_counts.items():
            if count > best_count or (count == best_count and best is not None and pair < best):
                best, best_count = pair, count
        if best is None:
            break
        new_id = 256 + len(merges)
        merges.append(best)
        for ci in list(pair_chunks.get(best, ())):
            seq = seqs[ci]
            f = freqs[ci]
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] -= f
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                chunk_set = pair_chunks.get(pair)
                if chunk_set is not None:
                    chunk_set.discard(ci)
                    if not chunk_set:
                        del pair_chunks[pair]
            merged = _apply_merge(seq, best, new_id)
            seqs[ci] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] = pair_counts.get(pair, 0) + f
                pair_chunks.setdefault(pair, set()).add(ci)

    special_map = {
        tok.surface: 256 + len(merges) + i for i, tok in enumerate(specials)
    }
    return Vocab(merges=merges, specials=special_map, requested_size=size)


def _apply_merge(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _encode_chunk(vocab: Vocab, data: bytes) -> list[int]:
    ids = list(data)
    ranks = vocab.merge_ranks
    while len(ids) >= 2:
        best_rank = None
        best_pair = None
        for pair in zip(ids, ids[1:]):
            rank = ranks.get(pair)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank, best_pair = rank, pair
        if best_pair is None:
            break
        ids = _apply_merge(ids, best_pair, 256 + best_rank)
    return ids


def encode_text(vocab: Vocab, text: str) -> list[int]:
    ids: list[int] = []
    for chunk in _chunks(text):
        ids.extend(_encode_chunk(vocab, chunk.encode("utf-8")))
    return ids


def encode(vocab: Vocab, items: Iterable[Union[ControlToken, str]]) -> list[int]:
    """Encode a mixed token/text stream; control tokens map to atomic ids."""
    ids: list[int] = []
    for item in items:
        if isinstance(item, ControlToken):
            ids.append(vocab.special_id(item))
        else:
            ids.extend(encode_text(vocab, item))
    return ids


def decode(vocab: Vocab, ids: Iterable[int]) -> list[Union[ControlToken, str]]:
    """Inverse of encode: specials become ControlTokens, bytes become text."""
    items: list[Union[ControlToken, str]] = []
    pending = bytearray()

    def flush() -> None:
        nonlocal pending
        if pending:
            items.append(bytes(pending).decode("utf-8", errors="replace"))
            pending = bytearray()

    for token_id in ids:
        if token_id in vocab.special_surfaces:
            flush()
            items.append(ControlToken(vocab.special_surfaces[token_id]))
        elif token_id in vocab.id_bytes:
            pending.extend(vocab.id_bytes[token_id])
        else:
            raise UnknownIdError(f"id {token_id} not in vocabulary")
    flush()
    return items


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    payload = {
        "version": VOCAB_FORMAT_VERSION,
        "requested_size": vocab.requested_size,
        "merges": vocab.merges,
        "specials": vocab.specials,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != VOCAB_FORMAT_VERSION:
        raise TokenizerError(f"unsupported vocab version: {payload.get('version')}")
    return Vocab(
        merges=[tuple(p) for p in payload["merges"]],
        specials=payload["specials"],
        requested_size=payload["requested_size"],
    )
