"""Character-level byte-pair tokenizer with a fixed block of special tokens."""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import ChatLog, truncate_chat

PAD, UNK, CLS, SEP, BOS, EOS = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"
MASK_TOKENS = ("<num>", "<url>", "<email>")
MAX_PARTIES = 4
PARTY_TOKENS = tuple(f"<p{i}>" for i in range(MAX_PARTIES))
SPECIALS: tuple[str, ...] = (PAD, UNK, CLS, SEP, BOS, EOS) + MASK_TOKENS + PARTY_TOKENS

_ATOMIC_RE = re.compile("(" + "|".join(re.escape(t) for t in MASK_TOKENS) + ")")
# words keep their leading space so decoding is plain concatenation
_CHUNK_RE = re.compile(r" ?\S+|\s")


def _chunks(text: str) -> list[str]:
    out = []
    for i, piece in enumerate(_ATOMIC_RE.split(text)):
        if i % 2:
            out.append(piece)
        elif piece:
            out.extend(_CHUNK_RE.findall(piece))
    return out


@dataclass
class Vocab:
    id_to_token: list[str]
    merges: list[tuple[str, str]]
    token_to_id: dict[str, int] = field(init=False)
    _cache: dict[str, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        if tuple(self.id_to_token[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}
        self._cache = {}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def sep_id(self) -> int:
        return 3

    @property
    def bos_id(self) -> int:
        return 4

    @property
    def eos_id(self) -> int:
        return 5

    def party_id(self, party: int) -> int:
        return self.token_to_id[PARTY_TOKENS[party % MAX_PARTIES]]

    def is_special(self, token_id: int) -> bool:
        return token_id < len(SPECIALS) and self.id_to_token[token_id] not in MASK_TOKENS

    def digest(self) -> str:
        blob = json.dumps({"tokens": self.id_to_token, "merges": self.merges}).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def _encode_chunk(self, chunk: str) -> tuple[int, ...]:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        if chunk in self.token_to_id:
            ids = (self.token_to_id[chunk],)
        else:
            parts = list(chunk)
            while len(parts) > 1:
                ranked = [(self._ranks.get(p, len(self._ranks)), i) for i, p in enumerate(zip(parts, parts[1:]))]
                best, i = min(ranked)
                if best == len(self._ranks):
                    break
                parts[i : i + 2] = [parts[i] + parts[i + 1]]
            ids = tuple(self.token_to_id.get(p, self.unk_id) for p in parts)
        self._cache[chunk] = ids
        return ids

    def save(self, path: str | Path) -> None:
        blob = {"version": 1, "tokens": self.id_to_token, "merges": [list(m) for m in self.merges]}
        Path(path).write_text(json.dumps(blob, ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(blob["tokens"], [tuple(m) for m in blob["merges"]])


def _pair_counts(words: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for sym, freq in words.items():
        for pair in zip(sym, sym[1:]):
            counts[pair] += freq
    return counts


def _merge_word(sym: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out, i = [], 0
    while i < len(sym):
        if i + 1 < len(sym) and (sym[i], sym[i + 1]) == pair:
            out.append(sym[i] + sym[i + 1])
            i += 2
        else:
            out.append(sym[i])
            i += 1
    return tuple(out)


def build_vocab_from_texts(texts: Iterable[str], target_size: int = 2000, merges: int | None = None) -> Vocab:
    """Learn merges greedily by pair frequency until ``target_size`` or ``merges`` is hit.

    Ties on frequency go to the lexicographically smallest pair.
    """
    word_freq: Counter = Counter()
    for text in texts:
        word_freq.update(c for c in _chunks(text) if c not in MASK_TOKENS)
    alphabet = sorted({ch for w in word_freq for ch in w} - set(SPECIALS))
    base = list(SPECIALS) + alphabet
    if target_size < len(base):
        raise ValueError(f"target_size {target_size} < specials + alphabet ({len(base)})")
    budget = target_size - len(base)
    if merges is not None:
        budget = min(budget, merges)
    words = {tuple(w): f for w, f in word_freq.items()}
    tokens, learned = list(base), []
    known = set(base)
    while len(learned) < budget:
        counts = _pair_counts(words)
        if not counts:
            break
        top = max(counts.values())
        pair = min(p for p, f in counts.items() if f == top)
        learned.append(pair)
        merged = pair[0] + pair[1]
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
        words = {_merge_word(w, pair): f for w, f in words.items()}
    return Vocab(tokens, learned)


def build_vocab(corpus: Sequence[ChatLog], target_size: int = 2000, merges: int | None = None) -> Vocab:
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return build_vocab_from_texts((u.text for c in corpus for u in c.utterances), target_size, merges)


def encode(text: str, vocab: Vocab) -> list[int]:
    ids: list[int] = []
    for chunk in _chunks(text):
        ids.extend(vocab._encode_chunk(chunk))
    return ids


def decode(ids: Iterable[int], vocab: Vocab, *, skip_special: bool = False) -> str:
    out = []
    n = len(vocab)
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise IndexError(f"token id {i} outside vocabulary of size {n}")
        if skip_special and vocab.is_special(i):
            continue
        out.append(vocab.id_to_token[i])
    return "".join(out)


def tokenize_chat(chat: ChatLog, vocab: Vocab, max_tokens: int = 40) -> ChatLog:
    utts = tuple(replace(u, tokens=tuple(encode(u.text, vocab))) for u in chat.utterances)
    return truncate_chat(replace(chat, utterances=utts), max_utts=max(1, len(utts)), max_tokens=max_tokens)


def metric_tokens(text: str, vocab: Vocab) -> list[str]:
    """Subword pieces compared by the evaluation metrics.

    The leading-space marker is stripped so a word scores the same at the start
    of a text as in the middle; bare-whitespace pieces are dropped.
    """
    pieces = (vocab.id_to_token[i].strip() for i in encode(text, vocab))
    return [p for p in pieces if p]
