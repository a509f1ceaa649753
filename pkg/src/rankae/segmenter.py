"""Chat segments and the three-option noise procedure that builds DAE training pairs."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import ChatLog

INSERT, REPLACE, RETAIN = "insert", "replace", "retain"
OPTIONS = (INSERT, REPLACE, RETAIN)


@dataclass(frozen=True)
class NoiseConfig:
    p_insert: float = 0.7
    p_replace: float = 0.2
    p_retain: float = 0.1
    ratio_range: tuple[float, float] = (0.4, 0.6)
    max_span: int = 5

    def __post_init__(self) -> None:
        probs = (self.p_insert, self.p_replace, self.p_retain)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"noise probabilities must be non-negative and sum to 1, got {probs}")
        lo, hi = self.ratio_range
        if not 0 <= lo <= hi:
            raise ValueError("ratio_range must satisfy 0 <= lo <= hi")
        if self.max_span < 1:
            raise ValueError("max_span must be >= 1")

    @property
    def probs(self) -> tuple[float, float, float]:
        return (self.p_insert, self.p_replace, self.p_retain)

    @classmethod
    def centered(cls, percent: float, width: float = 0.1, **kw) -> "NoiseConfig":
        """Insertion ratio range centred on ``percent``% extension (0 disables growth)."""
        mid = percent / 100.0
        if mid == 0:
            return cls(ratio_range=(0.0, 0.0), **kw)
        return cls(ratio_range=(max(0.0, mid - width), mid + width), **kw)


@dataclass(frozen=True)
class ChatSegment:
    chat_id: str
    center: int
    members: tuple[int, ...]
    tokens: tuple[tuple[int, ...], ...]
    parties: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.members)

    def serialize(self, sep_id: int, eos_id: int, party_token) -> list[int]:
        """Flatten to ``<p> tokens [SEP]`` per member, terminated by ``[EOS]``."""
        out: list[int] = []
        for party, toks in zip(self.parties, self.tokens):
            out.append(party_token(party))
            out.extend(toks)
            out.append(sep_id)
        out.append(eos_id)
        return out


@dataclass(frozen=True)
class SegmentPair:
    noisy: ChatSegment
    target: ChatSegment
    noise_log: tuple[str, ...]
    # per noisy member: which positions of its token list were inserted noise
    inserted: tuple[tuple[int, ...], ...] = field(default=(), repr=False)
    # per noisy member: chat index of the clean utterance it was built from
    sources: tuple[int, ...] = field(default=(), repr=False)

    @property
    def degenerate(self) -> bool:
        return len(self.target) == 0


def build_segment(chat: ChatLog, i: int, c: int = 1) -> ChatSegment:
    """Window of utterances ``max(0, i-c) .. min(n-1, i+c)`` around 0-based index ``i``."""
    n = len(chat)
    if not 0 <= i < n:
        raise IndexError(f"center {i} outside chat of {n} utterances")
    if c < 0:
        raise ValueError("window c must be >= 0")
    members = tuple(range(max(0, i - c), min(n, i + c + 1)))
    toks = chat.token_lists
    return ChatSegment(
        chat_id=chat.id,
        center=i,
        members=members,
        tokens=tuple(tuple(toks[j]) for j in members),
        parties=tuple(chat.utterances[j].party for j in members),
    )


def _insert_fragments(
    tokens: list[int], donors: Sequence[Sequence[int]], lo: float, hi: float, max_span: int, rng: np.random.Generator
) -> tuple[list[int], list[bool]]:
    """Grow ``tokens`` by round(r * len) inserted donor spans, r ~ U[lo, hi]."""
    old = len(tokens)
    extra = int(round(rng.uniform(lo, hi) * old))
    out = list(tokens)
    mask = [False] * old
    donors = [d for d in donors if len(d) > 0]
    if extra == 0 or not donors:
        return out, mask
    pool: list[int] = []
    added = 0
    while added < extra:
        if not pool:
            pool = list(rng.permutation(len(donors)))
        donor = donors[pool.pop()]
        span = int(rng.integers(1, max_span + 1))
        span = min(span, len(donor), extra - added)
        start = int(rng.integers(0, len(donor) - span + 1))
        at = int(rng.integers(0, len(out) + 1))
        out[at:at] = donor[start : start + span]
        mask[at:at] = [True] * span
        added += span
    return out, mask


def add_noise(
    seg: ChatSegment, chat: ChatLog, cfg: NoiseConfig = NoiseConfig(), rng: np.random.Generator | None = None
) -> SegmentPair:
    """Corrupt each member independently by insertion, replacement or retention.

    Replaced members are dropped from the target; inserted fragments never
    reach the target.  Donors are other utterances of the same chat.
    """
    rng = rng if rng is not None else np.random.default_rng()
    toks = chat.token_lists
    n = len(chat)
    probs = cfg.probs
    if n < 2:
        warnings.warn(f"chat {chat.id!r} has a single utterance; only retention is possible", stacklevel=2)
        probs = (0.0, 0.0, 1.0)
    noisy_t, noisy_p, log, inserted, sources = [], [], [], [], []
    tgt_m, tgt_t, tgt_p = [], [], []
    for j, party, orig in zip(seg.members, seg.parties, seg.tokens):
        opt = OPTIONS[int(rng.choice(3, p=probs))]
        others = [x for x in range(n) if x != j]
        assert all(0 <= x < n for x in others)  # donors come from this chat only
        if opt == INSERT:
            new, mask = _insert_fragments(
                list(orig), [toks[x] for x in others], *cfg.ratio_range, cfg.max_span, rng
            )
            noisy_t.append(tuple(new))
            noisy_p.append(party)
            inserted.append(tuple(i for i, m in enumerate(mask) if m))
            sources.append(j)
        elif opt == REPLACE:
            donor = others[int(rng.integers(len(others)))]
            noisy_t.append(tuple(toks[donor]))
            noisy_p.append(chat.utterances[donor].party)
            inserted.append(tuple(range(len(toks[donor]))))
            sources.append(donor)
        else:
            noisy_t.append(tuple(orig))
            noisy_p.append(party)
            inserted.append(())
            sources.append(j)
        if opt != REPLACE:
            tgt_m.append(j)
            tgt_t.append(tuple(orig))
            tgt_p.append(party)
        log.append(opt)
    noisy = ChatSegment(seg.chat_id, seg.center, seg.members, tuple(noisy_t), tuple(noisy_p))
    target = ChatSegment(seg.chat_id, seg.center, tuple(tgt_m), tuple(tgt_t), tuple(tgt_p))
    return SegmentPair(noisy, target, tuple(log), tuple(inserted), tuple(sources))


def chat_pairs(
    chat: ChatLog, c: int, cfg: NoiseConfig, rng: np.random.Generator, keep_degenerate: bool = False
) -> list[SegmentPair]:
    """One noisy pair per utterance of ``chat``; all-replaced pairs dropped unless asked."""
    pairs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i in range(len(chat)):
            pair = add_noise(build_segment(chat, i, c), chat, cfg, rng)
            if keep_degenerate or not pair.degenerate:
                pairs.append(pair)
    return pairs


def pair_record(pair: SegmentPair) -> dict:
    """JSON-serializable view of a pair for the pair-dataset file."""
    return {
        "chat_id": pair.noisy.chat_id,
        "center": pair.noisy.center,
        "members": list(pair.noisy.members),
        "noisy": [list(t) for t in pair.noisy.tokens],
        "noisy_parties": list(pair.noisy.parties),
        "target_members": list(pair.target.members),
        "target": [list(t) for t in pair.target.tokens],
        "target_parties": list(pair.target.parties),
        "noise_log": list(pair.noise_log),
    }
