"""Denoising segment auto-encoder: query encoder, utterance-memory decoder, training and beam search."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import ChatLog
from .encoder import Block, EncoderConfig, UtteranceEncoder, cup_loss
from .ranker import RankConfig, relevance_matrix, rank
from .segmenter import INSERT, ChatSegment, NoiseConfig, SegmentPair, build_segment, chat_pairs
from .tokenizer import Vocab, decode

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rankae-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CompressorConfig:
    query_layers: int = 2
    decoder_layers: int = 2
    max_target_len: int = 128
    max_chat_utterances: int = 40
    max_window: int = 3
    query_positions: bool = True
    share_embeddings: bool = True


@dataclass(frozen=True)
class SpecialIds:
    sep: int
    eos: int
    pad: int
    party: tuple[int, ...]

    @classmethod
    def from_vocab(cls, vocab: Vocab) -> "SpecialIds":
        return cls(vocab.sep_id, vocab.eos_id, vocab.pad_id, tuple(vocab.party_id(p) for p in range(4)))


class RankAE(nn.Module):
    """Shared utterance encoder + query encoder + decoder over utterance-level memories."""

    def __init__(self, enc_cfg: EncoderConfig, cfg: CompressorConfig, specials: SpecialIds, cls_id: int = 2):
        super().__init__()
        self.enc_cfg, self.cfg, self.specials = enc_cfg, cfg, specials
        d = enc_cfg.d_model
        self.encoder = UtteranceEncoder(enc_cfg, cls_id=cls_id, party_token_ids=specials.party)
        self.utt_pos = nn.Embedding(cfg.max_chat_utterances, d)
        self.query_blocks = nn.ModuleList(
            Block(d, enc_cfg.n_heads, enc_cfg.d_ff, enc_cfg.dropout) for _ in range(cfg.query_layers)
        )
        self.query_norm = nn.LayerNorm(d) if cfg.query_layers else nn.Identity()
        # offset of each member inside the window, so the decoder knows member order
        self.slot_emb = nn.Embedding(2 * cfg.max_window + 1, d)
        self.dec_emb = self.encoder.tok_emb if cfg.share_embeddings else nn.Embedding(enc_cfg.vocab_size, d)
        self.dec_pos = nn.Embedding(cfg.max_target_len + 1, d)
        self.dec_blocks = nn.ModuleList(
            Block(d, enc_cfg.n_heads, enc_cfg.d_ff, enc_cfg.dropout, cross=True) for _ in range(cfg.decoder_layers)
        )
        self.dec_norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, enc_cfg.vocab_size)
        for emb in (self.utt_pos, self.slot_emb, self.dec_pos):
            nn.init.normal_(emb.weight, std=0.02)
        if not cfg.share_embeddings:
            nn.init.normal_(self.dec_emb.weight, std=0.02)

    @property
    def W(self) -> nn.Parameter:
        return self.encoder.W

    # -- queries -----------------------------------------------------------
    def encode_queries(self, H: torch.Tensor) -> torch.Tensor:
        """Contextualize each utterance vector against its whole chat; (n, d) -> (n, d)."""
        if not self.query_blocks:
            return H
        x = H
        if self.cfg.query_positions:
            x = x + self.utt_pos(torch.arange(H.shape[0]) % self.cfg.max_chat_utterances)
        x = x[None]
        for blk in self.query_blocks:
            x = blk(x)
        return self.query_norm(x[0])

    # -- decoder -----------------------------------------------------------
    def slot_index(self, member: int, center: int) -> int:
        off = member - center
        if abs(off) > self.cfg.max_window:
            raise ValueError(f"member offset {off} exceeds max_window {self.cfg.max_window}")
        return off + self.cfg.max_window

    def memory(self, vectors: torch.Tensor, members: Sequence[int], center: int) -> torch.Tensor:
        slots = torch.tensor([self.slot_index(j, center) for j in members], dtype=torch.long)
        return vectors + self.slot_emb(slots)

    def decode_logits(self, q, mem, mem_pad, prefix) -> torch.Tensor:
        """Logits for every step given start vectors ``q`` (B, d) and ``prefix`` ids (B, T).

        Output has T + 1 steps: step 0 conditions on ``q`` only.
        """
        B, T = prefix.shape
        x = torch.cat([q[:, None, :], self.dec_emb(prefix)], dim=1)
        x = x + self.dec_pos(torch.arange(T + 1))[None]
        for blk in self.dec_blocks:
            x = blk(x, causal=True, mem=mem, mem_pad=mem_pad)
        return self.out(self.dec_norm(x))

    def serialize(self, seg: ChatSegment) -> list[int]:
        s = self.specials
        return seg.serialize(s.sep, s.eos, lambda p: s.party[p % len(s.party)])

    # -- persistence -------------------------------------------------------
    def save(self, path: str | Path, vocab: Vocab, extra: dict | None = None) -> None:
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "version": CHECKPOINT_VERSION,
                "encoder_cfg": asdict(self.enc_cfg),
                "compressor_cfg": asdict(self.cfg),
                "specials": asdict(self.specials),
                "vocab_digest": vocab.digest(),
                "extra": extra or {},
                "state_dict": self.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path, vocab: Vocab) -> "RankAE":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
        if blob["vocab_digest"] != vocab.digest():
            raise ValueError("checkpoint was trained with a different vocabulary")
        sp = blob["specials"]
        specials = SpecialIds(sp["sep"], sp["eos"], sp["pad"], tuple(sp["party"]))
        model = cls(EncoderConfig(**blob["encoder_cfg"]), CompressorConfig(**blob["compressor_cfg"]), specials, vocab.cls_id)
        model.load_state_dict(blob["state_dict"])
        return model


def build_model(vocab: Vocab, seed: int = 0, enc: dict | None = None, comp: dict | None = None) -> RankAE:
    torch.manual_seed(seed)
    enc_cfg = EncoderConfig(vocab_size=len(vocab), **(enc or {}))
    return RankAE(enc_cfg, CompressorConfig(**(comp or {})), SpecialIds.from_vocab(vocab), vocab.cls_id)


# ---------------------------------------------------------------------------
# reconstruction


def _pad_rows(seqs: Sequence[Sequence[int]], value: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad integer rows; returns (values, pad_mask) with True at padding."""
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), value, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    lens = np.array([len(s) for s in seqs])
    return torch.from_numpy(out), torch.from_numpy(np.arange(T)[None, :] >= lens[:, None])


def _pad(seqs: Sequence[Sequence[int]], value: int) -> torch.Tensor:
    return _pad_rows(seqs, value)[0]


def _stack_memories(mems: Sequence[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    S = max(m.shape[0] for m in mems)
    d = mems[0].shape[1]
    out = mems[0].new_zeros(len(mems), S, d)
    pad = torch.ones(len(mems), S, dtype=torch.bool)
    for i, m in enumerate(mems):
        out[i, : m.shape[0]] = m
        pad[i, : m.shape[0]] = False
    return out, pad


def target_ids(model: RankAE, pair: SegmentPair) -> list[int]:
    ids = model.serialize(pair.target)
    limit = model.cfg.max_target_len
    if len(ids) > limit:
        warnings.warn(f"target of {len(ids)} tokens truncated to {limit}", stacklevel=2)
        ids = ids[: limit - 1] + [model.specials.eos]
    return ids


def batch_reconstruction_loss(
    model: RankAE,
    queries: torch.Tensor,
    memories: Sequence[torch.Tensor],
    targets: Sequence[Sequence[int]],
    reduction: str = "mean",
) -> torch.Tensor:
    """Teacher-forced cross-entropy of each target given its query vector and memory."""
    for m, t in zip(memories, targets):
        if m.shape[0] < 1 or len(t) < 1:
            raise ValueError("empty memory or target")
    mem, mem_pad = _stack_memories(memories)
    return _rec_loss(model, queries, mem, mem_pad, targets, reduction)


def _rec_loss(model, queries, mem, mem_pad, targets, reduction="mean") -> torch.Tensor:
    tgt = _pad(targets, -100)
    prefix = tgt[:, :-1].clamp(min=0)
    logits = model.decode_logits(queries, mem, mem_pad, prefix)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt.reshape(-1), ignore_index=-100, reduction=reduction)


def reconstruction_loss(pair: SegmentPair, q: torch.Tensor, model: RankAE, reduction: str = "mean") -> torch.Tensor:
    """Loss of regenerating ``pair.target`` from the encoded noisy members and query ``q``."""
    if pair.degenerate:
        raise ValueError("degenerate pair has an empty target")
    noisy = pair.noisy
    vecs = model.encoder.encode(noisy.tokens, noisy.parties)
    mem = model.memory(vecs, noisy.members, noisy.center)
    assert mem.shape[0] == len(noisy.members)
    return batch_reconstruction_loss(model, q[None], [mem], [target_ids(model, pair)], reduction)


# ---------------------------------------------------------------------------
# joint training


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_chats: int = 4
    lr: float = 1e-3
    alpha: float = 0.5
    c: int = 1
    negatives: int = 2
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    eval_every: int = 0
    grad_clip: float = 1.0
    warmup: int = 100

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.steps < 0 or self.batch_chats < 1:
            raise ValueError("steps must be >= 0 and batch_chats >= 1")


@dataclass
class TrainState:
    step: int = 0
    history: list[dict] = field(default_factory=list)
    best_val: float = math.inf


def joint_loss(
    model: RankAE, chats: Sequence[ChatLog], cfg: TrainConfig, rng: np.random.Generator
) -> tuple[torch.Tensor, dict]:
    """``alpha * L_cup + (1 - alpha) * L_rec`` over a batch of tokenized chats.

    A zero-weighted term is not computed at all, so its parameters get no
    gradient.
    """
    enc = model.encoder
    clean_tokens = [t for ch in chats for t in ch.token_lists]
    clean_parties = [p for ch in chats for p in ch.parties]
    H_all = enc.encode(clean_tokens, clean_parties)
    offsets = np.cumsum([0] + [len(ch) for ch in chats])
    stats: dict = {}
    total = H_all.new_zeros(())
    if cfg.alpha > 0:
        cups = [
            cup_loss(H_all[offsets[i] : offsets[i + 1]], model.W, cfg.c, cfg.negatives, rng, reduction="mean")
            for i in range(len(chats))
        ]
        l_cup = torch.stack(cups).mean()
        total = total + cfg.alpha * l_cup
        stats["cup"] = l_cup.item()
    if cfg.alpha < 1:
        # members whose tokens are unchanged (retained, or replaced by another
        # clean utterance) reuse the clean vectors; only insertions are re-encoded
        n_clean = H_all.shape[0]
        q_rows, mem_rows, slot_rows, targets, fresh_tok, fresh_par = [], [], [], [], [], []
        for i, ch in enumerate(chats):
            base = int(offsets[i])
            for pair in chat_pairs(ch, cfg.c, cfg.noise, rng):
                rows = []
                for opt, src, toks, party in zip(pair.noise_log, pair.sources, pair.noisy.tokens, pair.noisy.parties):
                    if opt == INSERT and len(toks) != len(ch.utterances[src].tokens):
                        rows.append(n_clean + len(fresh_tok))
                        fresh_tok.append(toks)
                        fresh_par.append(party)
                    else:
                        rows.append(base + src)
                seg = pair.noisy
                q_rows.append(base + seg.center)
                mem_rows.append(rows)
                slot_rows.append([model.slot_index(j, seg.center) for j in seg.members])
                targets.append(target_ids(model, pair))
        if targets:
            Q_all = torch.cat([
                model.encode_queries(H_all[offsets[i] : offsets[i + 1]]) for i in range(len(chats))
            ])
            vecs = torch.cat([H_all, enc.encode(fresh_tok, fresh_par)]) if fresh_tok else H_all
            idx, mem_pad = _pad_rows(mem_rows, 0)
            slots, _ = _pad_rows(slot_rows, 0)
            mem = vecs[idx] + model.slot_emb(slots)
            l_rec = _rec_loss(model, Q_all[torch.tensor(q_rows)], mem, mem_pad, targets)
            total = total + (1 - cfg.alpha) * l_rec
            stats["rec"] = l_rec.item()
    stats["loss"] = total.item()
    return total, stats


@torch.no_grad()
def validation_loss(model: RankAE, chats: Sequence[ChatLog], cfg: TrainConfig, seed: int = 12345) -> float:
    """Reconstruction loss on held-out chats with a fixed noise seed."""
    was = model.training
    model.eval()
    vcfg = replace(cfg, alpha=0.0)
    rng = np.random.default_rng(seed)
    losses = [joint_loss(model, chats[i : i + cfg.batch_chats], vcfg, rng)[1].get("rec", 0.0)
              for i in range(0, len(chats), cfg.batch_chats)]
    model.train(was)
    return float(np.mean(losses)) if losses else math.nan


def train_joint(
    model: RankAE,
    chats: Sequence[ChatLog],
    cfg: TrainConfig = TrainConfig(),
    *,
    val_chats: Sequence[ChatLog] = (),
    checkpoint: str | Path | None = None,
    vocab: Vocab | None = None,
    state: TrainState | None = None,
    log_every: int = 100,
) -> TrainState:
    """Adam on the joint loss; chats are drawn with a seeded generator.

    When ``checkpoint`` is given, the model with the lowest validation loss
    (evaluated every ``cfg.eval_every`` steps) is written there.
    """
    chats = [ch for ch in chats if len(ch) >= 1]
    if not chats:
        raise ValueError("no chats to train on")
    state = state or TrainState()
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min(1.0, (s + 1) / max(1, cfg.warmup)))
    model.train()
    for _ in range(cfg.steps):
        idx = rng.choice(len(chats), size=min(cfg.batch_chats, len(chats)), replace=False)
        loss, stats = joint_loss(model, [chats[i] for i in sorted(idx)], cfg, rng)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {state.step}: {stats}")
        opt.zero_grad(set_to_none=True)
        if loss.requires_grad:
            loss.backward()
            if cfg.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
        sched.step()
        state.step += 1
        stats["step"] = state.step
        if cfg.eval_every and state.step % cfg.eval_every == 0 and val_chats:
            stats["val_rec"] = validation_loss(model, val_chats, cfg)
            if checkpoint is not None and stats["val_rec"] < state.best_val:
                state.best_val = stats["val_rec"]
                if vocab is None:
                    raise ValueError("saving a checkpoint needs the vocabulary")
                model.save(checkpoint, vocab, extra={"step": state.step, "val_rec": state.best_val})
        state.history.append(stats)
        if log_every and state.step % log_every == 0:
            log.info("step %d %s", state.step, {k: round(v, 4) for k, v in stats.items() if k != "step"})
    model.eval()
    if checkpoint is not None and not (cfg.eval_every and val_chats) and vocab is not None:
        model.save(checkpoint, vocab, extra={"step": state.step})
    return state


# ---------------------------------------------------------------------------
# inference


@torch.no_grad()
def beam_search(
    model: RankAE, q: torch.Tensor, mem: torch.Tensor, beam: int = 4, max_len: int = 64, alpha: float = 0.7
) -> list[int]:
    """Length-normalized beam search; returns generated ids without the final EOS."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    eos = model.specials.eos
    max_len = min(max_len, model.cfg.max_target_len)
    alive: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    norm = lambda seq, lp: lp / (len(seq) ** alpha)  # noqa: E731
    for t in range(max_len):
        B = len(alive)
        prefix = torch.tensor([s for s, _ in alive], dtype=torch.long).reshape(B, t)
        logits = model.decode_logits(q.expand(B, -1), mem.expand(B, -1, -1), None, prefix)[:, -1]
        logp = F.log_softmax(logits.double(), dim=-1)
        cand = (torch.tensor([lp for _, lp in alive], dtype=torch.float64)[:, None] + logp).reshape(-1)
        top = torch.topk(cand, min(2 * beam, cand.numel()))
        V = logp.shape[1]
        new_alive = []
        for score, flat in zip(top.values.tolist(), top.indices.tolist()):
            b, tok = divmod(flat, V)
            seq = alive[b][0] + [tok]
            if tok == eos:
                finished.append((seq, score))
            else:
                new_alive.append((seq, score))
            if len(new_alive) == beam:
                break
        alive = new_alive
        if len(finished) >= beam or not alive:
            break
    pool = finished or alive
    best = max(pool, key=lambda x: norm(x[0], x[1]))[0]
    return best[:-1] if best and best[-1] == eos else best


@torch.no_grad()
def chat_context(model: RankAE, chat: ChatLog) -> tuple[torch.Tensor, torch.Tensor]:
    """Clean utterance vectors and queries for one chat."""
    model.eval()
    H = model.encoder.encode_chat(chat)
    return H, model.encode_queries(H)


@torch.no_grad()
def compress_segment(
    seg: ChatSegment, chat: ChatLog, model: RankAE, beam: int = 4, max_len: int = 64, context=None
) -> list[int]:
    """Decode a compressed version of an un-noised segment."""
    H, Q = context if context is not None else chat_context(model, chat)
    mem = model.memory(H[list(seg.members)], seg.members, seg.center)
    assert mem.shape[0] == len(seg.members)
    return beam_search(model, Q[seg.center][None], mem[None], beam=beam, max_len=max_len)


def render_tokens(ids: Sequence[int], vocab: Vocab) -> str:
    """Text of decoded segment ids: members split at [SEP], markers dropped."""
    parts, cur = [], []
    for i in ids:
        if i == vocab.sep_id:
            parts.append(cur)
            cur = []
        else:
            cur.append(i)
    parts.append(cur)
    texts = [decode(p, vocab, skip_special=True).strip() for p in parts]
    return " ".join(t for t in texts if t)


@dataclass(frozen=True)
class SummaryConfig:
    mode: str = "full"  # or "extractive"
    beam: int = 4
    max_decode_len: int = 64
    max_summary_tokens: int | None = None
    rank: RankConfig = RankConfig()
    backend: str = "neural"  # or "tfidf"

    def __post_init__(self) -> None:
        if self.mode not in ("full", "extractive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.backend not in ("neural", "tfidf"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass
class Summary:
    chat_id: str
    text: str
    selected: list[int]
    segments: list[str] = field(default_factory=list)
    empty: bool = False

    def as_dict(self) -> dict:
        return {"chat_id": self.chat_id, "summary": self.text, "selected": self.selected}


@torch.no_grad()
def select_for_chat(model: RankAE | None, chat: ChatLog, cfg: SummaryConfig, tfidf=None):
    if cfg.backend == "tfidf":
        from .ranker import cosine_matrix

        if tfidf is None:
            raise ValueError("tf-idf backend needs a fitted TfidfModel")
        return rank(cosine_matrix(tfidf.transform(chat)), cfg.rank), None
    H, Q = chat_context(model, chat)
    M_raw = relevance_matrix(H.double().numpy(), model.W.detach().double().numpy())
    return rank(M_raw, cfg.rank), (H, Q)


def assemble_summary(
    chat: ChatLog, model: RankAE | None, vocab: Vocab, cfg: SummaryConfig = SummaryConfig(), tfidf=None,
    selected: Sequence[int] | None = None,
) -> Summary:
    """Rank, then compress each topic segment (or copy topic utterances) in chat order."""
    context = None
    if selected is None:
        result, context = select_for_chat(model, chat, cfg, tfidf)
        selected = result.selected
    order = sorted(selected)
    pieces = []
    if cfg.mode == "extractive":
        pieces = [chat.utterances[i].text for i in order]
    else:
        if context is None:
            context = chat_context(model, chat)
        for i in order:
            seg = build_segment(chat, i, cfg.rank.c)
            ids = compress_segment(seg, chat, model, cfg.beam, cfg.max_decode_len, context)
            pieces.append(render_tokens(ids, vocab))
    text = " ".join(p for p in pieces if p)
    if cfg.max_summary_tokens is not None:
        text = truncate_text(text, vocab, cfg.max_summary_tokens)
    return Summary(chat.id, text, list(selected), pieces, empty=not text)


def truncate_text(text: str, vocab: Vocab, budget: int) -> str:
    from .tokenizer import encode

    kept, count = [], 0
    for i in encode(text, vocab):
        if vocab.id_to_token[i].strip():
            if count == budget:
                break
            count += 1
        kept.append(i)
    return decode(kept, vocab).strip()


@torch.no_grad()
def reconstruct_pair(pair: SegmentPair, chat: ChatLog, model: RankAE, beam: int = 1, max_len: int = 128, context=None) -> list[int]:
    """Decode from the noisy side of ``pair`` (query still from the clean chat)."""
    H, Q = context if context is not None else chat_context(model, chat)
    vecs = model.encoder.encode(pair.noisy.tokens, pair.noisy.parties)
    mem = model.memory(vecs, pair.noisy.members, pair.noisy.center)
    return beam_search(model, Q[pair.noisy.center][None], mem[None], beam=beam, max_len=max_len)
