"""Utterance encoders (a small trainable transformer and tf-idf) and the context-prediction loss."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import ChatLog, Utterance


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_tokens: int = 40
    n_parties: int = 4
    dropout: float = 0.0

    @property
    def max_len(self) -> int:
        # [CLS] + party slot + tokens
        return self.max_tokens + 2


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.h, self.dk = n_heads, d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mem=None, key_pad=None, causal=False):
        """``key_pad`` is (B, S) with True at padded keys."""
        mem = x if mem is None else mem
        B, T, _ = x.shape
        S = mem.shape[1]
        q = self.q(x).view(B, T, self.h, self.dk).transpose(1, 2)
        k = self.k(mem).view(B, S, self.h, self.dk).transpose(1, 2)
        v = self.v(mem).view(B, S, self.h, self.dk).transpose(1, 2)
        att = q @ k.transpose(-1, -2) / math.sqrt(self.dk)
        if key_pad is not None:
            att = att.masked_fill(key_pad[:, None, None, :], float("-inf"))
        if causal:
            mask = torch.ones(T, S, dtype=torch.bool, device=x.device).triu(1)
            att = att.masked_fill(mask, float("-inf"))
        att = self.drop(torch.softmax(att, dim=-1))
        out = (att @ v).transpose(1, 2).reshape(B, T, self.h * self.dk)
        return self.o(out)


class Block(nn.Module):
    """Pre-norm transformer layer; with ``cross=True`` it also attends to a memory."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float = 0.0, cross: bool = False):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.cross = None
        if cross:
            self.ln_c = nn.LayerNorm(d_model)
            self.cross = MultiHeadAttention(d_model, n_heads, dropout)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_pad=None, causal=False, mem=None, mem_pad=None):
        x = x + self.drop(self.attn(self.ln1(x), key_pad=key_pad, causal=causal))
        if self.cross is not None:
            x = x + self.drop(self.cross(self.ln_c(x), mem=mem, key_pad=mem_pad))
        return x + self.drop(self.ff(self.ln2(x)))


class UtteranceEncoder(nn.Module):
    """Maps ``[CLS] <party> w_1 .. w_m`` to the final-layer vector at the [CLS] slot.

    Also owns the bilinear matrix ``W`` scoring co-occurrence as
    ``sigmoid(h_j . W h_i)``.
    """

    def __init__(self, cfg: EncoderConfig, cls_id: int = 2, party_token_ids: Sequence[int] | None = None):
        super().__init__()
        self.cfg = cfg
        self.cls_id = cls_id
        pt = list(party_token_ids) if party_token_ids is not None else [cls_id] * cfg.n_parties
        self.register_buffer("party_tokens", torch.tensor(pt, dtype=torch.long), persistent=False)
        d = cfg.d_model
        self.tok_emb = nn.Embedding(cfg.vocab_size, d)
        self.party_emb = nn.Embedding(cfg.n_parties, d)
        self.pos_emb = nn.Embedding(cfg.max_len, d)
        self.blocks = nn.ModuleList(Block(d, cfg.n_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.n_layers))
        self.norm = nn.LayerNorm(d) if cfg.n_layers else nn.Identity()
        self.W = nn.Parameter(torch.empty(d, d))
        for emb in (self.tok_emb, self.party_emb, self.pos_emb):
            nn.init.normal_(emb.weight, std=0.02)
        nn.init.normal_(self.W, std=1.0 / math.sqrt(d))

    def batch(self, token_lists: Sequence[Sequence[int]], parties: Sequence[int]):
        """Pad utterances into (ids, party, key_pad) tensors."""
        L = max(len(t) for t in token_lists) + 2 if token_lists else 2
        if L > self.cfg.max_len:
            raise ValueError(f"utterance longer than {self.cfg.max_tokens} tokens")
        party = np.array([p % self.cfg.n_parties for p in parties], dtype=np.int64)
        ids = np.zeros((len(token_lists), L), dtype=np.int64)
        ids[:, 0] = self.cls_id
        ids[:, 1] = self.party_tokens.numpy()[party]
        lens = np.array([len(t) for t in token_lists])
        for b, toks in enumerate(token_lists):
            ids[b, 2 : 2 + lens[b]] = toks
        if ids.max() >= self.cfg.vocab_size or ids.min() < 0:
            raise IndexError("token id outside the encoder vocabulary")
        pad = np.arange(L)[None, :] >= (lens[:, None] + 2)
        return torch.from_numpy(ids), torch.from_numpy(party), torch.from_numpy(pad)

    def forward(self, ids: torch.Tensor, party: torch.Tensor, key_pad: torch.Tensor | None = None) -> torch.Tensor:
        B, L = ids.shape
        x = self.tok_emb(ids) + self.pos_emb(torch.arange(L, device=ids.device))[None]
        party_slot = torch.zeros(B, L, 1, dtype=x.dtype, device=x.device)
        party_slot[:, 1] = 1.0
        x = x + party_slot * self.party_emb(party)[:, None, :]
        for blk in self.blocks:
            x = blk(x, key_pad=key_pad)
        return self.norm(x[:, 0])

    def encode(self, token_lists: Sequence[Sequence[int]], parties: Sequence[int]) -> torch.Tensor:
        """(n, d) utterance vectors for a list of token sequences."""
        if not token_lists:
            return torch.zeros(0, self.cfg.d_model, dtype=self.W.dtype)
        ids, party, pad = self.batch(token_lists, parties)
        return self(ids, party, pad)

    def encode_chat(self, chat: ChatLog) -> torch.Tensor:
        return self.encode(chat.token_lists, chat.parties)


def embed_utterance(u: Utterance, encoder: UtteranceEncoder) -> torch.Tensor:
    if u.tokens is None:
        raise ValueError("utterance is not tokenized")
    return encoder.encode([u.tokens], [u.party])[0]


# ---------------------------------------------------------------------------
# context utterance prediction


def sample_cup_pairs(n: int, c: int, m: int, rng: np.random.Generator):
    """Index arrays for the positive and negative terms of one chat.

    Positives pair each center with its in-window neighbours (window clipped at
    the chat edges).  Each positive draws ``m`` negatives uniformly, with
    replacement, from same-chat utterances outside the center's window.
    """
    pos_c, pos_x, neg_c, neg_x = [], [], [], []
    for i in range(n):
        window = range(max(0, i - c), min(n, i + c + 1))
        outside = np.array([j for j in range(n) if j < i - c or j > i + c], dtype=int)
        for j in window:
            if j == i:
                continue
            pos_c.append(i)
            pos_x.append(j)
            if len(outside):
                draws = outside[rng.integers(0, len(outside), size=m)]
                neg_c.extend([i] * m)
                neg_x.extend(int(d) for d in draws)
    arr = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    neg_x_arr = arr(neg_x)
    assert neg_x_arr.size == 0 or (neg_x_arr.min() >= 0 and neg_x_arr.max() < n)
    return arr(pos_c), arr(pos_x), arr(neg_c), neg_x_arr


def bilinear_scores(H: torch.Tensor, W: torch.Tensor, centers, others) -> torch.Tensor:
    """``h_other . W h_center`` for aligned index arrays."""
    centers = torch.as_tensor(centers, dtype=torch.long)
    others = torch.as_tensor(others, dtype=torch.long)
    return (H[others] * (H[centers] @ W.T)).sum(-1)


def cup_loss(
    H: torch.Tensor, W: torch.Tensor, c: int = 1, m: int = 2, rng: np.random.Generator | None = None,
    reduction: str = "sum",
) -> torch.Tensor:
    """Negative-sampling loss for in-window co-occurrence within one chat.

    ``reduction="sum"`` returns the negated sum of log-sigmoid terms (so
    ``W = 0`` gives ``n_terms * ln 2``); ``"mean"`` divides by the term count.
    """
    if c < 1 or m < 1:
        raise ValueError("c and m must be >= 1")
    n = H.shape[0]
    if n < 2:
        return (H.sum() + W.sum()) * 0.0
    rng = rng if rng is not None else np.random.default_rng()
    pc, px, nc, nx = sample_cup_pairs(n, c, m, rng)
    pos = F.logsigmoid(bilinear_scores(H, W, pc, px))
    neg = F.logsigmoid(-bilinear_scores(H, W, nc, nx)) if len(nc) else pos.new_zeros(0)
    total = -(pos.sum() + neg.sum())
    if reduction == "mean":
        return total / (len(pc) + len(nc))
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total


# ---------------------------------------------------------------------------
# tf-idf backend


class TfidfModel:
    """Utterance-as-document tf-idf: raw term counts times ``ln((1+N)/(1+df)) + 1``."""

    def __init__(self, corpus: Sequence[ChatLog]):
        docs = [self._terms(u) for chat in corpus for u in chat.utterances]
        if not docs:
            raise ValueError("tf-idf needs a non-empty corpus")
        df: Counter = Counter()
        for d in docs:
            df.update(set(d))
        self.n_docs = len(docs)
        self.vocab = {t: i for i, t in enumerate(sorted(df, key=str))}
        self.idf = np.zeros(len(self.vocab))
        for t, i in self.vocab.items():
            self.idf[i] = math.log((1 + self.n_docs) / (1 + df[t])) + 1.0

    @staticmethod
    def _terms(u: Utterance) -> list:
        return list(u.tokens) if u.tokens is not None else u.text.split()

    def transform(self, chat: ChatLog) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for r, u in enumerate(chat.utterances):
            for t, cnt in Counter(self._terms(u)).items():
                j = self.vocab.get(t)
                if j is not None:
                    rows.append(r)
                    cols.append(j)
                    vals.append(cnt * self.idf[j])
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(chat), len(self.vocab)))


def tfidf_vectors(corpus: Sequence[ChatLog]) -> list[sp.csr_matrix]:
    """One sparse (n_utterances x n_terms) matrix per chat, idf fit on the whole corpus."""
    model = TfidfModel(corpus)
    return [model.transform(chat) for chat in corpus]
