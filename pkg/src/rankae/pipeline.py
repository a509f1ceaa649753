"""End-to-end helpers shared by the command line and the narrative scripts.

Everything here is deterministic given a :class:`~rankae.config.RunConfig`:
corpus generation, vocabulary, training (single-threaded), ranking,
summarization and scoring.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .compressor import RankAE, Summary, SummaryConfig, TrainState, assemble_summary, build_model, train_joint
from .config import RunConfig
from .corpus import ChatLog, GoldSummary, generate_synthetic_corpus, prepare_corpus
from .encoder import TfidfModel
from .evaluation import (
    MetricReport,
    evaluate,
    lead_baseline,
    oracle_baseline,
    random_baseline,
)
from .ranker import compute_k
from .segmenter import NoiseConfig
from .tokenizer import Vocab, build_vocab, metric_tokens, tokenize_chat

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    train: list[ChatLog]
    test: list[ChatLog]
    golds: dict[str, GoldSummary]
    vocab: Vocab


def content_hash(path: str | Path) -> str:
    """sha256 of a file's bytes (first 16 hex digits), used in run manifests."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()[:16]


def split_chats(chats: Sequence[ChatLog], test_fraction: float, seed: int) -> tuple[list[ChatLog], list[ChatLog]]:
    order = np.random.default_rng(seed).permutation(len(chats))
    n_test = int(round(test_fraction * len(chats)))
    test_idx = set(order[:n_test].tolist())
    train = [c for i, c in enumerate(chats) if i not in test_idx]
    test = [c for i, c in enumerate(chats) if i in test_idx]
    return train, test


def synthetic_dataset(cfg: RunConfig, test_fraction: float = 0.2) -> Dataset:
    """Generate, normalize, split and tokenize a synthetic corpus; the vocabulary sees only the train split."""
    raw, golds = generate_synthetic_corpus(cfg.synth(), cfg.seed)
    chats, golds = prepare_corpus(raw, golds, fillers=cfg.fillers, max_utts=cfg.max_utts, max_tokens=cfg.max_tokens)
    train, test = split_chats(chats, test_fraction, cfg.seed)
    vocab = build_vocab(train, cfg.vocab_size)
    tok = lambda cs: [tokenize_chat(c, vocab, cfg.max_tokens) for c in cs]  # noqa: E731
    return Dataset(tok(train), tok(test), golds, vocab)


def train_model(
    cfg: RunConfig, chats: Sequence[ChatLog], vocab: Vocab, *, val_chats: Sequence[ChatLog] = (),
    checkpoint: str | Path | None = None, log_every: int = 100,
) -> tuple[RankAE, TrainState]:
    torch.set_num_threads(cfg.threads)
    model = build_model(vocab, seed=cfg.seed, enc=cfg.encoder_dims(), comp=cfg.compressor_dims())
    state = train_joint(model, chats, cfg.train(), val_chats=val_chats, checkpoint=checkpoint, vocab=vocab,
                        log_every=log_every)
    if checkpoint is not None and cfg.eval_every and val_chats:
        model = RankAE.load(checkpoint, vocab)
    return model.eval(), state


def summarize_corpus(
    chats: Sequence[ChatLog], model: RankAE | None, vocab: Vocab, scfg: SummaryConfig, tfidf: TfidfModel | None = None,
) -> list[Summary]:
    return [assemble_summary(chat, model, vocab, scfg, tfidf=tfidf) for chat in chats]


def _tokens(text: str, vocab: Vocab, words: bool) -> list[str]:
    return text.split() if words else metric_tokens(text, vocab)


def score_texts(
    chat_ids: Sequence[str], texts: Sequence[str], golds: dict[str, GoldSummary], vocab: Vocab, *,
    budget: int | None = 40, words: bool = False,
) -> MetricReport:
    """Corpus ROUGE/BLEU of summary texts against gold; the length ratio uses the uncut texts."""
    missing = [cid for cid in chat_ids if cid not in golds]
    if missing:
        raise KeyError(f"no gold summary for {len(missing)} chats, e.g. {missing[0]!r}")
    cands = [_tokens(t, vocab, words) for t in texts]
    refs = [_tokens(golds[cid].text, vocab, words) for cid in chat_ids]
    return evaluate(chat_ids, cands, refs, max_summary_tokens=budget)


def score_summaries(summaries: Sequence[Summary], golds, vocab, *, budget=40, words=False) -> MetricReport:
    return score_texts([s.chat_id for s in summaries], [s.text for s in summaries], golds, vocab,
                       budget=budget, words=words)


def baseline_texts(
    chats: Sequence[ChatLog], golds: dict[str, GoldSummary], vocab: Vocab, cfg: RunConfig, *, words: bool = False,
) -> dict[str, list[str]]:
    """LEAD, ORACLE and random-k extractive summaries as texts."""
    rng = np.random.default_rng(cfg.seed + 7919)
    out: dict[str, list[str]] = {"LEAD": [], "ORACLE": [], "Random-k": []}
    budget = cfg.max_summary_tokens
    for chat in chats:
        utts = [_tokens(u.text, vocab, words) for u in chat.utterances]
        gold = _tokens(golds[chat.id].text, vocab, words)
        texts = [u.text for u in chat.utterances]
        pick = lambda idx: " ".join(texts[i] for i in idx)  # noqa: E731
        out["LEAD"].append(pick(lead_baseline(utts, budget)))
        out["ORACLE"].append(pick(oracle_baseline(utts, gold, budget)))
        k = compute_k(len(chat), cfg.c, cfg.k_cap)
        out["Random-k"].append(pick(random_baseline(len(chat), k, rng)))
    return out


def benchmark(
    dataset: Dataset, model: RankAE, cfg: RunConfig, *, include_baselines: bool = True,
) -> dict[str, MetricReport]:
    """Table of corpus scores for baselines, the extractor and the full pipeline on the test split."""
    ids = [c.id for c in dataset.test]
    reports: dict[str, MetricReport] = {}
    score = lambda texts: score_texts(ids, texts, dataset.golds, dataset.vocab,  # noqa: E731
                                      budget=cfg.max_summary_tokens, words=cfg.word_metrics)
    if include_baselines:
        for name, texts in baseline_texts(dataset.test, dataset.golds, dataset.vocab, cfg, words=cfg.word_metrics).items():
            reports[name] = score(texts)
    for name, mode in (("RankAE(Ext.)", "extractive"), ("RankAE", "full")):
        sums = summarize_corpus(dataset.test, model, dataset.vocab, cfg.summary(mode))
        reports[name] = score([s.text for s in sums])
    return reports


def ablation_configs(base: RunConfig, drop: Sequence[str] = (), noise: Sequence[int] = ()) -> dict[str, RunConfig]:
    """Named variants of ``base``: ranking switches off, or training noise centred elsewhere."""
    out = {}
    for d in drop:
        if d == "diversity":
            out["- diversity enhancement"] = base.updated(use_diversity=False)
        elif d == "distance":
            out["- distance constraint"] = base.updated(use_distance=False)
        else:
            raise ValueError(f"unknown ablation {d!r}; choose diversity or distance")
    for pct in noise:
        if pct < 0:
            raise ValueError("noise percentage must be >= 0")
        out[f"noise add. ({pct}%)"] = base.updated(ratio_range=list(NoiseConfig.centered(pct).ratio_range))
    return out
