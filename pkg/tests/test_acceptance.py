"""Acceptance criteria for the primary component, one test (and one PASS/FAIL line) each.

Tolerances are the stated ones.  The model-training criteria run
single-threaded with fixed seeds, so their outcome is reproducible.
"""
import math
import time
import warnings

import numpy as np
import pytest
import torch

from conftest import record
from rankae.compressor import (
    RankAE,
    TrainConfig,
    build_model,
    chat_context,
    compress_segment,
    reconstruct_pair,
    reconstruction_loss,
    train_joint,
)
from rankae.config import load_config
from rankae.corpus import ChatLog, SynthConfig, Utterance, generate_synthetic_corpus, prepare_corpus
from rankae.encoder import EncoderConfig, UtteranceEncoder, cup_loss
from rankae.evaluation import bleu, lcs_length, rouge_l, rouge_n
from rankae.pipeline import ablation_configs, benchmark, score_summaries, summarize_corpus, synthetic_dataset, train_model
from rankae.ranker import distance_matrix, select_topic_utterances
from rankae.segmenter import INSERT, REPLACE, NoiseConfig, add_noise, build_segment
from rankae.tokenizer import SPECIALS, Vocab, build_vocab, tokenize_chat

# end-to-end settings shared by the ordering and ablation criteria
E2E = dict(seed=0, n_chats=300, steps=1500)


def _tokenized_synthetic(n_chats, seed):
    chats, golds = prepare_corpus(*generate_synthetic_corpus(SynthConfig(n_chats=n_chats), seed=seed))
    vocab = build_vocab(chats)
    return [tokenize_chat(c, vocab) for c in chats], golds, vocab


# ---------------------------------------------------------------------------
# 1. replacement statistics


def test_replacement_fraction():
    chats, _, _ = _tokenized_synthetic(50, seed=5)
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    hits = 0
    draws = 10_000
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(draws):
            chat = chats[int(rng.integers(len(chats)))]
            i = int(rng.integers(1, len(chat) - 1))  # interior centre: a full 3-member segment
            pair = add_noise(build_segment(chat, i, 1), chat, NoiseConfig(), rng)
            assert len(pair.noise_log) == 3
            hits += REPLACE in pair.noise_log
    elapsed = time.perf_counter() - t0
    frac = hits / draws
    ok = abs(frac - 0.488) <= 0.015 and elapsed < 5.0
    record("replacement statistics", ok, f"fraction {frac:.4f} (target 0.488 +/- 0.015), {elapsed:.2f}s (< 5s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. insertion ratio


def test_insertion_ratio():
    chats, _, _ = _tokenized_synthetic(50, seed=6)
    rng = np.random.default_rng(77)
    cfg = NoiseConfig()
    checked = bad = 0
    worst = ""
    for _ in range(10_000):
        chat = chats[int(rng.integers(len(chats)))]
        seg = build_segment(chat, int(rng.integers(len(chat))), 1)
        pair = add_noise(seg, chat, cfg, rng)
        for j, opt, toks in zip(pair.noisy.members, pair.noise_log, pair.noisy.tokens):
            if opt != INSERT:
                continue
            L = len(chat.utterances[j].tokens)
            growth = len(toks) - L
            checked += 1
            if not (0.4 * L - 1 <= growth <= 0.6 * L + 1):
                bad += 1
                worst = f"L={L} growth={growth}"
    ok = checked > 0 and bad == 0
    record("insertion ratio", ok, f"{checked} inserted utterances, {bad} outside [40%, 60%] +/- 1 token {worst}")
    assert ok


# ---------------------------------------------------------------------------
# 3. distance coefficient


def test_distance_closed_form():
    worst = 0.0
    for n in range(1, 41):
        for k in range(1, 6):
            lam = distance_matrix(n, k)
            for i in range(n):
                for j in range(n):
                    d = abs(i - j)
                    closed = math.exp(-(d**2) / (2 * (n / k) ** 2))
                    worst = max(worst, abs(lam[i, j] - closed))
    spot = distance_matrix(10, 2)[0, 5]
    ok = worst <= 1e-12 and abs(spot - math.exp(-0.5)) <= 1e-12 and abs(spot - 0.60653) < 5e-6
    record("distance coefficient", ok, f"max |err| {worst:.1e} over n<=40,k<=5; lambda(n=10,k=2,d=5) = {spot:.5f}")
    assert ok


# ---------------------------------------------------------------------------
# 4. ranking oracle equivalence


def naive_greedy(M, k, eta):
    n = len(M)
    if n == 1:
        return [0]
    chosen = []
    for _ in range(k):
        best_i, best_s = -1, -math.inf
        for i in range(n):
            if i in chosen:
                continue
            rel = 0.0
            for j in range(n):
                if j != i:
                    rel += M[i][j]
            rel *= eta / (n - 1)
            div = 0.0
            for j in chosen:
                div = max(div, M[i][j])
            s = rel - (1 - eta) * div
            if s > best_s:
                best_i, best_s = i, s
        chosen.append(best_i)
    return chosen


def test_ranking_oracle_equivalence():
    rng = np.random.default_rng(31337)
    mismatches = 0
    for t in range(1000):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, min(4, n) + 1))
        eta = [0.0, 0.3, 0.5, 1.0][t % 4]
        M = rng.uniform(size=(n, n))
        if t % 2:
            M = (M + M.T) / 2
        if select_topic_utterances(M, k, eta) != naive_greedy(M.tolist(), k, eta):
            mismatches += 1
    ok = mismatches == 0
    record("ranking oracle equivalence", ok, f"{mismatches} mismatches on 1000 random matrices")
    assert ok


# ---------------------------------------------------------------------------
# 5. gradient correctness


def _fd_worst(params, f, rng, per_param=4, eps=1e-5):
    f().backward()
    worst = 0.0
    for p in params:
        if p.grad is None:
            continue
        flat, grad = p.data.view(-1), p.grad.view(-1)
        for idx in rng.choice(flat.numel(), size=min(per_param, flat.numel()), replace=False):
            old = flat[idx].item()
            flat[idx] = old + eps
            up = f().item()
            flat[idx] = old - eps
            down = f().item()
            flat[idx] = old
            fd, an = (up - down) / (2 * eps), grad[idx].item()
            scale = max(abs(fd), abs(an))
            if scale > 1e-6:
                worst = max(worst, abs(fd - an) / scale)
            elif abs(fd - an) > 1e-8:  # exactly-zero gradients (e.g. key biases) must stay ~0
                worst = math.inf
    return worst


def test_gradient_correctness():
    t0 = time.perf_counter()
    vocab = Vocab(list(SPECIALS) + list("abcdefg"), [])
    assert len(vocab) <= 20
    small = dict(d_model=8, n_layers=1, n_heads=2, d_ff=16, max_tokens=10)
    rng = np.random.default_rng(0)

    torch.manual_seed(0)
    enc = UtteranceEncoder(EncoderConfig(vocab_size=len(vocab), **small), vocab.cls_id).double()
    toks = [[13, 14, 15], [16, 17], [18, 19, 13, 14], [15], [16, 18], [13, 19]]
    parties = [0, 1, 0, 1, 0, 1]
    cup_worst = _fd_worst(list(enc.parameters()),
                          lambda: cup_loss(enc.encode(toks, parties), enc.W, 1, 2, np.random.default_rng(7)), rng)

    model = build_model(vocab, seed=1, enc=small, comp=dict(query_layers=1, decoder_layers=1, max_target_len=32)).double()
    chat = ChatLog("g", tuple(Utterance(i % 2, "x", i + 1, tuple(13 + (i + t) % 7 for t in range(3))) for i in range(5)))
    pair = add_noise(build_segment(chat, 2), chat, NoiseConfig(), np.random.default_rng(3))

    def rec():
        Q = model.encode_queries(model.encoder.encode_chat(chat))
        return reconstruction_loss(pair, Q[2], model)

    rec_worst = _fd_worst(list(model.parameters()), rec, rng, per_param=3)
    elapsed = time.perf_counter() - t0
    ok = cup_worst < 1e-4 and rec_worst < 1e-4 and elapsed < 30
    record("gradient correctness", ok,
           f"max rel err CUP {cup_worst:.1e}, reconstruction {rec_worst:.1e} (< 1e-4), {elapsed:.1f}s (< 30s)")
    assert ok


# ---------------------------------------------------------------------------
# 6. DAE overfit sanity

OVERFIT_STEPS = 4000


@pytest.mark.slow
def test_dae_overfit():
    torch.set_num_threads(1)
    t0 = time.perf_counter()
    chats, _, vocab = _tokenized_synthetic(50, seed=1)
    model = build_model(vocab, seed=0)  # d=64, 2 encoder + 2 decoder layers
    assert model.enc_cfg.d_model == 64 and model.cfg.decoder_layers == 2 and model.enc_cfg.n_layers == 2
    train_joint(model, chats, TrainConfig(steps=OVERFIT_STEPS, batch_chats=4, lr=1e-3, warmup=100, seed=0), log_every=0)
    model.eval()
    exact = total = 0
    r1 = []
    rng = np.random.default_rng(5)
    from rankae.segmenter import chat_pairs

    for chat in chats:
        ctx = chat_context(model, chat)
        for i in range(len(chat)):
            seg = build_segment(chat, i, 1)
            out = compress_segment(seg, chat, model, beam=1, max_len=128, context=ctx)
            exact += out == model.serialize(seg)[:-1]
            total += 1
        for pair in chat_pairs(chat, 1, NoiseConfig(), rng):
            out = reconstruct_pair(pair, chat, model, beam=1, context=ctx)
            r1.append(rouge_n(out, model.serialize(pair.target)[:-1], 1))
    elapsed = time.perf_counter() - t0
    rate, rouge = exact / total, float(np.mean(r1))
    ok = rate >= 0.9 and rouge >= 0.8 and elapsed < 15 * 60
    record("DAE overfit sanity", ok,
           f"{OVERFIT_STEPS} steps on 50 chats: exact clean {rate:.3f} (>= 0.90), noisy ROUGE-1 {rouge:.3f} (>= 0.80), "
           f"{elapsed / 60:.1f} min (< 15)")
    assert ok


# ---------------------------------------------------------------------------
# 7 & 8. end-to-end ordering and ablations (one shared trained model)


@pytest.fixture(scope="module")
def e2e():
    cfg = load_config(overrides=E2E)
    dataset = synthetic_dataset(cfg)
    model, _ = train_model(cfg, dataset.train, dataset.vocab, log_every=0)
    return cfg, dataset, model


@pytest.mark.slow
def test_end_to_end_ordering(e2e):
    cfg, dataset, model = e2e
    rep = benchmark(dataset, model, cfg)
    r1 = {k: v.rouge1_f for k, v in rep.items()}
    ok = r1["RankAE"] >= r1["RankAE(Ext.)"] >= r1["Random-k"] and r1["ORACLE"] >= r1["LEAD"]
    record("end-to-end ordering", ok,
           "ROUGE-1 " + ", ".join(f"{k} {v:.4f}" for k, v in r1.items()))
    assert ok


@pytest.mark.slow
def test_ablation_direction(e2e):
    cfg, dataset, model = e2e
    variants = ablation_configs(cfg, drop=("distance", "diversity"), noise=(20, 60))
    base_ext = score_summaries(summarize_corpus(dataset.test, model, dataset.vocab, cfg.summary("extractive")),
                               dataset.golds, dataset.vocab).rouge1_f
    scores = {}
    for name, vcfg in variants.items():
        if "noise" in name:
            vmodel, _ = train_model(vcfg, dataset.train, dataset.vocab, log_every=0)
            sums = summarize_corpus(dataset.test, vmodel, dataset.vocab, vcfg.summary("full"))
        else:
            sums = summarize_corpus(dataset.test, model, dataset.vocab, vcfg.summary("extractive"))
        scores[name] = score_summaries(sums, dataset.golds, dataset.vocab)
    no_dist = scores["- distance constraint"].rouge1_f
    no_div = scores["- diversity enhancement"].rouge1_f
    lr20 = scores["noise add. (20%)"].length_ratio
    lr60 = scores["noise add. (60%)"].length_ratio
    ranking_ok = no_dist <= base_ext and no_div <= base_ext
    noise_ok = lr60 < lr20
    record("ablation direction", ranking_ok and noise_ok,
           f"Ext ROUGE-1 {base_ext:.4f}, - distance {no_dist:.4f}, - diversity {no_div:.4f}; "
           f"L-Rto noise 20% {lr20:.3f} -> 60% {lr60:.3f}")
    assert ranking_ok and noise_ok


# ---------------------------------------------------------------------------
# 9. metric correctness

WORKED = [
    # (candidate, reference, metric, expected)
    ("a b c", "a c d", "rouge1", 2 / 3),
    ("a b c d", "a b d", "rouge2", 0.4),
    ("a a a b", "a b b", "rouge1", 2 * 0.5 * (2 / 3) / (0.5 + 2 / 3)),
    ("a b c d", "a c", "rougeL", 2 / 3),
    ("a b c", "c b a", "rougeL", 1 / 3),
    ("a b c d e", "a b c x e y", "bleu", math.exp(1 - 6 / 5) * (4 / 5 * 3 / 5 * 2 / 4 * 1 / 3) ** 0.25),
    ("a b a b", "a b", "bleu", (2 / 4 * 2 / 4 * 1 / 3 * 1 / 2) ** 0.25),
]
METRICS = {"rouge1": lambda c, r: rouge_n(c, r, 1), "rouge2": lambda c, r: rouge_n(c, r, 2), "rougeL": rouge_l, "bleu": bleu}


def test_metric_correctness():
    worst = 0.0
    for cand, ref, metric, expected in WORKED:
        worst = max(worst, abs(METRICS[metric](cand.split(), ref.split()) - expected))
    rng = np.random.default_rng(99)
    prop_fail = 0
    for _ in range(500):
        a = list(rng.choice(list("abcde"), size=int(rng.integers(1, 10))))
        b = list(rng.choice(list("abcde"), size=int(rng.integers(1, 10))))
        vals = [f(a, b) for f in METRICS.values() if True]
        prop_fail += any(not 0.0 <= v <= 1.0 for v in vals)
        prop_fail += any(abs(f(a, a) - 1.0) > 1e-12 for name, f in METRICS.items() if name != "rouge2" or len(a) > 1)
        pa, pb = list(rng.permutation(a)), list(rng.permutation(b))
        prop_fail += abs(rouge_n(pa, pb, 1) - rouge_n(a, b, 1)) > 1e-12
        prop_fail += lcs_length(a, b) > min(len(a), len(b))
    ok = worst <= 1e-9 and prop_fail == 0 and len(WORKED) >= 5
    record("metric correctness", ok, f"{len(WORKED)} worked fixtures, max |err| {worst:.1e}; {prop_fail} property violations in 500 cases")
    assert ok
