"""Walk through the data side: synthetic chats, subword vocabulary, noisy segments, and
the extractive ranker driven by tf-idf similarities (no training needed).

    python3 demos/01_corpus_and_ranking.py
"""
import numpy as np

from rankae.config import load_config
from rankae.encoder import TfidfModel
from rankae.pipeline import synthetic_dataset
from rankae.ranker import cosine_matrix, rank
from rankae.segmenter import NoiseConfig, add_noise, build_segment
from rankae.tokenizer import decode

cfg = load_config(overrides={"n_chats": 40, "seed": 11})
ds = synthetic_dataset(cfg)
print(f"{len(ds.train)} train / {len(ds.test)} test chats, vocabulary of {len(ds.vocab)} subwords")

chat = ds.train[0]
for u in chat.utterances:
    print(f"  [party {u.party}] {u.text}")
print("gold:", ds.golds[chat.id].text)

# a noisy segment around utterance 2 and the clean target it should be rebuilt into
rng = np.random.default_rng(0)
pair = add_noise(build_segment(chat, 2, cfg.c), chat, NoiseConfig(), rng)
print("\nnoise ops:", pair.noise_log)
for toks in pair.noisy.tokens:
    print("  noisy :", decode(toks, ds.vocab))
for toks in pair.target.tokens:
    print("  target:", decode(toks, ds.vocab))

# extractive ranking over tf-idf cosine similarities
tfidf = TfidfModel(ds.train)
M = cosine_matrix(tfidf.transform(chat))
res = rank(M, cfg.rank())
print(f"\nk = {res.k}, picked utterances {res.selected}")
for i in res.selected:
    print("  ->", chat.utterances[i].text)
