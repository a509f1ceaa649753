"""Train the joint model on a small synthetic corpus, then compare its summaries with the
extractive baselines on the held-out split.

    python3 demos/02_train_and_summarize.py [steps]

A few hundred steps run in a couple of minutes on one core; the scores only become
meaningful from roughly 1500 steps on 300 chats (the acceptance setting).
"""
import sys

from rankae.config import load_config
from rankae.evaluation import format_table
from rankae.pipeline import benchmark, summarize_corpus, synthetic_dataset, train_model

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = load_config(overrides={"n_chats": 120, "steps": steps})
ds = synthetic_dataset(cfg)

model, state = train_model(cfg, ds.train, ds.vocab, log_every=100)
print("final training stats:", state.history[-1] if state.history else {})

for s in summarize_corpus(ds.test[:3], model, ds.vocab, cfg.summary("full")):
    print(f"\n{s.chat_id}: selected {s.selected}")
    print("  summary:", s.text)
    print("  gold   :", ds.golds[s.chat_id].text)

print()
print(format_table(benchmark(ds, model, cfg)))
