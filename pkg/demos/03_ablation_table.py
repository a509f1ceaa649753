"""Ablations: switch off the ranking terms (scored on the extractive output of one trained
model), and retrain with training noise centred at different insertion ratios (scored on
the full pipeline, where the length ratio is what moves).

    python3 demos/03_ablation_table.py [steps]

The CLI equivalent is ``rankae ablate --drop distance --drop diversity --noise 20 --noise 60``.
"""
import sys

from rankae.config import load_config
from rankae.evaluation import format_table
from rankae.pipeline import ablation_configs, score_summaries, summarize_corpus, synthetic_dataset, train_model

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = load_config(overrides={"n_chats": 120, "steps": steps})
ds = synthetic_dataset(cfg)
base, _ = train_model(cfg, ds.train, ds.vocab, log_every=0)


def scored(model, vcfg, mode):
    return score_summaries(summarize_corpus(ds.test, model, ds.vocab, vcfg.summary(mode)), ds.golds, ds.vocab)


reports = {"RankAE(Ext.)": scored(base, cfg, "extractive")}
for name, vcfg in ablation_configs(cfg, drop=("distance", "diversity")).items():
    reports[name] = scored(base, vcfg, "extractive")
print(format_table(reports))

reports = {}
for name, vcfg in ablation_configs(cfg, noise=(20, 40, 60)).items():
    model, _ = train_model(vcfg, ds.train, ds.vocab, log_every=0)
    reports[name] = scored(model, vcfg, "full")
print()
print(format_table(reports))
