"""Command-line entry point: ``python -m rankae <subcommand> ...``.

Subcommands
-----------
gen-data      write a synthetic chat corpus (JSONL with gold summaries)
build-vocab   learn the subword vocabulary from a chat corpus
gen-pairs     write noisy/clean segment pairs (JSONL)
train         jointly train the encoder and the denoising auto-encoder
rank          select topic utterances per chat (JSONL)
summarize     produce summaries (JSONL ``{"chat_id", "summary", "selected"}``)
evaluate      score prediction JSONL against gold JSONL
ablate        rerun train/summarize/evaluate under Table-style variants

Every subcommand accepts ``--config FILE`` (JSON, keys of RunConfig) and
``--set key=value`` overrides, and writes ``<output>.manifest.json`` next to
its main output.  Exit codes: 0 ok, 1 usage, 2 config, 3 runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
log = logging.getLogger("rankae")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise ValueError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from None
    return rows


def write_manifest(output: Path, command: str, cfg: RunConfig, inputs: Sequence[Path], extra: dict | None = None) -> Path:
    """Record what is needed to replay a run: config hash, seed and input content hashes."""
    from .pipeline import content_hash

    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": {str(p): content_hash(p) for p in inputs},
        "output": str(output),
        "output_hash": content_hash(output) if output.is_file() else None,
    }
    if extra:
        manifest.update(extra)
    path = output.with_name(output.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _parse_sets(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def _load_corpus(path: Path, cfg: RunConfig, vocab=None):
    from .corpus import load_chat_logs
    from .tokenizer import tokenize_chat

    chats, golds = load_chat_logs(path, fillers=cfg.fillers, max_utts=cfg.max_utts, max_tokens=cfg.max_tokens)
    if vocab is not None:
        chats = [tokenize_chat(c, vocab, cfg.max_tokens) for c in chats]
    return chats, golds


def _load_vocab(path: Path):
    from .tokenizer import Vocab

    return Vocab.load(path)


def _load_model(path: Path | None, vocab):
    from .compressor import RankAE

    if path is None:
        raise UsageError("--checkpoint is required for the neural backend")
    return RankAE.load(path, vocab)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg: RunConfig) -> None:
    from .corpus import generate_synthetic_corpus, write_chat_logs

    synth = cfg.synth()
    if args.shuffle_blocks:
        from dataclasses import replace

        synth = replace(synth, shuffle_blocks=True)
    chats, golds = generate_synthetic_corpus(synth, cfg.seed)
    write_chat_logs(args.out, chats, golds)
    write_manifest(args.out, "gen-data", cfg, [], {"n_chats": len(chats)})
    print(f"wrote {len(chats)} chats to {args.out}")


def cmd_build_vocab(args, cfg: RunConfig) -> None:
    from .tokenizer import build_vocab

    chats, _ = _load_corpus(args.chats, cfg)
    vocab = build_vocab(chats, cfg.vocab_size)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(args.out)
    write_manifest(args.out, "build-vocab", cfg, [args.chats], {"vocab_size": len(vocab)})
    print(f"vocabulary of {len(vocab)} tokens ({len(vocab.merges)} merges) -> {args.out}")


def cmd_gen_pairs(args, cfg: RunConfig) -> None:
    from .segmenter import chat_pairs, pair_record

    vocab = _load_vocab(args.vocab)
    chats, _ = _load_corpus(args.chats, cfg, vocab)
    rng = np.random.default_rng(cfg.seed)
    rows = [pair_record(p) for chat in chats for p in chat_pairs(chat, cfg.c, cfg.noise(), rng)]
    _write_jsonl(args.out, rows)
    write_manifest(args.out, "gen-pairs", cfg, [args.chats, args.vocab], {"n_pairs": len(rows)})
    print(f"wrote {len(rows)} segment pairs to {args.out}")


def cmd_train(args, cfg: RunConfig) -> None:
    from .pipeline import train_model

    vocab = _load_vocab(args.vocab)
    chats, _ = _load_corpus(args.chats, cfg, vocab)
    val = _load_corpus(args.val_chats, cfg, vocab)[0] if args.val_chats else ()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    _, state = train_model(cfg, chats, vocab, val_chats=val, checkpoint=args.out, log_every=args.log_every)
    inputs = [args.chats, args.vocab] + ([args.val_chats] if args.val_chats else [])
    last = state.history[-1] if state.history else {}
    write_manifest(args.out, "train", cfg, inputs, {"steps": state.step, "final": last})
    print(f"trained {state.step} steps; final {json.dumps({k: round(v, 4) for k, v in last.items()})}")


def _summary_config(args, cfg: RunConfig):
    from .compressor import SummaryConfig

    return SummaryConfig(mode=getattr(args, "mode", "full"), beam=cfg.beam, max_decode_len=cfg.max_decode_len,
                         max_summary_tokens=cfg.max_summary_tokens if getattr(args, "truncate", False) else None,
                         rank=cfg.rank(), backend=args.backend)


def _ranking_backend(args, cfg, chats, vocab):
    if args.backend == "tfidf":
        from .encoder import TfidfModel

        return None, TfidfModel(chats)
    return _load_model(args.checkpoint, vocab), None


def cmd_rank(args, cfg: RunConfig) -> None:
    from .compressor import select_for_chat

    vocab = _load_vocab(args.vocab)
    chats, _ = _load_corpus(args.chats, cfg, vocab)
    model, tfidf = _ranking_backend(args, cfg, chats, vocab)
    scfg = _summary_config(args, cfg)
    rows = [select_for_chat(model, chat, scfg, tfidf)[0].as_dict(chat.id) for chat in chats]
    _write_jsonl(args.out, rows)
    inputs = [args.chats, args.vocab] + ([args.checkpoint] if model is not None else [])
    write_manifest(args.out, "rank", cfg, inputs, {"backend": args.backend})
    print(f"ranked {len(rows)} chats -> {args.out}")


def cmd_summarize(args, cfg: RunConfig) -> None:
    from .compressor import assemble_summary

    if args.beam is not None:
        cfg = cfg.updated(beam=args.beam)
    if args.max_summary_tokens is not None:
        cfg = cfg.updated(max_summary_tokens=args.max_summary_tokens)
    vocab = _load_vocab(args.vocab)
    chats, _ = _load_corpus(args.chats, cfg, vocab)
    if args.mode == "full" and args.backend == "tfidf" and args.checkpoint is None:
        raise UsageError("--mode full needs --checkpoint even with the tf-idf ranker")
    model, tfidf = _ranking_backend(args, cfg, chats, vocab)
    if model is None and args.checkpoint is not None:
        model = _load_model(args.checkpoint, vocab)
    scfg = _summary_config(args, cfg)
    rows = [assemble_summary(chat, model, vocab, scfg, tfidf=tfidf).as_dict() for chat in chats]
    _write_jsonl(args.out, rows)
    inputs = [args.chats, args.vocab] + ([args.checkpoint] if args.checkpoint else [])
    write_manifest(args.out, "summarize", cfg, inputs, {"mode": args.mode, "backend": args.backend})
    empty = sum(1 for r in rows if not r["summary"])
    print(f"summarized {len(rows)} chats ({empty} empty) -> {args.out}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    from .evaluation import format_table
    from .pipeline import score_texts

    preds = _read_jsonl(args.pred)
    _, golds = _load_corpus(args.gold, cfg)
    if args.vocab is None and not args.words:
        raise UsageError("--vocab is required unless --words is given")
    vocab = _load_vocab(args.vocab) if args.vocab else None
    for i, row in enumerate(preds, 1):
        if "chat_id" not in row or "summary" not in row:
            raise ValueError(f"{args.pred}: line {i}: needs 'chat_id' and 'summary'")
    from .corpus import normalize_text

    # predictions pass through the same (idempotent) normalization as the gold side
    texts = [normalize_text(str(r["summary"]), cfg.fillers) for r in preds]
    report = score_texts([r["chat_id"] for r in preds], texts, golds, vocab,
                         budget=cfg.max_summary_tokens, words=args.words)
    name = args.name or args.pred.stem
    out = report.as_dict()
    if not args.per_chat:
        out.pop("per_chat", None)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    inputs = [args.pred, args.gold] + ([args.vocab] if args.vocab else [])
    write_manifest(args.out, "evaluate", cfg, inputs)
    print(format_table({name: report}))


def cmd_ablate(args, cfg: RunConfig) -> None:
    from .evaluation import format_table
    from .pipeline import ablation_configs, benchmark, synthetic_dataset, train_model, summarize_corpus, score_summaries

    if not args.drop and not args.noise:
        raise UsageError("ablate needs at least one --drop or --noise")
    dataset = synthetic_dataset(cfg)
    variants = ablation_configs(cfg, args.drop or (), args.noise or ())
    base_model, _ = train_model(cfg, dataset.train, dataset.vocab, log_every=0)
    base = benchmark(dataset, base_model, cfg, include_baselines=False)
    reports = dict(base)
    for name, vcfg in variants.items():
        # ranking switches are extractor variants; noise settings retrain the auto-encoder
        retrain = tuple(vcfg.ratio_range) != tuple(cfg.ratio_range)
        model = train_model(vcfg, dataset.train, dataset.vocab, log_every=0)[0] if retrain else base_model
        mode = "full" if retrain else "extractive"
        sums = summarize_corpus(dataset.test, model, dataset.vocab, vcfg.summary(mode))
        reports[name] = score_summaries(sums, dataset.golds, dataset.vocab, budget=vcfg.max_summary_tokens,
                                        words=vcfg.word_metrics)
        log.info("%s: RG-1 %.4f L-Rto %.3f", name, reports[name].rouge1_f, reports[name].length_ratio)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(
        json.dumps({k: {kk: vv for kk, vv in v.as_dict().items() if kk != "per_chat"} for k, v in reports.items()},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    write_manifest(args.out, "ablate", cfg, [], {"drop": args.drop or [], "noise": args.noise or []})
    print(format_table(reports))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with RunConfig keys")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rankae", description="Topic-ranked chat summarization with a denoising auto-encoder.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic corpus")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--n-chats", type=int)
    s.add_argument("--shuffle-blocks", action="store_true", help="interleave topic blocks (control corpus)")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("build-vocab", parents=[common], help="learn the subword vocabulary")
    s.add_argument("--chats", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_build_vocab)

    s = sub.add_parser("gen-pairs", parents=[common], help="write noisy segment pairs")
    s.add_argument("--chats", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_gen_pairs)

    s = sub.add_parser("train", parents=[common], help="joint training")
    s.add_argument("--chats", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--val-chats", type=Path)
    s.add_argument("--out", type=Path, required=True, help="checkpoint path")
    s.add_argument("--steps", type=int)
    s.add_argument("--log-every", type=int, default=100)
    s.set_defaults(func=cmd_train)

    for name, fn, hlp in (("rank", cmd_rank, "select topic utterances"), ("summarize", cmd_summarize, "write summaries")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--chats", type=Path, required=True)
        s.add_argument("--vocab", type=Path, required=True)
        s.add_argument("--checkpoint", type=Path)
        s.add_argument("--backend", choices=("neural", "tfidf"), default="neural")
        s.add_argument("--out", type=Path, required=True)
        s.add_argument("--drop", choices=("diversity", "distance"), action="append", help="disable a ranking term")
        if name == "summarize":
            s.add_argument("--mode", choices=("full", "extractive"), default="full")
            s.add_argument("--beam", type=int)
            s.add_argument("--max-summary-tokens", type=int)
            s.add_argument("--truncate", action="store_true", help="cut summaries to --max-summary-tokens")
        s.set_defaults(func=fn)

    s = sub.add_parser("evaluate", parents=[common], help="score predictions against gold")
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--gold", type=Path, required=True)
    s.add_argument("--vocab", type=Path)
    s.add_argument("--words", action="store_true", help="score whitespace words instead of subword tokens")
    s.add_argument("--name", help="row label in the printed table")
    s.add_argument("--per-chat", action="store_true", help="include the per-chat breakdown in the JSON")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", parents=[common], help="ranking and noise ablations on the synthetic corpus")
    s.add_argument("--drop", choices=("diversity", "distance"), action="append")
    s.add_argument("--noise", type=int, choices=(0, 20, 40, 60), action="append")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def _resolve_config(args) -> RunConfig:
    overrides = _parse_sets(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    for flag, key in (("n_chats", "n_chats"), ("steps", "steps")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    for d in getattr(args, "drop", None) or ():
        if args.command in ("rank", "summarize"):
            overrides["use_" + d] = False
    return load_config(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on bad usage; --help/--version exit 0
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve_config(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    import torch

    torch.set_num_threads(cfg.threads)
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            args.func(args, cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError, RuntimeError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
