"""ROUGE / BLEU, the length-ratio diagnostic and extractive baselines."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np

from .corpus import ChatLog

Tokens = Sequence[Hashable]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def rouge_n(candidate: Tokens, reference: Tokens, n: int = 1) -> float:
    """ROUGE-N F1 with clipped n-gram counts."""
    if not reference:
        raise ValueError("empty reference")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    c_total, r_total = sum(cand.values()), sum(ref.values())
    if overlap == 0:
        return 0.0
    return _f1(overlap / c_total, overlap / r_total)


def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> float:
    if not reference:
        raise ValueError("empty reference")
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    return _f1(lcs / len(candidate), lcs / len(reference))


def bleu(candidate: Tokens, reference: Tokens, max_n: int = 4) -> float:
    """Sentence BLEU: clipped precisions up to ``max_n``, add-one smoothing for n >= 2.

    Unigram precision is unsmoothed, so a candidate sharing no token with the
    reference scores 0.  Brevity penalty ``exp(1 - r/c)`` applies when c < r.
    """
    if not candidate:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        cand, ref = ngrams(candidate, n), ngrams(reference, n)
        match, total = sum((cand & ref).values()), sum(cand.values())
        if n == 1:
            if match == 0:
                return 0.0
            log_p += math.log(match / total)
        else:
            log_p += math.log((match + 1) / (total + 1))
    c, r = len(candidate), len(reference)
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * math.exp(log_p / max_n)


def length_ratio(candidates: Sequence[Tokens], references: Sequence[Tokens]) -> tuple[float, int]:
    """Mean of len(candidate)/len(reference); also returns how many candidates were empty."""
    if len(candidates) != len(references) or not references:
        raise ValueError("need equally many, non-zero candidates and references")
    ratios, empty = [], 0
    for cand, ref in zip(candidates, references):
        if not ref:
            raise ValueError("empty reference")
        if not cand:
            empty += 1
        ratios.append(len(cand) / len(ref))
    return float(np.mean(ratios)), empty


# ---------------------------------------------------------------------------
# baselines; all operate on per-utterance token lists and return index lists


def lead_baseline(utt_tokens: Sequence[Tokens], budget_tokens: int = 40) -> list[int]:
    """Leading utterances while the running token count stays within budget.

    The first utterance is always taken when budget > 0, so a long opening
    utterance still yields a (later truncated) summary.
    """
    picked, used = [], 0
    if budget_tokens <= 0:
        return picked
    for i, toks in enumerate(utt_tokens):
        if picked and used + len(toks) > budget_tokens:
            break
        picked.append(i)
        used += len(toks)
        if used >= budget_tokens:
            break
    return picked


def _oracle_score(cand: Tokens, gold: Tokens) -> float:
    return rouge_n(cand, gold, 1) + rouge_n(cand, gold, 2)


def oracle_baseline(utt_tokens: Sequence[Tokens], gold: Tokens | None, budget_tokens: int = 40) -> list[int]:
    """Greedy ROUGE-1 + ROUGE-2 maximizer against the gold summary.

    Adds the best utterance while it strictly improves the score and the
    summary stays within budget; returns indices in chat order.
    """
    if not gold:
        raise ValueError("oracle baseline requires a gold summary")
    chosen: list[int] = []
    best = 0.0
    while True:
        step_best, step_idx = best, None
        for i, toks in enumerate(utt_tokens):
            if i in chosen:
                continue
            idx = sorted(chosen + [i])
            cand = [t for j in idx for t in utt_tokens[j]]
            if len(cand) > budget_tokens:
                continue
            score = _oracle_score(cand, gold)
            if score > step_best:
                step_best, step_idx = score, i
        if step_idx is None:
            return sorted(chosen)
        chosen.append(step_idx)
        best = step_best


def random_baseline(n: int, k: int, rng: np.random.Generator) -> list[int]:
    return sorted(int(i) for i in rng.choice(n, size=min(k, n), replace=False))


def join_utterances(utt_tokens: Sequence[Tokens], indices: Sequence[int]) -> list:
    return [t for i in indices for t in utt_tokens[i]]


# ---------------------------------------------------------------------------
# corpus-level report


@dataclass
class MetricReport:
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float
    bleu: float
    length_ratio: float
    n_chats: int
    empty_candidates: int = 0
    per_chat: list[dict] = field(default_factory=list, repr=False)

    def as_dict(self, with_per_chat: bool = True) -> dict:
        out = {
            "rouge1_f": self.rouge1_f,
            "rouge2_f": self.rouge2_f,
            "rougeL_f": self.rougeL_f,
            "bleu": self.bleu,
            "length_ratio": self.length_ratio,
            "n_chats": self.n_chats,
            "empty_candidates": self.empty_candidates,
        }
        if with_per_chat:
            out["per_chat"] = self.per_chat
        return out


def evaluate(
    chat_ids: Sequence[str],
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
    *,
    max_summary_tokens: int | None = 40,
    untruncated: Sequence[Tokens] | None = None,
) -> MetricReport:
    """Corpus averages of per-chat scores.

    Scores use candidates cut to ``max_summary_tokens``; the length ratio uses
    ``untruncated`` (or the raw candidates) so it reflects uncut output.
    """
    rows = []
    for cid, cand, ref in zip(chat_ids, candidates, references):
        cut = list(cand[:max_summary_tokens]) if max_summary_tokens is not None else list(cand)
        rows.append(
            {
                "chat_id": cid,
                "rouge1_f": rouge_n(cut, ref, 1),
                "rouge2_f": rouge_n(cut, ref, 2),
                "rougeL_f": rouge_l(cut, ref),
                "bleu": bleu(cut, ref),
                "length": len(cand),
                "ref_length": len(ref),
            }
        )
    lr, empty = length_ratio(untruncated if untruncated is not None else candidates, references)
    mean = lambda key: float(np.mean([r[key] for r in rows]))  # noqa: E731
    return MetricReport(
        rouge1_f=mean("rouge1_f"),
        rouge2_f=mean("rouge2_f"),
        rougeL_f=mean("rougeL_f"),
        bleu=mean("bleu"),
        length_ratio=lr,
        n_chats=len(rows),
        empty_candidates=empty,
        per_chat=rows,
    )


def format_table(reports: dict[str, MetricReport]) -> str:
    """Aligned text table with RG-1 / RG-2 / RG-L / BLEU / L-Rto. columns (scores x100)."""
    name_w = max([len("Method")] + [len(k) for k in reports])
    head = f"{'Method':<{name_w}} | {'RG-1':>6} | {'RG-2':>6} | {'RG-L':>6} | {'BLEU':>6} | {'L-Rto.':>6}"
    lines = [head, "-" * len(head)]
    for name, r in reports.items():
        lines.append(
            f"{name:<{name_w}} | {100 * r.rouge1_f:6.2f} | {100 * r.rouge2_f:6.2f} | "
            f"{100 * r.rougeL_f:6.2f} | {100 * r.bleu:6.2f} | {r.length_ratio:6.2f}"
        )
    return "\n".join(lines)


def summarize_indices(
    chat: ChatLog, pick: Callable[[list[list[int]]], list[int]]
) -> list[int]:
    """Apply an index-picking baseline to a tokenized chat and return the joined tokens."""
    utt = chat.token_lists
    return join_utterances(utt, pick(utt))
