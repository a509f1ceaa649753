"""Chat log data model, text normalization, JSONL I/O and the synthetic corpus.

A chat log is an ordered tuple of utterances; each utterance carries the
speaker's per-chat party id, its text and a 1-based position.  Subword token
ids are attached later by :func:`rankae.tokenizer.tokenize_chat`.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_FILLERS: tuple[str, ...] = ("um", "uh", "erm", "hmm", "well", "hello", "hi")

_URL_RE = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
_EMAIL_RE = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
_NUM_RE = re.compile(r"\d+(?:[.,]\d+)*")
_WS_RE = re.compile(r"\s+")


class CorpusFormatError(ValueError):
    """A chat-log file violates the JSONL schema."""


@dataclass(frozen=True)
class Utterance:
    party: int
    text: str
    position: int
    tokens: tuple[int, ...] | None = None
    # topic label; only the synthetic generator sets it
    topic: int | None = None


@dataclass(frozen=True)
class ChatLog:
    id: str
    utterances: tuple[Utterance, ...]

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def parties(self) -> list[int]:
        return [u.party for u in self.utterances]

    @property
    def token_lists(self) -> list[list[int]]:
        if any(u.tokens is None for u in self.utterances):
            raise ValueError(f"chat {self.id!r} is not tokenized")
        return [list(u.tokens) for u in self.utterances]


@dataclass(frozen=True)
class GoldSummary:
    chat_id: str
    text: str


def make_chat(chat_id: str, turns: Iterable[tuple[int, str]]) -> ChatLog:
    """Build a chat from ``(party, text)`` pairs, numbering positions from 1."""
    utts = tuple(Utterance(party=p, text=t, position=i + 1) for i, (p, t) in enumerate(turns))
    return ChatLog(chat_id, utts)


def _filler_re(fillers: Sequence[str]) -> re.Pattern | None:
    if not fillers:
        return None
    alts = "|".join(re.escape(f) for f in sorted(set(fillers), key=len, reverse=True))
    return re.compile(rf"(?<![\w<])(?:{alts})(?![\w>])", re.IGNORECASE)


_DEFAULT_FILLER_RE = _filler_re(DEFAULT_FILLERS)


def normalize_text(raw: str, fillers: Sequence[str] | None = None) -> str:
    """Mask URLs, e-mail addresses and numbers, drop filler words, collapse spaces.

    >>> normalize_text("price is 180 yuan")
    'price is <num> yuan'
    """
    text = _URL_RE.sub(" <url> ", raw)
    text = _EMAIL_RE.sub(" <email> ", text)
    text = _NUM_RE.sub(" <num> ", text)
    filler_re = _DEFAULT_FILLER_RE if fillers is None else _filler_re(fillers)
    if filler_re is not None:
        text = filler_re.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def normalize_chat(chat: ChatLog, fillers: Sequence[str] | None = None) -> ChatLog:
    utts = tuple(replace(u, text=normalize_text(u.text, fillers)) for u in chat.utterances)
    return replace(chat, utterances=utts)


def truncate_chat(chat: ChatLog, max_utts: int = 40, max_tokens: int = 40) -> ChatLog:
    """Keep the first ``max_utts`` utterances and cut each one to ``max_tokens``.

    Tokenized utterances are cut on subword ids; untokenized ones on
    whitespace-separated words.
    """
    if max_utts < 1 or max_tokens < 1:
        raise ValueError("max_utts and max_tokens must be >= 1")
    kept = []
    for pos, u in enumerate(chat.utterances[:max_utts], start=1):
        if u.tokens is not None:
            u = replace(u, tokens=u.tokens[:max_tokens])
        else:
            words = u.text.split()
            if len(words) > max_tokens:
                u = replace(u, text=" ".join(words[:max_tokens]))
        kept.append(replace(u, position=pos))
    return replace(chat, utterances=tuple(kept))


def load_chat_logs(
    path: str | Path,
    *,
    normalize: bool = True,
    fillers: Sequence[str] | None = None,
    max_utts: int = 40,
    max_tokens: int = 40,
) -> tuple[list[ChatLog], dict[str, GoldSummary]]:
    """Read a JSONL chat file; returns chats in file order and the gold map.

    Each line is ``{"id": str, "utterances": [{"party": int, "text": str}],
    "gold": str | null}``.  Blank lines are skipped.
    """
    chats: list[ChatLog] = []
    golds: dict[str, GoldSummary] = {}
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            chat, gold = _parse_record(rec, lineno)
            if chat.id in seen:
                raise CorpusFormatError(f"line {lineno}: duplicate chat id {chat.id!r}")
            seen.add(chat.id)
            if normalize:
                chat = normalize_chat(chat, fillers)
                if gold is not None:
                    gold = replace(gold, text=normalize_text(gold.text, fillers))
            chats.append(truncate_chat(chat, max_utts, max_tokens))
            if gold is not None:
                golds[chat.id] = gold
    return chats, golds


def _parse_record(rec, lineno: int) -> tuple[ChatLog, GoldSummary | None]:
    if not isinstance(rec, dict):
        raise CorpusFormatError(f"line {lineno}: expected a JSON object")
    for key in ("id", "utterances"):
        if key not in rec:
            raise CorpusFormatError(f"line {lineno}: missing {key!r}")
    chat_id = rec["id"]
    if not isinstance(chat_id, str):
        raise CorpusFormatError(f"line {lineno}: 'id' must be a string")
    raw_utts = rec["utterances"]
    if not isinstance(raw_utts, list) or not raw_utts:
        raise CorpusFormatError(f"line {lineno}: 'utterances' must be a non-empty list")
    utts = []
    for pos, u in enumerate(raw_utts, start=1):
        if not isinstance(u, dict) or not isinstance(u.get("party"), int) or not isinstance(u.get("text"), str):
            raise CorpusFormatError(f"line {lineno}: utterance {pos} needs int 'party' and str 'text'")
        topic = u.get("topic")
        utts.append(Utterance(party=u["party"], text=u["text"], position=pos, topic=topic))
    gold = rec.get("gold")
    if gold is not None and (not isinstance(gold, str) or not gold.strip()):
        raise CorpusFormatError(f"line {lineno}: 'gold' must be a non-empty string or null")
    return ChatLog(chat_id, tuple(utts)), (GoldSummary(chat_id, gold) if gold is not None else None)


def write_chat_logs(
    path: str | Path, chats: Sequence[ChatLog], golds: dict[str, GoldSummary] | None = None
) -> None:
    golds = golds or {}
    with open(path, "w", encoding="utf-8") as fh:
        for chat in chats:
            utts = []
            for u in chat.utterances:
                rec = {"party": u.party, "text": u.text}
                if u.topic is not None:
                    rec["topic"] = u.topic
                utts.append(rec)
            gold = golds.get(chat.id)
            line = {"id": chat.id, "utterances": utts, "gold": gold.text if gold else None}
            fh.write(json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class Topic:
    name: str
    turns: tuple[tuple[str, ...], ...]  # alternatives per turn, in dialogue order
    gold: str


TOPICS: tuple[Topic, ...] = (
    Topic(
        "price",
        (
            ("how much is the {item} ?", "what is the price of the {item} ?"),
            ("{price} yuan", "it is {price} yuan"),
            ("does that include shipping ?", "is shipping included ?"),
            ("no , shipping is extra", "shipping is not included"),
            ("any discount ?", "can you lower the price ?"),
            ("sorry , the price is fixed", "no discount for now"),
        ),
        "the {item} costs {price} yuan without shipping .",
    ),
    Topic(
        "size",
        (
            ("which size fits me for the {item} ?", "what size should i take ?"),
            ("how tall are you ?", "what is your height ?"),
            ("i am {height} cm", "{height} cm"),
            ("then take size {size}", "size {size} fits you"),
            ("is it loose ?", "will it be tight ?"),
            ("it runs true to size", "the cut is standard"),
        ),
        "size {size} of the {item} fits {height} cm height .",
    ),
    Topic(
        "shipping",
        (
            ("when will my order ship ?", "when do you send it out ?"),
            ("within {days} days", "it ships in {days} days"),
            ("which courier ?", "what delivery company do you use ?"),
            ("{courier} express", "we use {courier} express"),
            ("can it arrive by {weekday} ?", "will it come before {weekday} ?"),
            ("not sure , order early", "probably by {weekday}"),
        ),
        "the order ships in {days} days by {courier} express .",
    ),
    Topic(
        "color",
        (
            ("do you have the {item} in {color} ?", "is there a {color} one ?"),
            ("yes , {color} is in stock", "{color} is available"),
            ("is the color accurate ?", "does it look like the photo ?"),
            ("slight difference under light", "the photo is accurate"),
            ("does {color} fade ?", "will the color fade after washing ?"),
            ("no fading", "it keeps the color"),
        ),
        "the {item} is in stock in {color} .",
    ),
    Topic(
        "return",
        (
            ("can i return the {item} ?", "is a return possible ?"),
            ("yes within {days} days", "returns accepted for {days} days"),
            ("who pays the postage ?", "is return postage free ?"),
            ("the buyer pays postage", "postage is on the buyer"),
            ("how do i start it ?", "where do i apply ?"),
            ("apply on the order page", "click return on the order page"),
        ),
        "returns are accepted within {days} days and the buyer pays postage .",
    ),
    Topic(
        "material",
        (
            ("what is the {item} made of ?", "what material is it ?"),
            ("{material}", "it is pure {material}"),
            ("is it soft ?", "does it itch ?"),
            ("very soft", "it does not itch"),
            ("can i machine wash it ?", "how should i wash it ?"),
            ("hand wash only", "cold machine wash is fine"),
        ),
        "the {item} is made of {material} .",
    ),
    Topic(
        "invoice",
        (
            ("can you issue an invoice ?", "do you provide invoices ?"),
            ("yes , a paper invoice", "an electronic invoice is available"),
            ("send it to {email}", "my mail is {email}"),
            ("noted , sent to your mail", "ok , invoice goes to your mail"),
            ("is tax included ?", "does the invoice include tax ?"),
            ("tax is included", "the price includes tax"),
        ),
        "an invoice will be sent to the customer mail .",
    ),
    Topic(
        "address",
        (
            ("can i change the address ?", "i want to change my address"),
            ("what is the new address ?", "please give the new address"),
            ("{city} , block {block}", "it is {city} block {block}"),
            ("updated to {city}", "the address is now {city}"),
            ("thanks", "great"),
            ("you are welcome", "anything else ?"),
        ),
        "the delivery address is changed to {city} .",
    ),
    Topic(
        "warranty",
        (
            ("is there a warranty on the {item} ?", "does the {item} have a warranty ?"),
            ("{months} months warranty", "a {months} month warranty"),
            ("what does it cover ?", "does it cover damage ?"),
            ("quality problems only", "it covers quality defects"),
            ("and after that ?", "what happens after it ends ?"),
            ("paid repair", "repairs are charged"),
        ),
        "the {item} has a {months} month warranty for quality defects .",
    ),
    Topic(
        "payment",
        (
            ("can i pay on delivery ?", "is cash on delivery supported ?"),
            ("not supported", "sorry , only online payment"),
            ("can i pay by card ?", "do you take credit cards ?"),
            ("yes , cards work", "all cards are accepted"),
            ("is there an installment plan ?", "can i pay in parts ?"),
            ("{months} installments are free", "up to {months} installments"),
        ),
        "cash on delivery is not supported but cards are accepted .",
    ),
)

ITEMS = ("skirt", "dress", "coat", "shirt", "jacket", "sweater", "bag", "scarf", "hat", "boots")
COLORS = ("red", "blue", "black", "white", "green", "grey", "pink", "brown")
SIZES = ("s", "m", "l", "xl")
COURIERS = ("swift", "polar", "zento", "rapid", "orbit")
WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday")
MATERIALS = ("cotton", "wool", "linen", "silk", "leather", "denim")
CITIES = ("lakeside", "hillview", "riverton", "oakdale", "westport", "northgate")


@dataclass(frozen=True)
class SynthConfig:
    n_chats: int = 100
    topics_per_chat: tuple[int, int] = (2, 3)
    utts_per_topic: tuple[int, int] = (3, 5)
    topics: tuple[Topic, ...] = field(default=TOPICS, repr=False)
    # permute utterances after generation; destroys topic locality
    shuffle_blocks: bool = False
    id_prefix: str = "syn"


def _slots(rng: np.random.Generator) -> dict[str, str]:
    pick = lambda seq: seq[int(rng.integers(len(seq)))]  # noqa: E731
    return {
        "item": pick(ITEMS),
        "price": str(int(rng.integers(20, 900))),
        "height": str(int(rng.integers(150, 195))),
        "size": pick(SIZES),
        "days": str(int(rng.integers(2, 15))),
        "courier": pick(COURIERS),
        "weekday": pick(WEEKDAYS),
        "color": pick(COLORS),
        "material": pick(MATERIALS),
        "email": f"user{int(rng.integers(100, 999))}@mail.com",
        "city": pick(CITIES),
        "block": str(int(rng.integers(1, 60))),
        "months": str(int(rng.integers(3, 24))),
    }


def generate_synthetic_corpus(cfg: SynthConfig, seed: int) -> tuple[list[ChatLog], dict[str, GoldSummary]]:
    """Generate topic-blocked two-party chats with one gold sentence per topic.

    Each chat draws distinct topics and emits a contiguous block of turns per
    topic; parties alternate across the whole chat.  Output text is raw
    (numbers and mail addresses unmasked) so it exercises normalization.
    """
    lo_t, hi_t = cfg.topics_per_chat
    lo_u, hi_u = cfg.utts_per_topic
    if not (1 <= lo_t <= hi_t <= len(cfg.topics)):
        raise ValueError("topics_per_chat out of range")
    if not (1 <= lo_u <= hi_u <= min(len(t.turns) for t in cfg.topics)):
        raise ValueError("utts_per_topic out of range")
    rng = np.random.default_rng(seed)
    chats: list[ChatLog] = []
    golds: dict[str, GoldSummary] = {}
    for c in range(cfg.n_chats):
        slots = _slots(rng)
        n_topics = int(rng.integers(lo_t, hi_t + 1))
        topic_ids = rng.choice(len(cfg.topics), size=n_topics, replace=False)
        first_party = int(rng.integers(2))
        turns: list[tuple[int, str, int]] = []
        sentences = []
        for tid in topic_ids:
            topic = cfg.topics[int(tid)]
            n_utts = int(rng.integers(lo_u, hi_u + 1))
            for alts in topic.turns[:n_utts]:
                text = alts[int(rng.integers(len(alts)))].format(**slots)
                party = (first_party + len(turns)) % 2
                turns.append((party, text, int(tid)))
            sentences.append(topic.gold.format(**slots))
        if cfg.shuffle_blocks:
            order = rng.permutation(len(turns))
            turns = [turns[i] for i in order]
        chat_id = f"{cfg.id_prefix}-{seed}-{c:05d}"
        utts = tuple(
            Utterance(party=p, text=t, position=i + 1, topic=tid) for i, (p, t, tid) in enumerate(turns)
        )
        chats.append(ChatLog(chat_id, utts))
        golds[chat_id] = GoldSummary(chat_id, " ".join(sentences))
    return chats, golds


def prepare_corpus(
    chats: Sequence[ChatLog],
    golds: dict[str, GoldSummary] | None = None,
    *,
    fillers: Sequence[str] | None = None,
    max_utts: int = 40,
    max_tokens: int = 40,
) -> tuple[list[ChatLog], dict[str, GoldSummary]]:
    """Normalize and truncate in-memory chats the same way :func:`load_chat_logs` does."""
    out = [truncate_chat(normalize_chat(c, fillers), max_utts, max_tokens) for c in chats]
    gout = {k: replace(g, text=normalize_text(g.text, fillers)) for k, g in (golds or {}).items()}
    return out, gout
