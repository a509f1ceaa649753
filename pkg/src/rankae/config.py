"""One validated run configuration gathering every module default."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

from .compressor import SummaryConfig, TrainConfig
from .corpus import DEFAULT_FILLERS, SynthConfig
from .ranker import RankConfig
from .segmenter import NoiseConfig


class ConfigError(ValueError):
    """Raised with every validation problem listed, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


@dataclass
class RunConfig:
    # data
    seed: int = 0
    n_chats: int = 300
    topics_per_chat: tuple[int, int] = (2, 3)
    utts_per_topic: tuple[int, int] = (3, 5)
    fillers: tuple[str, ...] = DEFAULT_FILLERS
    max_utts: int = 40
    max_tokens: int = 40
    vocab_size: int = 2000
    # ranking
    c: int = 1
    k_cap: int = 3
    eta: float = 0.5
    use_distance: bool = True
    use_diversity: bool = True
    # noise
    p_insert: float = 0.7
    p_replace: float = 0.2
    p_retain: float = 0.1
    ratio_range: tuple[float, float] = (0.4, 0.6)
    max_span: int = 5
    # model
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    query_layers: int = 2
    decoder_layers: int = 2
    max_target_len: int = 128
    # training
    alpha: float = 0.5
    negatives: int = 2
    steps: int = 2000
    batch_chats: int = 4
    lr: float = 1e-3
    warmup: int = 100
    grad_clip: float = 1.0
    eval_every: int = 0
    threads: int = 1
    # inference / evaluation
    beam: int = 4
    max_decode_len: int = 64
    max_summary_tokens: int = 40
    word_metrics: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    # -- validation ----------------------------------------------------------
    def problems(self) -> list[str]:
        out = []
        probs = (self.p_insert, self.p_replace, self.p_retain)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            out.append(f"p_insert + p_replace + p_retain must be non-negative and sum to 1 (got {sum(probs):.6g})")
        if self.c < 1:
            out.append("c must be >= 1")
        if self.k_cap < 1:
            out.append("k_cap must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            out.append("eta must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            out.append("alpha must lie in [0, 1]")
        lo, hi = self.ratio_range
        if not 0 <= lo <= hi:
            out.append("ratio_range must satisfy 0 <= lo <= hi")
        for name in ("max_utts", "max_tokens", "vocab_size", "max_summary_tokens", "max_decode_len", "beam",
                     "batch_chats", "negatives", "max_span", "d_model", "n_heads", "threads", "max_target_len"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be positive")
        if self.d_model % max(self.n_heads, 1):
            out.append("d_model must be divisible by n_heads")
        if self.steps < 0:
            out.append("steps must be >= 0")
        if self.lr <= 0:
            out.append("lr must be positive")
        for name in ("topics_per_chat", "utts_per_topic"):
            a, b = getattr(self, name)
            if not 1 <= a <= b:
                out.append(f"{name} must satisfy 1 <= lo <= hi")
        return out

    def validate(self) -> "RunConfig":
        errs = self.problems()
        if errs:
            raise ConfigError(errs)
        return self

    # -- views onto module configs ---------------------------------------------
    def synth(self) -> SynthConfig:
        return SynthConfig(n_chats=self.n_chats, topics_per_chat=tuple(self.topics_per_chat),
                           utts_per_topic=tuple(self.utts_per_topic))

    def rank(self) -> RankConfig:
        return RankConfig(self.c, self.k_cap, self.eta, self.use_distance, self.use_diversity)

    def noise(self) -> NoiseConfig:
        return NoiseConfig(self.p_insert, self.p_replace, self.p_retain, tuple(self.ratio_range), self.max_span)

    def train(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch_chats=self.batch_chats, lr=self.lr, alpha=self.alpha, c=self.c,
                           negatives=self.negatives, noise=self.noise(), seed=self.seed, eval_every=self.eval_every,
                           grad_clip=self.grad_clip, warmup=self.warmup)

    def encoder_dims(self) -> dict:
        return dict(d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads, d_ff=self.d_ff,
                    max_tokens=self.max_tokens)

    def compressor_dims(self) -> dict:
        return dict(query_layers=self.query_layers, decoder_layers=self.decoder_layers,
                    max_target_len=self.max_target_len, max_chat_utterances=self.max_utts, max_window=self.c)

    def summary(self, mode: str = "full", backend: str = "neural") -> SummaryConfig:
        return SummaryConfig(mode=mode, beam=self.beam, max_decode_len=self.max_decode_len,
                             max_summary_tokens=None, rank=self.rank(), backend=backend)

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        kw = {}
        problems = []
        defaults = cls()
        for k, v in data.items():
            ref = getattr(defaults, k)
            try:
                kw[k] = _coerce(v, ref)
            except (TypeError, ValueError) as e:
                problems.append(f"{k}: {e}")
        if problems:
            raise ConfigError(problems)
        return cls(**kw)

    def updated(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)


def _coerce(value: Any, ref: Any) -> Any:
    """Cast a JSON or command-line value to the type of the default ``ref``."""
    if isinstance(ref, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {value!r}")
        if not isinstance(value, bool):
            raise TypeError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(ref, tuple):
        if isinstance(value, str):
            value = json.loads(value) if value.strip().startswith("[") else value.split(",")
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {value!r}")
        if ref and not isinstance(ref[0], str):
            return tuple(type(ref[0])(x) for x in value)
        return tuple(str(x) for x in value)
    if isinstance(ref, dict):
        if isinstance(value, str):
            value = json.loads(value)
        if not isinstance(value, dict):
            raise TypeError(f"expected an object, got {value!r}")
        return value
    if isinstance(ref, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(ref, float):
        return float(value)
    return value


def default_config_path() -> Path:
    return Path(str(resources.files("rankae") / "data" / "default_config.json"))


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults from the packaged JSON, then ``path``, then ``overrides``; validated."""
    data = json.loads(default_config_path().read_text(encoding="utf-8"))
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: not valid JSON ({e.msg} at line {e.lineno})"]) from None
        if not isinstance(user, dict):
            raise ConfigError([f"{path}: top level must be an object"])
        data.update(user)
    data.update(overrides or {})
    return RunConfig.from_dict(data).validate()
