"""Topic-utterance ranking: distance-weighted relevance and diversity-aware greedy selection.

Indices are 0-based; positions used by the distance coefficient are 1-based
but only their differences matter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RankConfig:
    c: int = 1
    k_cap: int = 3
    eta: float = 0.5
    use_distance: bool = True
    use_diversity: bool = True

    def __post_init__(self) -> None:
        if self.c < 1:
            raise ValueError("window c must be >= 1")
        if self.k_cap < 1:
            raise ValueError("k_cap must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")


@dataclass(frozen=True)
class RankResult:
    k: int
    selected: list[int]
    centrality: np.ndarray

    def as_dict(self, chat_id: str) -> dict:
        return {
            "chat_id": chat_id,
            "k": self.k,
            "selected": list(self.selected),
            "scores": [float(s) for s in self.centrality],
        }


def compute_k(n: int, c: int = 1, k_cap: int = 3) -> int:
    """Expected topic count: n/(2c+1) rounded half-up, clamped to [1, min(k_cap, n)]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = math.floor(n / (2 * c + 1) + 0.5)
    return min(max(1, k), k_cap, n)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relevance_matrix(H: np.ndarray, W: np.ndarray, symmetrize: bool = True) -> np.ndarray:
    """``M[i, j] = sigmoid(h_j . W h_i)``, averaged with its transpose by default."""
    H = np.asarray(H, dtype=float)
    W = np.asarray(W, dtype=float)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ValueError("H must be a non-empty n x d matrix")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(W))):
        raise ValueError("non-finite utterance embedding or bilinear weight")
    # (H W^T)[i] = W h_i ; dotted with h_j
    M = sigmoid((H @ W.T) @ H.T)
    return (M + M.T) / 2 if symmetrize else M


def cosine_matrix(X) -> np.ndarray:
    """Pairwise cosine similarity of row vectors (dense or scipy sparse); zero rows give 0."""
    X = X.toarray() if hasattr(X, "toarray") else np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    Xn = X / safe[:, None]
    return np.clip(Xn @ Xn.T, 0.0, 1.0)


def distance_matrix(n: int, k: int) -> np.ndarray:
    """Gaussian position coefficient ``exp(-(P_j - P_i)^2 / (2 (n/k)^2))``."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    pos = np.arange(1, n + 1, dtype=float)
    diff = pos[None, :] - pos[:, None]
    return np.exp(-(diff**2) / (2.0 * (n / k) ** 2))


def local_centrality(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    return np.where(np.eye(len(M), dtype=bool), 0.0, M).sum(axis=1)


def select_topic_utterances(M: np.ndarray, k: int, eta: float = 0.5, diversity: bool = True) -> list[int]:
    """Greedy MMR-style pick of ``k`` utterances, returned in selection order.

    Score for a candidate ``i``:
    ``eta/(n-1) * sum_{j != i} M[i, j] - (1 - eta) * max_{j in V} M[i, j]``
    with the penalty taken as 0 while ``V`` is empty (or when ``diversity`` is off).
    Ties go to the lowest index.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if n == 1:
        return [0]
    relevance = eta / (n - 1) * local_centrality(M)
    penalty = np.zeros(n)
    available = np.ones(n, dtype=bool)
    selected: list[int] = []
    for _ in range(k):
        score = relevance - (1.0 - eta) * penalty if selected and diversity else relevance.copy()
        score[~available] = -np.inf
        best = int(np.argmax(score))  # first max -> lowest index
        selected.append(best)
        available[best] = False
        penalty = M[:, best].copy() if len(selected) == 1 else np.maximum(penalty, M[:, best])
    return selected


def final_matrix(M_raw: np.ndarray, k: int, use_distance: bool = True) -> np.ndarray:
    n = M_raw.shape[0]
    return M_raw * distance_matrix(n, k) if use_distance else np.array(M_raw, dtype=float)


def rank(M_raw: np.ndarray, cfg: RankConfig = RankConfig()) -> RankResult:
    """Full ranking from a raw (symmetric) relevance matrix."""
    n = M_raw.shape[0]
    k = compute_k(n, cfg.c, cfg.k_cap)
    M = final_matrix(M_raw, k, cfg.use_distance)
    selected = select_topic_utterances(M, k, cfg.eta, diversity=cfg.use_diversity)
    return RankResult(k=k, selected=selected, centrality=local_centrality(M))
