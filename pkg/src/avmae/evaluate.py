"""Retrieval, classification, and regression evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import MATCHING, MULTILABEL, Model, TaskHead
from .objectives import make_vam_batch
from .train import TokenCache, matching_probs, _embed_pair


@dataclass
class Metrics:
    task: str
    recall_at: dict | None = None
    accuracy: float | None = None
    a2: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.recall_at is not None:
            ks = sorted(self.recall_at)
            vals = [self.recall_at[k] for k in ks]
            if any(not 0.0 <= v <= 1.0 for v in vals):
                raise ContractError("recall rates must lie in [0,1]")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ContractError("R@K must be non-decreasing in K")

    def to_dict(self) -> dict:
        out = {"task": self.task, **self.extra}
        if self.recall_at is not None:
            out["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        if self.a2 is not None:
            out["a2"] = self.a2
        return out


def rank_candidates(scores: np.ndarray) -> np.ndarray:
    """Candidate indices by descending score, ties broken by ascending index."""
    return np.lexsort((np.arange(scores.size), -scores))


def evaluate_retrieval(model: Model, head: TaskHead, cache: TokenCache, ks=(1, 5, 10)) -> Metrics:
    """Score every vision candidate for each audio query with the matching head."""
    n = len(cache)
    if n < 2:
        raise ContractError("retrieval needs at least 2 items")
    if head.head.kind != MATCHING:
        raise ContractError("retrieval scoring requires a matching head")
    ks = sorted(k for k in ks)
    hits = {k: 0 for k in ks}
    ranks = []
    vis = np.stack(cache.vision)
    for query in range(n):
        aud = np.stack([cache.audio[query]] * n)
        emb_v, emb_a = _embed_pair(model, cache, vis, aud)
        cls = model.encode(emb_v, emb_a)[:, 0, :]
        scores = head(cls).data.reshape(-1)
        order = rank_candidates(scores)
        rank = int(np.where(order == query)[0][0]) + 1
        ranks.append(rank)
        for k in ks:
            hits[k] += rank <= k
    recall = {k: hits[k] / n for k in ks}
    return Metrics(task="retrieval", recall_at=recall, extra={"mean_rank": float(np.mean(ranks))})


def vam_accuracy(model: Model, cache: TokenCache, seed: int = 0, head: TaskHead | None = None) -> float:
    """Matching accuracy at threshold 0.5 on a deterministic probe batch."""
    rng = np.random.default_rng([seed, 101])
    pair = make_vam_batch([(i, i) for i in range(len(cache))], rng)
    probs = matching_probs(model, cache, pair, head=head)
    pred = (probs > 0.5).astype(np.int64)
    return float((pred == pair.labels.astype(np.int64)).mean())


def evaluate_task(model: Model, head: TaskHead, cache: TokenCache) -> Metrics:
    """Train-style accuracy for classification heads, A2 for regression."""
    vis = np.stack(cache.vision)
    aud = np.stack(cache.audio)
    emb_v, emb_a = _embed_pair(model, cache, vis, aud)
    cls = model.encode(emb_v, emb_a)[:, 0, :]
    out = head(cls).data
    bands = np.array([lab["band"] for lab in cache.labels])
    sentiments = np.array([lab["sentiment"] for lab in cache.labels])
    if head.head.kind == MULTILABEL:
        pred = out.argmax(axis=-1)
        return Metrics(task="classification", accuracy=float((pred == bands).mean()))
    if head.head.kind == MATCHING:
        acc = vam_accuracy(model, cache, head=head)
        return Metrics(task="matching", accuracy=acc)
    pred = out.reshape(-1)
    a2 = float((np.sign(pred) == np.sign(sentiments)).mean())
    mse = float(np.mean((pred - sentiments) ** 2))
    return Metrics(task="regression", a2=a2, extra={"mse": mse})
