"""Long-chain selection: popularity-ranked candidate picking plus semantic pruning.

A chain is walked from each clicked news item over the frozen global click
graph: at every step the top-n out-neighbors by click weight are candidates,
and the one most cosine-similar to the context news vector survives. Cycles
are deliberately allowed, so chains may revisit nodes. Walks are discrete and
never differentiated through; they consume a detached snapshot of the news
vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ChainConfig:
    top_n: int = 3
    max_hops: int = 8
    context: str = "origin"  # "origin": compare against the clicked news; "rolling": against the latest node

    def __post_init__(self):
        if self.top_n < 1 or self.max_hops < 1:
            raise ValueError("top_n and max_hops must be >= 1")
        if self.context not in ("origin", "rolling"):
            raise ValueError(f"unknown chain context {self.context!r}")


@dataclass
class LongChain:
    """Walked node sequence for one clicked news item (origin excluded)."""

    origin: int
    nodes: list = field(default_factory=list)

    @property
    def valid_len(self):
        return len(self.nodes)


def pick_candidates(graph, v, top_n):
    """Top-n out-neighbors of v by click weight, ties by ascending index."""
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    return [dst for dst, _ in graph.out_edges(v)[:top_n]]


def similarity_scores(context_vec, candidate_vecs):
    """Cosine similarity of each candidate row against the context vector.

    Zero-norm vectors (context or candidate) score -1 so they rank last.
    """
    candidate_vecs = np.atleast_2d(candidate_vecs)
    sims = np.full(candidate_vecs.shape[0], -1.0)
    context_norm = np.linalg.norm(context_vec)
    if context_norm == 0.0:
        return sims
    norms = np.linalg.norm(candidate_vecs, axis=1)
    ok = norms > 0.0
    sims[ok] = (candidate_vecs[ok] @ context_vec) / (norms[ok] * context_norm)
    return sims


def prune_by_similarity(candidates, context_vec, news_vectors):
    """The candidate most similar to the context; ties by ascending news index."""
    if not candidates:
        raise ValueError("prune_by_similarity needs at least one candidate")
    sims = similarity_scores(context_vec, news_vectors[np.asarray(candidates)])
    best = min(range(len(candidates)), key=lambda i: (-sims[i], candidates[i]))
    return candidates[best]


def walk_chain(graph, origin, news_vectors, config, trace=None):
    """Walk up to max_hops steps from `origin`, one node per step.

    Each step ranks out-neighbors by weight (pick_candidates) and keeps the
    one most similar to the context vector (prune_by_similarity). The walk
    stops early at a sink; an origin absent from the graph yields an empty
    chain. When `trace` is a list, per-step records are appended to it.
    """
    chain = LongChain(origin=origin)
    v = origin
    context = news_vectors[origin]
    for step in range(config.max_hops):
        candidates = pick_candidates(graph, v, config.top_n)
        if not candidates:
            break
        sims = similarity_scores(context, news_vectors[np.asarray(candidates)])
        best = min(range(len(candidates)), key=lambda i: (-sims[i], candidates[i]))
        chosen = candidates[best]
        if trace is not None:
            trace.append({
                "step": step,
                "from": int(v),
                "chosen": int(chosen),
                "weight": int(graph.weight(v, chosen)),
                "similarity": float(sims[best]),
                "candidates": [int(c) for c in candidates],
            })
        chain.nodes.append(chosen)
        v = chosen
        if config.context == "rolling":
            context = news_vectors[v]
    return chain


def chains_for_history(graph, history, news_vectors, config):
    """One independent chain per clicked news item, history order preserved."""
    return [walk_chain(graph, origin, news_vectors, config) for origin in history]
