"""Global click graph, global entity graph, and per-user neighbor subgraphs.

Both graphs are built once from the training split and then frozen; walking
and neighbor extraction are read-only. Edge weights are adjacency click (or
co-occurrence) counts, so construction commutes and is order-invariant.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

GRAPH_MAGIC = b"LICMGRPH"
GRAPH_VERSION = 1


def _sorted_adjacency(edges, directed):
    adj = {}
    for key, w in edges.items():
        if directed:
            src, dst = key
            adj.setdefault(src, []).append((dst, w))
        else:
            a, b = key
            adj.setdefault(a, []).append((b, w))
            adj.setdefault(b, []).append((a, w))
    for lst in adj.values():
        lst.sort(key=lambda e: (-e[1], e[0]))
    return adj


class GlobalNewsGraph:
    """Directed multigraph over news indices; weight = adjacent-click count."""

    def __init__(self, edges=None):
        self.edges = dict(edges or {})  # (src, dst) -> weight
        self._adj = _sorted_adjacency(self.edges, directed=True)

    @property
    def nodes(self):
        seen = set()
        for src, dst in self.edges:
            seen.add(src)
            seen.add(dst)
        return sorted(seen)

    def weight(self, src, dst):
        return self.edges.get((src, dst), 0)

    def out_edges(self, v):
        """Outgoing (dst, weight) pairs, heaviest first, ties by ascending index."""
        return self._adj.get(v, [])

    def __contains__(self, v):
        return v in self._adj or any(v == dst for _, dst in self.edges)

    def total_weight(self):
        return sum(self.edges.values())


class GlobalEntityGraph:
    """Undirected graph over entity indices; weight = within-article co-occurrence count."""

    def __init__(self, edges=None):
        self.edges = dict(edges or {})  # (min, max) -> weight
        self._adj = _sorted_adjacency(self.edges, directed=False)

    def neighbors(self, e):
        return self._adj.get(e, [])

    def top_neighbors(self, e, k):
        return [nbr for nbr, _ in self._adj.get(e, [])[:k]]

    def total_weight(self):
        return sum(self.edges.values())


def histories_for_graph(impressions):
    """One history per user: the longest (ties broken lexicographically).

    MIND histories are static per user within a split; deduping by user keeps
    edge weights equal to adjacent-pair counts over user histories no matter
    how many impressions each user logged.
    """
    best = {}
    for imp in impressions:
        h = tuple(imp.history)
        cur = best.get(imp.user_id)
        if cur is None or (len(h), h) > (len(cur), cur):
            best[imp.user_id] = h
    return [list(best[u]) for u in sorted(best)]


def build_news_graph_from_histories(histories):
    """Each adjacent ordered pair (d_k, d_{k+1}) in a history adds weight 1."""
    edges = {}
    for history in histories:
        for a, b in zip(history, history[1:]):
            edges[(a, b)] = edges.get((a, b), 0) + 1
    return GlobalNewsGraph(edges)


def build_news_graph(impressions):
    """Global click graph from a training split's impressions."""
    return build_news_graph_from_histories(histories_for_graph(impressions))


def build_entity_graph(articles):
    """Every unordered pair of distinct entities within an article adds weight 1."""
    edges = {}
    for art in articles:
        ents = art.entity_ids
        for i in range(len(ents)):
            for j in range(i + 1, len(ents)):
                a, b = ents[i], ents[j]
                if a == b:
                    continue
                key = (a, b) if a < b else (b, a)
                edges[key] = edges.get(key, 0) + 1
    return GlobalEntityGraph(edges)


@dataclass
class NeighborSubgraph:
    """Breadth-first neighborhood of one user's history in the click graph."""

    roots: list
    nodes: list
    edges: list  # (src, dst, weight) triples present in the global graph

    def node_index(self):
        return {v: i for i, v in enumerate(self.nodes)}


def extract_neighbor_subgraph(graph, history, m_n, n_hops):
    """Expand each history node hop by hop, keeping the top-m_n outgoing
    neighbors by weight at every expansion (ties by ascending news index).

    History nodes missing from the graph stay as isolated subgraph nodes.
    """
    if not history:
        raise ValueError("extract_neighbor_subgraph needs a nonempty history")
    roots = []
    nodes = []
    present = set()
    for v in history:
        if v not in present:
            present.add(v)
            nodes.append(v)
            roots.append(v)
    edges = []
    expanded = set()
    frontier = sorted(present)
    for _ in range(n_hops):
        discovered = []
        for v in frontier:
            if v in expanded:
                continue
            expanded.add(v)
            for dst, w in graph.out_edges(v)[:m_n]:
                edges.append((v, dst, w))
                if dst not in present:
                    present.add(dst)
                    nodes.append(dst)
                    discovered.append(dst)
        if not discovered:
            break
        frontier = sorted(discovered)
    return NeighborSubgraph(roots=roots, nodes=nodes, edges=edges)


def top_entity_neighbors(entity_graph, entities, m_e):
    """Top-m_e heaviest neighbors for each candidate entity, concatenated in
    entity order. Unknown entities contribute nothing."""
    if m_e < 0:
        raise ValueError(f"m_e must be >= 0, got {m_e}")
    out = []
    for e in entities:
        out.extend(entity_graph.top_neighbors(e, m_e))
    return out


# -- snapshot serialization ------------------------------------------------------


def save_graph_snapshot(path, news_graph, entity_graph, config_hash):
    """Bit-exact snapshot: header JSON then sorted int64 edge triples."""
    news_edges = sorted((s, d, w) for (s, d), w in news_graph.edges.items())
    entity_edges = sorted((a, b, w) for (a, b), w in entity_graph.edges.items())
    header = json.dumps(
        {"config_hash": config_hash, "news_edges": len(news_edges), "entity_edges": len(entity_edges)},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<I", GRAPH_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for triple in news_edges:
            fh.write(struct.pack("<qqq", *triple))
        for triple in entity_edges:
            fh.write(struct.pack("<qqq", *triple))


def load_graph_snapshot(path):
    """Load a snapshot; returns (news_graph, entity_graph, config_hash)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(GRAPH_MAGIC))
        if magic != GRAPH_MAGIC:
            raise ValueError(f"{path} is not a graph snapshot (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != GRAPH_VERSION:
            raise ValueError(f"unsupported graph snapshot version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        news_edges = {}
        for _ in range(header["news_edges"]):
            s, d, w = struct.unpack("<qqq", fh.read(24))
            news_edges[(s, d)] = w
        entity_edges = {}
        for _ in range(header["entity_edges"]):
            a, b, w = struct.unpack("<qqq", fh.read(24))
            entity_edges[(a, b)] = w
    return GlobalNewsGraph(news_edges), GlobalEntityGraph(entity_edges), header["config_hash"]


def graph_file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
