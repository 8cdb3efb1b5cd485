"""The full ranking model: news encoder, chain/neighbor interest encoders,
gated fusion, user aggregation, candidate encoding and scoring.

All forward kernels are batched over leading dimensions; the single-item
methods (encode_news, encode_user, encode_candidate) are thin wrappers used
for inspection and oracle testing. Parameters live in one flat name -> Tensor
dict so the optimizer, checkpoints and gradient checks can treat groups
uniformly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .config import RunConfig
from .layers import attention_pool, fuse_gate, gru_cell, multi_head_self_attention, xavier
from .tensor import Tensor, dropout, matmul, spmm, stack, take_rows

CKPT_MAGIC = b"LICMCKPT"
CKPT_VERSION = 1


@dataclass
class NewsRepr:
    """Per-news encoder products; mixed_words is the category-enhanced word matrix."""

    h_ln: np.ndarray
    h_le: np.ndarray
    mixed_words: np.ndarray
    empty_title: bool


@dataclass
class UserRepr:
    emb_user: np.ndarray
    fused: np.ndarray  # per-history-item fusion of neighbor and chain vectors
    chain_user: np.ndarray
    neighbor: np.ndarray


@dataclass
class CandidateRepr:
    emb_cand: np.ndarray
    h_ln: np.ndarray
    h_le: np.ndarray
    h_ge: np.ndarray


def _broadcast_rows(t, times):
    """[..., d] -> [..., times, d] by constant broadcast."""
    expanded = t.reshape(t.shape[:-1] + (1, t.shape[-1]))
    return expanded * np.ones((times, 1))


class LicmModel:
    """Parameters plus batched forward pass for the click-prediction ranker."""

    def __init__(self, config, vocab_sizes, seed=None, word_init=None, entity_init=None):
        self.config = config
        self.vocab_sizes = dict(vocab_sizes)
        rng = np.random.default_rng(config.seed if seed is None else seed)
        c = config
        p = {}

        def mat(name, fan_in, fan_out, shape=None):
            p[name] = Tensor(xavier(rng, fan_in, fan_out, shape), requires_grad=True)

        def bias(name, dim):
            p[name] = Tensor(np.zeros(dim), requires_grad=True)

        def msa(prefix, d_in):
            for w in ("Wq", "Wk", "Wv"):
                mat(prefix + w, d_in, c.d)

        def pool(prefix):
            mat(prefix + "W", c.attn_hidden, c.d, shape=(c.attn_hidden, c.d))
            mat(prefix + "q", c.attn_hidden, 1, shape=(c.attn_hidden,))

        if word_init is not None:
            if word_init.shape != (vocab_sizes["word"], c.word_dim):
                raise ValueError(f"word embedding shape {word_init.shape} does not match "
                                 f"vocab {vocab_sizes['word']} x dim {c.word_dim}")
            p["emb.word"] = Tensor(np.array(word_init), requires_grad=True)
        else:
            mat("emb.word", c.word_dim, c.word_dim, shape=(vocab_sizes["word"], c.word_dim))
        if entity_init is not None:
            if entity_init.shape != (vocab_sizes["entity"], c.entity_dim):
                raise ValueError(f"entity embedding shape {entity_init.shape} does not match "
                                 f"vocab {vocab_sizes['entity']} x dim {c.entity_dim}")
            p["emb.entity"] = Tensor(np.array(entity_init), requires_grad=True)
        else:
            mat("emb.entity", c.entity_dim, c.entity_dim, shape=(vocab_sizes["entity"], c.entity_dim))
        mat("emb.category", c.cat_dim, c.cat_dim, shape=(vocab_sizes["category"], c.cat_dim))
        mat("emb.subcategory", c.cat_dim, c.cat_dim, shape=(vocab_sizes["subcategory"], c.cat_dim))

        msa("title_msa.", c.word_dim)
        mat("mix.W", c.d + 2 * c.cat_dim, c.d)
        bias("mix.b", c.d)
        pool("title_pool.")
        msa("entity_msa.", c.entity_dim)
        pool("entity_pool.")
        pool("chain_news_pool.")
        pool("chain_user_pool.")
        mat("ggnn.Wg", c.d, c.d)
        for gate_name in ("z", "r", "h"):
            mat(f"ggnn.W{gate_name}", c.d, c.d)
            mat(f"ggnn.U{gate_name}", c.d, c.d)
            bias(f"ggnn.b{gate_name}", c.d)
        mat("gate.W1", c.d, c.d)
        mat("gate.W2", c.d, c.d)
        bias("gate.b", c.d)
        pool("item_pool.")
        msa("user_msa.", c.d)
        pool("user_pool.")
        msa("ge_msa.", c.entity_dim)
        pool("ge_pool.")
        pool("cand_pool.")
        self.params = p

    # -- parameter plumbing ----------------------------------------------------

    def param_arrays(self):
        return {name: t.data for name, t in self.params.items()}

    def grad_arrays(self):
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in self.params.items()}

    def set_param_arrays(self, arrays):
        for name, arr in arrays.items():
            self.params[name].data = np.asarray(arr, dtype=np.float64)

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    # -- news encoder ------------------------------------------------------------

    def encode_news_batch(self, dense, news_idx, training=False, rng=None):
        """Encode news rows `news_idx` (1-d global indices) from dense matrices.

        Returns (h_ln [M, d], h_le [M, d], mixed [M, T, d]) Tensors. News with
        fully padded titles (or no entities) come out as zero vectors.
        """
        c = self.config
        p = self.params
        tokens = dense["tokens"][news_idx]
        tmask = tokens != 0
        x = take_rows(p["emb.word"], tokens)
        xn = multi_head_self_attention(x, c.heads, p, mask=tmask, prefix="title_msa.")
        xn = dropout(xn, c.dropout, rng, training)
        m, t_len = tokens.shape
        cat = take_rows(p["emb.category"], dense["category"][news_idx])
        sub = take_rows(p["emb.subcategory"], dense["subcategory"][news_idx])
        from .tensor import concat

        mixed = matmul(
            concat([xn, _broadcast_rows(cat, t_len), _broadcast_rows(sub, t_len)], axis=-1),
            p["mix.W"],
        ) + p["mix.b"]
        h_ln, _ = attention_pool(mixed, p["title_pool.W"], p["title_pool.q"], mask=tmask, allow_empty=True)

        ents = dense["entities"][news_idx]
        emask = ents != 0
        xe = take_rows(p["emb.entity"], ents)
        xe = multi_head_self_attention(xe, c.heads, p, mask=emask, prefix="entity_msa.")
        xe = dropout(xe, c.dropout, rng, training)
        h_le, _ = attention_pool(xe, p["entity_pool.W"], p["entity_pool.q"], mask=emask, allow_empty=True)
        return h_ln, h_le, mixed

    def news_vector_snapshot(self, dense, chunk=512):
        """Detached h_ln for every news index; the chain walker's vector table."""
        n = dense["tokens"].shape[0]
        out = np.zeros((n, self.config.d))
        for start in range(0, n, chunk):
            idx = np.arange(start, min(start + chunk, n))
            h_ln, _, _ = self.encode_news_batch(dense, idx, training=False)
            out[idx] = h_ln.data
        return out

    # -- interest encoders ---------------------------------------------------------

    def encode_chain_nodes(self, chain_vecs, chain_mask):
        """News-level chain interest: pool [..., K, d] chain node vectors."""
        pooled, _ = attention_pool(
            chain_vecs, self.params["chain_news_pool.W"], self.params["chain_news_pool.q"],
            mask=chain_mask, allow_empty=True,
        )
        return pooled

    def encode_chain_user_level(self, chain_item_vecs, hist_mask):
        """User-level chain interest: pool the per-item chain vectors [..., H, d]."""
        pooled, _ = attention_pool(
            chain_item_vecs, self.params["chain_user_pool.W"], self.params["chain_user_pool.q"],
            mask=hist_mask, allow_empty=True,
        )
        return pooled

    def propagate_neighbors(self, adj, feats, layers=None):
        """Gated graph propagation over a (block-diagonal) adjacency.

        feats: [S, d] node features, h^(0); each layer sums undirected
        neighbor messages through one shared transform and applies a GRU.
        layers=0 returns the features unchanged.
        """
        p = self.params
        layers = self.config.ggnn_layers if layers is None else layers
        h = Tensor.as_tensor(feats)
        for _ in range(layers):
            msg = matmul(spmm(adj, h), p["ggnn.Wg"])
            h = gru_cell(msg, h, p, "ggnn.")
        return h

    def fuse(self, neighbor, chain):
        """Gate-blend neighbor and chain vectors; returns (fused, gate)."""
        if not self.config.use_fusion_gate:
            return (neighbor + chain) * 0.5, None
        return fuse_gate(neighbor, chain, self.params)

    def aggregate_user(self, h_ln_items, h_le_items, fused_items, hist_mask, training=False, rng=None):
        """Combine {h_ln, h_le, fused} per item, then MSA + pool over the history."""
        c = self.config
        p = self.params
        parts = stack([h_ln_items, h_le_items, fused_items], axis=-2)  # [..., H, 3, d]
        ones3 = np.ones(parts.shape[:-1], dtype=bool)
        items, _ = attention_pool(parts, p["item_pool.W"], p["item_pool.q"], mask=ones3, allow_empty=True)
        seq = multi_head_self_attention(items, c.heads, p, mask=hist_mask, prefix="user_msa.")
        seq = dropout(seq, c.dropout, rng, training)
        pooled, _ = attention_pool(seq, p["user_pool.W"], p["user_pool.q"], mask=hist_mask, allow_empty=True)
        return pooled

    def encode_candidate_batch(self, dense, cand_idx, ge_ids, ge_mask, training=False, rng=None,
                               h_ln_table=None, h_le_table=None, local_of=None):
        """Candidate embeddings for [..., C] news indices.

        ge_ids/ge_mask: [..., C, S] global-entity neighbor ids and mask. When
        h_ln_table/h_le_table (Tensors over batch-local news) are given along
        with `local_of` (global->local index map array), candidate news reuse
        those encodings instead of re-encoding.
        """
        c = self.config
        p = self.params
        if h_ln_table is not None:
            h_ln = take_rows(h_ln_table, local_of[cand_idx])
            h_le = take_rows(h_le_table, local_of[cand_idx])
        else:
            flat = np.asarray(cand_idx).reshape(-1)
            h_ln_flat, h_le_flat, _ = self.encode_news_batch(dense, flat, training=training, rng=rng)
            h_ln = h_ln_flat.reshape(cand_idx.shape + (c.d,))
            h_le = h_le_flat.reshape(cand_idx.shape + (c.d,))

        xg = take_rows(p["emb.entity"], ge_ids)
        xg = multi_head_self_attention(xg, c.heads, p, mask=ge_mask, prefix="ge_msa.")
        xg = dropout(xg, c.dropout, rng, training)
        h_ge, _ = attention_pool(xg, p["ge_pool.W"], p["ge_pool.q"], mask=ge_mask, allow_empty=True)

        parts = stack([h_ln, h_le, h_ge], axis=-2)  # [..., C, 3, d]
        has_ent = dense["entities"][cand_idx].any(axis=-1)
        has_ge = np.asarray(ge_mask).any(axis=-1)
        part_mask = np.stack([np.ones_like(has_ent, dtype=bool), has_ent, has_ge], axis=-1)
        emb_cand, _ = attention_pool(parts, p["cand_pool.W"], p["cand_pool.q"], mask=part_mask)
        return emb_cand, h_ge

    # -- full forward ------------------------------------------------------------

    def score_batch(self, dense, batch, training=False, rng=None):
        """Scores [B, C] for a prepared batch (see training.build_batch)."""
        c = self.config
        h_ln, h_le, _ = self.encode_news_batch(dense, batch.news_ids, training=training, rng=rng)

        hist_ln = take_rows(h_ln, batch.hist)
        hist_le = take_rows(h_le, batch.hist)

        feats = take_rows(h_ln, batch.sub_nodes)
        feats = self.propagate_neighbors(batch.sub_adj, feats)
        neighbor = take_rows(feats, batch.hist_node_pos)  # [B, H, d]

        if c.use_chains:
            chain_vecs = take_rows(h_ln, batch.chains)
            l_items = self.encode_chain_nodes(chain_vecs, batch.chain_mask)
            fused, _ = self.fuse(neighbor, l_items)
            chain_user = self.encode_chain_user_level(l_items, batch.hist_mask)
        else:
            fused = neighbor
            chain_user = None

        emb_user = self.aggregate_user(hist_ln, hist_le, fused, batch.hist_mask, training=training, rng=rng)
        if chain_user is not None:
            emb_user = emb_user + chain_user

        emb_cand, _ = self.encode_candidate_batch(
            dense, batch.cand, batch.ge_ids, batch.ge_mask, training=training, rng=rng,
            h_ln_table=h_ln, h_le_table=h_le, local_of=batch.local_of,
        )
        b, n_cand = batch.cand.shape
        scores = (emb_user.reshape(b, 1, c.d) * emb_cand).sum(axis=-1)
        return scores

    # -- single-item wrappers (inspection and oracle tests) -----------------------

    def _dense_single(self, article):
        c = self.config
        tokens = np.zeros((1, max(len(article.title_tokens), 1)), dtype=np.int64)
        if article.title_tokens:
            tokens[0, : len(article.title_tokens)] = article.title_tokens[: c.l_title]
        ents = np.zeros((1, max(len(article.entity_ids), 1)), dtype=np.int64)
        if article.entity_ids:
            ents[0, : len(article.entity_ids)] = article.entity_ids[: c.l_entity]
        return {
            "tokens": tokens,
            "entities": ents,
            "category": np.array([article.category_id], dtype=np.int64),
            "subcategory": np.array([article.subcategory_id], dtype=np.int64),
        }

    def encode_news(self, article):
        """Encode one article; returns a NewsRepr of detached arrays."""
        dense = self._dense_single(article)
        h_ln, h_le, mixed = self.encode_news_batch(dense, np.array([0]))
        return NewsRepr(
            h_ln=h_ln.data[0].copy(),
            h_le=h_le.data[0].copy(),
            mixed_words=mixed.data[0].copy(),
            empty_title=not article.title_tokens,
        )

    def encode_user(self, dense, history, chain_nodes, subgraph):
        """Debug path for one user; history is a list of news indices,
        chain_nodes a list of node lists (one per history item)."""
        from .training import build_user_arrays

        arrays = build_user_arrays(self.config, [history], [chain_nodes], [subgraph])
        h_ln, h_le, _ = self.encode_news_batch(dense, arrays.news_ids)
        hist_ln = take_rows(h_ln, arrays.hist)
        hist_le = take_rows(h_le, arrays.hist)
        feats = self.propagate_neighbors(arrays.sub_adj, take_rows(h_ln, arrays.sub_nodes))
        neighbor = take_rows(feats, arrays.hist_node_pos)
        if self.config.use_chains:
            l_items = self.encode_chain_nodes(take_rows(h_ln, arrays.chains), arrays.chain_mask)
            fused, _ = self.fuse(neighbor, l_items)
            chain_user = self.encode_chain_user_level(l_items, arrays.hist_mask)
        else:
            fused, chain_user = neighbor, Tensor(np.zeros((1, self.config.d)))
        emb = self.aggregate_user(hist_ln, hist_le, fused, arrays.hist_mask)
        if self.config.use_chains:
            emb = emb + chain_user
        return UserRepr(
            emb_user=emb.data[0].copy(),
            fused=fused.data[0].copy(),
            chain_user=chain_user.data[0].copy(),
            neighbor=neighbor.data[0].copy(),
        )

    def encode_candidate(self, dense, news_index, entity_graph):
        """Encode one candidate news against the global entity graph."""
        from .graphs import top_entity_neighbors

        c = self.config
        ents = [e for e in dense["entities"][news_index] if e != 0]
        neighbors = top_entity_neighbors(entity_graph, ents, c.m_e)
        width = max(len(neighbors), 1)
        ge_ids = np.zeros((1, 1, width), dtype=np.int64)
        if neighbors:
            ge_ids[0, 0, : len(neighbors)] = neighbors
        ge_mask = ge_ids != 0
        cand_idx = np.array([[news_index]], dtype=np.int64)
        emb_cand, h_ge = self.encode_candidate_batch(dense, cand_idx, ge_ids, ge_mask)
        h_ln, h_le, _ = self.encode_news_batch(dense, np.array([news_index]))
        return CandidateRepr(
            emb_cand=emb_cand.data[0, 0].copy(),
            h_ln=h_ln.data[0].copy(),
            h_le=h_le.data[0].copy(),
            h_ge=h_ge.data[0, 0].copy(),
        )


# -- checkpoint io ----------------------------------------------------------------


def save_checkpoint(path, model, extra=None):
    """Write named parameter groups with shapes and raw float64 payloads."""
    names = sorted(model.params)
    header = {
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "vocab_sizes": model.vocab_sizes,
        "params": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data).tobytes())


def load_checkpoint(path):
    """Rebuild a model from a checkpoint; returns (model, extra)."""
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = RunConfig.from_dict(header["config"])
        model = LicmModel(config, header["vocab_sizes"])
        for spec_ in header["params"]:
            shape = tuple(spec_["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            model.params[spec_["name"]].data = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return model, header.get("extra", {})
