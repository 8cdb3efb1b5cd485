"""Run configuration shared by every pipeline stage.

One RunConfig drives ingest, graph building, chain selection, training and
evaluation. Its canonical hash is embedded in every artifact file, and each
stage refuses to consume artifacts produced under a different hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


@dataclass
class RunConfig:
    # data limits
    l_his: int = 50
    l_title: int = 30
    l_entity: int = 5
    # graph neighborhoods
    m_n: int = 10
    n_hops: int = 2
    m_e: int = 10
    # long chains
    top_n: int = 3
    max_hops: int = 8
    chain_context: str = "origin"  # "origin" or "rolling"
    # model dims
    d: int = 400
    heads: int = 20
    attn_hidden: int = 200
    word_dim: int = 300
    entity_dim: int = 100
    cat_dim: int = 100
    ggnn_layers: int = 2
    dropout: float = 0.2
    # ablation switches
    use_chains: bool = True
    use_fusion_gate: bool = True
    # training
    k_neg: int = 4
    lr: float = 2e-4
    warmup_fraction: float = 0.1
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        positive = (
            "l_his", "l_title", "l_entity", "m_n", "m_e", "top_n", "max_hops",
            "d", "heads", "attn_hidden", "word_dim", "entity_dim", "cat_dim",
            "k_neg", "epochs", "batch_size",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"config field '{name}' must be >= 1, got {getattr(self, name)}")
        if self.n_hops < 0 or self.ggnn_layers < 0:
            raise ValueError("n_hops and ggnn_layers must be >= 0")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.chain_context not in ("origin", "rolling"):
            raise ValueError(f"chain_context must be 'origin' or 'rolling', got {self.chain_context!r}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        """Build from a plain dict, rejecting unknown keys."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    def hash(self):
        """sha256 over the canonical JSON form; identifies a pipeline run."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def check_config_hash(expected, found, artifact):
    """Hard error when an artifact was produced under a different config."""
    if expected != found:
        raise ValueError(
            f"config hash mismatch for {artifact}: current config is {expected[:12]}..., "
            f"artifact was produced under {found[:12]}..."
        )
