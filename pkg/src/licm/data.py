"""MIND-format parsing, embedding loading, synthetic corpora and the bundle.

A "bundle" is the processed, index-encoded corpus (vocabularies, articles,
impressions per split, optional embedding tables) serialized as JSON-lines
with a magic header; it is the hand-off artifact between pipeline stages.
"""

from __future__ import annotations

import base64
import json
import logging
import string
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

BUNDLE_MAGIC = "LICM-BUNDLE"
BUNDLE_VERSION = 1

PAD = "<pad>"

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass
class NewsArticle:
    """One news item with vocabulary-indexed fields."""

    news_id: str
    category_id: int
    subcategory_id: int
    title_tokens: list
    entity_ids: list


@dataclass
class Impression:
    """One logged exposure: a user, their history, and labeled candidates.

    At parse time history/candidates hold string news ids; inside a bundle
    they hold news-vocabulary indices.
    """

    user_id: str
    history: list
    candidates: list  # (news_id_or_index, label) pairs


class Vocab:
    """Token -> contiguous index map with index 0 reserved for padding/OOV."""

    def __init__(self, items=None):
        self.items = [PAD]
        self.index = {PAD: 0}
        if items is not None:
            if items[0] != PAD:
                raise ValueError(f"vocab items must start with {PAD!r}, got {items[0]!r}")
            for tok in items[1:]:
                self.add(tok)

    def add(self, token):
        idx = self.index.get(token)
        if idx is None:
            idx = len(self.items)
            self.index[token] = idx
            self.items.append(token)
        return idx

    def get(self, token):
        return self.index.get(token, 0)

    def __contains__(self, token):
        return token in self.index

    def __len__(self):
        return len(self.items)


@dataclass
class EmbeddingTable:
    """Pretrained vector rows aligned with a vocabulary; row 0 is the OOV zero row."""

    dim: int
    matrix: np.ndarray
    coverage: float


def tokenize(title):
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return title.lower().translate(_PUNCT_TABLE).split()


def parse_news_tsv(path, l_title=30, l_entity=5):
    """Parse a MIND news.tsv into indexed articles plus fresh vocabularies.

    Returns (news_map, vocabs) where vocabs has keys word/category/
    subcategory/entity. Malformed lines are skipped with a logged warning;
    a bad entity-JSON column just means no entities for that article.
    """
    vocabs = {name: Vocab() for name in ("word", "category", "subcategory", "entity")}
    news = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 8:
                log.warning("news.tsv line %d: expected 8 columns, got %d; skipped", lineno, len(parts))
                continue
            news_id, category, subcategory, title, _abstract, _url, title_entities, _abstract_entities = parts[:8]
            if news_id in news:
                continue
            tokens = tokenize(title)[:l_title]
            if not tokens:
                log.warning("news.tsv line %d: news %s has an empty title", lineno, news_id)
            entities = []
            if title_entities.strip():
                try:
                    for ent in json.loads(title_entities):
                        wikidata_id = ent.get("WikidataId")
                        if wikidata_id:
                            entities.append(wikidata_id)
                except (json.JSONDecodeError, AttributeError, TypeError):
                    entities = []
            entities = entities[:l_entity]
            news[news_id] = NewsArticle(
                news_id=news_id,
                category_id=vocabs["category"].add(category),
                subcategory_id=vocabs["subcategory"].add(subcategory),
                title_tokens=[vocabs["word"].add(t) for t in tokens],
                entity_ids=[vocabs["entity"].add(e) for e in entities],
            )
    return news, vocabs


def parse_behaviors_tsv(path, l_his=50):
    """Parse a MIND behaviors.tsv into Impressions (string news ids).

    Histories keep the most recent l_his entries. A candidate token without a
    -0/-1 label suffix rejects the whole line with a warning.
    """
    impressions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 5:
                log.warning("behaviors.tsv line %d: expected 5 columns, got %d; skipped", lineno, len(parts))
                continue
            _imp_id, user_id, _time, history_col, cands_col = parts[:5]
            history = history_col.split()[-l_his:]
            candidates = []
            ok = True
            for token in cands_col.split():
                news_id, sep, label = token.rpartition("-")
                if sep != "-" or label not in ("0", "1"):
                    log.warning("behaviors.tsv line %d: bad candidate token %r; line rejected", lineno, token)
                    ok = False
                    break
                candidates.append((news_id, int(label)))
            if not ok or not candidates:
                if not candidates and ok:
                    log.warning("behaviors.tsv line %d: no candidates; skipped", lineno)
                continue
            impressions.append(Impression(user_id=user_id, history=history, candidates=candidates))
    return impressions


def load_embeddings(path, vocab, dim):
    """Load whitespace vector lines ("token v1 .. v_dim") for a vocabulary.

    Vocabulary tokens missing from the file keep the zero row; a line whose
    vector length differs from `dim` is a hard error.
    """
    matrix = np.zeros((len(vocab), dim))
    matched = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(f"embedding line {lineno}: expected {dim} values for {token!r}, got {len(values)}")
            idx = vocab.get(token)
            if idx != 0:
                matrix[idx] = np.array([float(v) for v in values])
                matched += 1
    coverage = matched / max(len(vocab) - 1, 1)
    log.info("embeddings %s: %d/%d vocabulary tokens covered (%.1f%%)", path, matched, len(vocab) - 1, 100 * coverage)
    return EmbeddingTable(dim=dim, matrix=matrix, coverage=coverage)


# -- synthetic corpus ----------------------------------------------------------


def synth_corpus(
    seed,
    n_users,
    n_news,
    n_categories,
    l_title=8,
    l_entity=2,
    l_his=50,
    words_per_category=20,
    shared_words=20,
    entities_per_category=8,
    hist_min=8,
    hist_max=20,
    preference=0.8,
    hub_fraction=0.03,
    hub_noise_share=0.5,
    popularity_exponent=1.0,
    neg_in_category_rate=0.5,
    n_negatives=4,
    impressions_per_split=(3, 1, 1),
):
    """Generate a category-clustered corpus with learnable click structure.

    Users carry a preferred category; history clicks and positive candidates
    are drawn from it with probability `preference`, popularity-weighted, so
    the click graph develops heavy within-category edges and non-trivial
    chains. A small set of "hub" news absorbs part of the noise clicks,
    giving every category graph a popular off-topic attractor. Deterministic
    per seed. Returns (news_map, vocabs, impressions_by_split).
    """
    if min(n_users, n_news, n_categories) < 1:
        raise ValueError("n_users, n_news and n_categories must all be >= 1")
    rng = np.random.default_rng(seed)
    vocabs = {name: Vocab() for name in ("word", "category", "subcategory", "entity")}

    cat_words = [[f"w_c{c}_{k}" for k in range(words_per_category)] for c in range(n_categories)]
    common_words = [f"shared{k}" for k in range(shared_words)]
    cat_entities = [[f"e_c{c}_{k}" for k in range(entities_per_category)] for c in range(n_categories)]

    n_hubs = min(n_news, max(2, int(round(hub_fraction * n_news)))) if hub_fraction > 0 else 0
    news = {}
    news_ids = []
    categories = []
    for i in range(n_news):
        news_id = f"N{i:05d}"
        c = int(rng.integers(n_categories))
        is_hub = i < n_hubs
        pool = common_words if is_hub else cat_words[c]
        k_topic = max(1, int(round(l_title * 0.7)) - 1)
        tokens = [f"news{i}"] + [pool[int(rng.integers(len(pool)))] for _ in range(k_topic)]
        tokens += [common_words[int(rng.integers(len(common_words)))] for _ in range(l_title - len(tokens))]
        ents = list(rng.choice(cat_entities[c], size=min(l_entity, entities_per_category), replace=False))
        news[news_id] = NewsArticle(
            news_id=news_id,
            category_id=vocabs["category"].add(f"cat{c}"),
            subcategory_id=vocabs["subcategory"].add(f"subcat{c}_{int(rng.integers(2))}"),
            title_tokens=[vocabs["word"].add(t) for t in tokens[:l_title]],
            entity_ids=[vocabs["entity"].add(e) for e in ents],
        )
        news_ids.append(news_id)
        categories.append(c)

    categories = np.array(categories)
    by_category = [np.flatnonzero(categories == c) for c in range(n_categories)]
    for c in range(n_categories):
        if len(by_category[c]) == 0:
            raise ValueError(f"category {c} received no news; increase n_news")

    # Within-category popularity: zipf over a random permutation of the news.
    popularity = [None] * n_categories
    for c in range(n_categories):
        ranks = rng.permutation(len(by_category[c]))
        weights = 1.0 / np.power(ranks + 1.0, popularity_exponent)
        popularity[c] = weights / weights.sum()
    hubs = np.arange(n_hubs)

    def draw_news(pref_cat):
        r = rng.random()
        if r < preference:
            c = pref_cat
        elif n_hubs and r < preference + (1.0 - preference) * hub_noise_share:
            return int(hubs[int(rng.integers(n_hubs))])
        else:
            c = int(rng.integers(n_categories))
        return int(rng.choice(by_category[c], p=popularity[c]))

    split_names = ("train", "valid", "test")
    impressions = {name: [] for name in split_names}
    for u in range(n_users):
        user_id = f"U{u:05d}"
        pref = int(rng.integers(n_categories))
        h_len = int(rng.integers(hist_min, hist_max + 1))
        history = [news_ids[draw_news(pref)] for _ in range(h_len)][-l_his:]
        for split, count in zip(split_names, impressions_per_split):
            for _ in range(count):
                pos = draw_news(pref)
                negatives = []
                while len(negatives) < n_negatives:
                    if rng.random() < neg_in_category_rate:
                        neg = int(rng.choice(by_category[pref]))
                    else:
                        neg = int(rng.integers(n_news))
                    if neg != pos:
                        negatives.append(neg)
                cands = [(news_ids[pos], 1)] + [(news_ids[n], 0) for n in negatives]
                order = rng.permutation(len(cands))
                impressions[split].append(
                    Impression(user_id=user_id, history=list(history), candidates=[cands[i] for i in order])
                )
    return news, vocabs, impressions


# -- bundle --------------------------------------------------------------------


@dataclass
class Bundle:
    """Index-encoded corpus: vocabularies, articles, impressions, embeddings."""

    vocabs: dict
    articles: list  # NewsArticle per news index; index 0 is the pad placeholder
    impressions: dict  # split name -> list of index-encoded Impressions
    embeddings: dict = field(default_factory=dict)  # "word"/"entity" -> ndarray or absent
    config_hash: str = ""

    @property
    def n_news(self):
        return len(self.articles)

    def vocab_sizes(self):
        return {name: len(v) for name, v in self.vocabs.items()}

    def dense_news(self, l_title, l_entity):
        """Pad articles into dense index matrices for batched encoding.

        Returns dict with tokens [N, l_title], entities [N, l_entity],
        category [N], subcategory [N]; zeros are padding.
        """
        n = len(self.articles)
        tokens = np.zeros((n, l_title), dtype=np.int64)
        entities = np.zeros((n, l_entity), dtype=np.int64)
        category = np.zeros(n, dtype=np.int64)
        subcategory = np.zeros(n, dtype=np.int64)
        for i, art in enumerate(self.articles):
            tt = art.title_tokens[:l_title]
            tokens[i, : len(tt)] = tt
            ee = art.entity_ids[:l_entity]
            entities[i, : len(ee)] = ee
            category[i] = art.category_id
            subcategory[i] = art.subcategory_id
        return {"tokens": tokens, "entities": entities, "category": category, "subcategory": subcategory}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "magic": BUNDLE_MAGIC,
                "version": BUNDLE_VERSION,
                "config_hash": self.config_hash,
                "counts": {
                    "news": len(self.articles),
                    **{f"impressions_{k}": len(v) for k, v in sorted(self.impressions.items())},
                },
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for name in ("word", "category", "subcategory", "entity", "news"):
                fh.write(json.dumps({"kind": "vocab", "name": name, "items": self.vocabs[name].items},
                                    sort_keys=True) + "\n")
            for idx, art in enumerate(self.articles):
                if idx == 0:
                    continue
                rec = {
                    "kind": "news",
                    "idx": idx,
                    "id": art.news_id,
                    "cat": art.category_id,
                    "subcat": art.subcategory_id,
                    "tokens": art.title_tokens,
                    "entities": art.entity_ids,
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            for split in sorted(self.impressions):
                for imp in self.impressions[split]:
                    rec = {
                        "kind": "impression",
                        "split": split,
                        "user": imp.user_id,
                        "history": imp.history,
                        "candidates": [[c, int(l)] for c, l in imp.candidates],
                    }
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            for name in sorted(self.embeddings):
                table = np.ascontiguousarray(self.embeddings[name], dtype=np.float64)
                rec = {
                    "kind": "embeddings",
                    "name": name,
                    "rows": table.shape[0],
                    "dim": table.shape[1],
                    "data": base64.b64encode(table.tobytes()).decode("ascii"),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("magic") != BUNDLE_MAGIC:
                raise ValueError(f"{path} is not a bundle file (bad magic)")
            if header.get("version") != BUNDLE_VERSION:
                raise ValueError(f"unsupported bundle version {header.get('version')}")
            vocabs = {}
            articles = []
            impressions = {}
            embeddings = {}
            for line in fh:
                rec = json.loads(line)
                kind = rec["kind"]
                if kind == "vocab":
                    vocabs[rec["name"]] = Vocab(rec["items"])
                elif kind == "news":
                    if not articles:
                        articles.append(NewsArticle(PAD, 0, 0, [], []))
                    assert rec["idx"] == len(articles)
                    articles.append(NewsArticle(rec["id"], rec["cat"], rec["subcat"], rec["tokens"], rec["entities"]))
                elif kind == "impression":
                    imp = Impression(rec["user"], rec["history"], [(c, l) for c, l in rec["candidates"]])
                    impressions.setdefault(rec["split"], []).append(imp)
                elif kind == "embeddings":
                    raw = base64.b64decode(rec["data"])
                    embeddings[rec["name"]] = np.frombuffer(raw, dtype=np.float64).reshape(rec["rows"], rec["dim"]).copy()
                else:
                    raise ValueError(f"unknown bundle record kind {kind!r}")
        if not articles:
            articles = [NewsArticle(PAD, 0, 0, [], [])]
        return cls(vocabs=vocabs, articles=articles, impressions=impressions,
                   embeddings=embeddings, config_hash=header.get("config_hash", ""))


def build_bundle(news_map, vocabs, impressions_by_split, config, embeddings=None):
    """Index-encode parsed news and impressions into a Bundle.

    History or candidate references to news ids missing from news_map are
    dropped (logged); an impression losing all candidates is dropped too.
    """
    news_vocab = Vocab()
    articles = [NewsArticle(PAD, 0, 0, [], [])]
    for news_id, art in news_map.items():
        news_vocab.add(news_id)
        articles.append(art)
    vocabs = dict(vocabs)
    vocabs["news"] = news_vocab

    dropped_refs = 0
    dropped_imps = 0
    encoded = {}
    for split, imps in impressions_by_split.items():
        out = []
        for imp in imps:
            history = []
            for news_id in imp.history:
                idx = news_vocab.get(news_id)
                if idx == 0:
                    dropped_refs += 1
                    continue
                history.append(idx)
            candidates = []
            for news_id, label in imp.candidates:
                idx = news_vocab.get(news_id)
                if idx == 0:
                    dropped_refs += 1
                    continue
                candidates.append((idx, int(label)))
            if not candidates:
                dropped_imps += 1
                continue
            out.append(Impression(user_id=imp.user_id, history=history[-config.l_his:], candidates=candidates))
        encoded[split] = out
    if dropped_refs or dropped_imps:
        log.warning("bundle: dropped %d unknown news references and %d empty impressions", dropped_refs, dropped_imps)
    return Bundle(
        vocabs=vocabs,
        articles=articles,
        impressions=encoded,
        embeddings=dict(embeddings or {}),
        config_hash=config.hash(),
    )
