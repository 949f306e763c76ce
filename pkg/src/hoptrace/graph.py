"""Relation graphs in label, text, and mixed form.

Label edges are stored in coordinate form sorted predicate-major (then by
head, tail) with a pointer array per predicate; text relations are stored
edge-major with a CSR index over head entities, and their token sequences
live in a deduplicated unique-text table.  Graphs are immutable once built:
every constructor-style operation returns a fresh instance.
"""

from __future__ import annotations

import json
import re
from typing import NamedTuple

import numpy as np

from . import kernels
from .encoder import OBJ_TOKEN, SUB_TOKEN, split_tokens
from .errors import GraphError

_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+")


class Vocab:
    """Dense name <-> id map, first-seen order."""

    def __init__(self, names=()):
        self._index: dict[str, int] = {}
        self._names: list[str] = []
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        if name not in self._index:
            self._index[name] = len(self._names)
            self._names.append(name)
        return self._index[name]

    def id(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise GraphError(f"unknown name {name!r}") from None

    def get(self, name: str, default=None):
        return self._index.get(name, default)

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __len__(self):
        return len(self._names)

    def __contains__(self, name):
        return name in self._index

    @property
    def names(self) -> list[str]:
        return list(self._names)


class TextRelation(NamedTuple):
    id: int
    head: int
    tail: int
    text: str


def reverse_text(text: str) -> str:
    """Reverse direction of a relation text.

    Placeholder-bearing texts swap ``<sub>`` and ``<obj>``.  One-word texts
    minted from label predicates carry no placeholders, so their direction
    lives in the word itself: those get the ``_rev`` suffix (and lose it if
    already present, making the mapping an involution).
    """
    toks = text.split()
    if SUB_TOKEN in toks or OBJ_TOKEN in toks:
        swap = {SUB_TOKEN: OBJ_TOKEN, OBJ_TOKEN: SUB_TOKEN}
        return " ".join(swap.get(t, t) for t in toks)
    return " ".join(t[: -len("_rev")] if t.endswith("_rev") else t + "_rev" for t in toks)


def _csr(keys: np.ndarray, nbuckets: int):
    order = np.argsort(keys, kind="stable").astype(np.int64)
    counts = np.bincount(keys, minlength=nbuckets)
    ptr = np.zeros(nbuckets + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return order, ptr


class RelationGraph:
    """Entities, predicates, sparse label adjacency, and text relations."""

    def __init__(self, entities, predicates, edges, texts, trels, form, reversed_=False):
        self.entities: Vocab = entities
        self.predicates: Vocab = predicates
        self.form: str = form
        self.reversed = reversed_

        e = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
        if e.size:
            order = np.lexsort((e[:, 2], e[:, 0], e[:, 1]))
            e = e[order]
        self.edge_heads = e[:, 0].copy()
        self.edge_preds = e[:, 1].copy()
        self.edge_tails = e[:, 2].copy()
        counts = np.bincount(self.edge_preds, minlength=len(predicates))
        self.pred_ptr = np.zeros(len(predicates) + 1, dtype=np.int64)
        np.cumsum(counts, out=self.pred_ptr[1:])

        self.texts: list[str] = list(texts)  # unique relation texts
        t = np.asarray(trels, dtype=np.int64).reshape(-1, 3)
        self.trel_heads = t[:, 0].copy()
        self.trel_tails = t[:, 1].copy()
        self.trel_text = t[:, 2].copy()
        self._out_order, self._out_ptr = _csr(self.trel_heads, len(entities))

    # -- basic shape ---------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.entities)

    @property
    def num_predicates(self) -> int:
        return len(self.predicates)

    @property
    def num_edges(self) -> int:
        return len(self.edge_heads)

    @property
    def num_text_relations(self) -> int:
        return len(self.trel_heads)

    def text_relation(self, rel_id: int) -> TextRelation:
        return TextRelation(
            rel_id,
            int(self.trel_heads[rel_id]),
            int(self.trel_tails[rel_id]),
            self.texts[self.trel_text[rel_id]],
        )

    def outgoing_text_relations(self, entity: int) -> np.ndarray:
        lo, hi = self._out_ptr[entity], self._out_ptr[entity + 1]
        return self._out_order[lo:hi]

    # -- reasoning access patterns --------------------------------------------

    def predicate_matvec(self, a: np.ndarray, p: int) -> np.ndarray:
        """v_j = sum of a_i over edges (i, p, j)."""
        if not 0 <= p < self.num_predicates:
            raise GraphError(f"predicate id {p} out of range [0, {self.num_predicates})")
        if a.shape[0] != self.n:
            raise GraphError(f"score vector has length {a.shape[0]}, graph has {self.n} entities")
        lo, hi = self.pred_ptr[p], self.pred_ptr[p + 1]
        w = np.ones(hi - lo)
        return kernels.push_forward(self.edge_heads[lo:hi], self.edge_tails[lo:hi], w, a, self.n)

    def select_text_relation_ids(self, a_prev: np.ndarray, tau: float, omega):
        """Array form of select_text_relations: (relation ids, subject scores).

        Entities scoring strictly above tau contribute all their outgoing
        text relations; if that exceeds omega, the top-omega by subject score
        survive (ties: lower entity id, then lower relation id).  If nothing
        clears tau, the argmax entity's relations are used.  omega=None
        means unlimited.
        """
        active = np.flatnonzero(a_prev > tau)
        if active.size == 0:
            active = np.array([int(np.argmax(a_prev))], dtype=np.int64)
        chunks = [self._out_order[self._out_ptr[i] : self._out_ptr[i + 1]] for i in active]
        rel_ids = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        if rel_ids.size == 0:
            return rel_ids, np.zeros(0)
        subj = a_prev[self.trel_heads[rel_ids]]
        if omega is not None and rel_ids.size > omega:
            order = np.lexsort((rel_ids, self.trel_heads[rel_ids], -subj))[:omega]
            rel_ids, subj = rel_ids[order], subj[order]
        return rel_ids, subj

    def select_text_relations(self, a_prev, tau: float, omega) -> list[tuple[TextRelation, float]]:
        rel_ids, subj = self.select_text_relation_ids(np.asarray(a_prev, dtype=np.float64), tau, omega)
        return [(self.text_relation(int(r)), float(s)) for r, s in zip(rel_ids, subj)]

    # -- serialization ---------------------------------------------------------

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"hoptrace-graph v1 {self.form} {self.n} {self.num_predicates}\n")
            f.write("#SECTION meta\n")
            f.write(f"reversed {'true' if self.reversed else 'false'}\n")
            f.write("#SECTION entities\n")
            for name in self.entities.names:
                f.write(name + "\n")
            f.write("#SECTION predicates\n")
            for name in self.predicates.names:
                f.write(name + "\n")
            f.write("#SECTION edges\n")
            for h, p, t in zip(self.edge_heads, self.edge_preds, self.edge_tails):
                f.write(f"{h}\t{p}\t{t}\n")
            f.write("#SECTION texts\n")
            for text in self.texts:
                f.write(text + "\n")
            f.write("#SECTION text_relations\n")
            for h, t, x in zip(self.trel_heads, self.trel_tails, self.trel_text):
                f.write(f"{h}\t{t}\t{x}\n")

    @classmethod
    def load(cls, path) -> "RelationGraph":
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise GraphError(f"{path}: empty graph file")
        head = lines[0].split()
        if len(head) != 5 or head[0] != "hoptrace-graph" or head[1] != "v1":
            raise GraphError(f"{path}: bad header {lines[0]!r}")
        form, n, num_p = head[2], int(head[3]), int(head[4])
        sections: dict[str, list[str]] = {}
        current = None
        for line in lines[1:]:
            if line.startswith("#SECTION "):
                current = line[len("#SECTION ") :]
                sections[current] = []
            elif current is None:
                raise GraphError(f"{path}: content before first #SECTION")
            else:
                sections[current].append(line)
        for required in ("entities", "predicates", "edges", "text_relations"):
            if required not in sections:
                raise GraphError(f"{path}: missing #SECTION {required}")
        meta = dict(line.split(None, 1) for line in sections.get("meta", []))
        entities = Vocab(sections["entities"])
        predicates = Vocab(sections["predicates"])
        if len(entities) != n or len(predicates) != num_p:
            raise GraphError(f"{path}: header counts do not match section sizes")
        edges = [tuple(int(x) for x in line.split("\t")) for line in sections["edges"]]
        trels = [tuple(int(x) for x in line.split("\t")) for line in sections["text_relations"]]
        return cls(
            entities,
            predicates,
            edges,
            sections.get("texts", []),
            trels,
            form,
            reversed_=meta.get("reversed") == "true",
        )


# ---------------------------------------------------------------------------
# construction


def build_from_triples(triples) -> RelationGraph:
    """Label-form graph from (head, predicate, tail) name rows.

    Vocabularies follow first-seen order; exact duplicate rows collapse.
    """
    entities, predicates = Vocab(), Vocab()
    edges = []
    seen = set()
    for i, row in enumerate(triples):
        try:
            h, p, t = row
        except (TypeError, ValueError):
            raise GraphError(f"triple row {i}: expected 3 fields, got {row!r}") from None
        if not (h and p and t) or not all(isinstance(x, str) for x in (h, p, t)):
            raise GraphError(f"triple row {i}: names must be non-empty strings, got {row!r}")
        key = (h, p, t)
        hi = entities.add(h)
        pi = predicates.add(p)
        ti = entities.add(t)
        if key in seen:
            continue
        seen.add(key)
        edges.append((hi, pi, ti))
    return RelationGraph(entities, predicates, edges, [], [], form="label")


def load_triples_tsv(path) -> list[tuple[str, str, str]]:
    """head<TAB>predicate<TAB>tail per line; '#' lines are comments."""
    triples = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise GraphError(f"{path}:{i}: expected 3 tab-separated fields")
            triples.append(tuple(parts))
    return triples


def load_corpus_jsonl(path) -> list[tuple[str, str]]:
    """One {"subject": ..., "text": ...} object per line."""
    docs = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                docs.append((obj["subject"], obj["text"]))
            except (json.JSONDecodeError, KeyError, TypeError):
                raise GraphError(f"{path}:{i}: expected JSON with 'subject' and 'text'") from None
    return docs


class _EntityMatcher:
    """Longest-match-first, case-insensitive surface matcher over token spans."""

    def __init__(self, vocab: Vocab):
        self.by_first: dict[str, list[tuple[tuple[str, ...], int]]] = {}
        for name in vocab.names:
            toks = tuple(split_tokens(name))
            if not toks:
                continue
            bucket = self.by_first.setdefault(toks[0], [])
            if not any(t == toks for t, _ in bucket):  # first-seen id wins on surface ties
                bucket.append((toks, vocab.id(name)))
        for bucket in self.by_first.values():
            bucket.sort(key=lambda item: -len(item[0]))

    def find(self, tokens: list[str]) -> list[tuple[int, int, int]]:
        """Non-overlapping (start, end, entity_id) spans, left to right."""
        spans = []
        i = 0
        while i < len(tokens):
            hit = None
            for cand, eid in self.by_first.get(tokens[i], ()):
                if tuple(tokens[i : i + len(cand)]) == cand:
                    hit = (i, i + len(cand), eid)
                    break
            if hit:
                spans.append(hit)
                i = hit[1]
            else:
                i += 1
        return spans


def build_from_text_corpus(documents, entity_names) -> RelationGraph:
    """Text-form graph: one relation per (sentence, object-mention) pair.

    Each document is (subject entity name, article text).  A sentence
    mentioning object entity o yields a relation subject->o whose text has
    every subject mention replaced by ``<sub>`` and every o mention by
    ``<obj>``; other entities in the sentence keep their surface form.
    Sentences with no object mention are skipped.  The subject itself need
    not appear in the sentence — the edge still starts at it.
    """
    if not entity_names:
        raise GraphError("entity_names must be non-empty")
    entities = Vocab(entity_names)
    matcher = _EntityMatcher(entities)
    texts: list[str] = []
    text_index: dict[str, int] = {}
    trels: list[tuple[int, int, int]] = []

    def text_id(text: str) -> int:
        if text not in text_index:
            text_index[text] = len(texts)
            texts.append(text)
        return text_index[text]

    for doc_i, (subject, article) in enumerate(documents):
        if subject not in entities:
            raise GraphError(f"document {doc_i}: unknown subject entity {subject!r}")
        sid = entities.id(subject)
        for sentence in _SENT_SPLIT.split(article):
            toks = split_tokens(sentence)
            if not toks:
                continue
            spans = matcher.find(toks)
            objects = sorted({eid for _, _, eid in spans if eid != sid})
            for obj in objects:
                rendered = []
                i = 0
                span_at = {s: (e, eid) for s, e, eid in spans}
                while i < len(toks):
                    if i in span_at:
                        end, eid = span_at[i]
                        if eid == sid:
                            rendered.append(SUB_TOKEN)
                        elif eid == obj:
                            rendered.append(OBJ_TOKEN)
                        else:
                            rendered.extend(toks[i:end])
                        i = end
                    else:
                        rendered.append(toks[i])
                        i += 1
                trels.append((sid, obj, text_id(" ".join(rendered))))
    return RelationGraph(entities, Vocab(), [], texts, trels, form="text")


def add_reverse_relations(g: RelationGraph) -> RelationGraph:
    """Return a graph with reverse closure: predicates double (2k original,
    2k+1 its reverse, named with a ``_rev`` suffix), every label edge gains
    its inverse, and every text relation gains a direction-swapped twin with
    id offset by the original relation count."""
    if g.reversed:
        raise GraphError("graph already has reverse relations")
    predicates = Vocab()
    for name in g.predicates.names:
        predicates.add(name)
        rev = name + "_rev"
        if rev in predicates:
            raise GraphError(f"predicate name collision on {rev!r}")
        predicates.add(rev)
    edges = []
    for h, p, t in zip(g.edge_heads, g.edge_preds, g.edge_tails):
        edges.append((h, 2 * p, t))
        edges.append((t, 2 * p + 1, h))

    texts = list(g.texts)
    text_index = {t: i for i, t in enumerate(texts)}

    def text_id(text: str) -> int:
        if text not in text_index:
            text_index[text] = len(texts)
            texts.append(text)
        return text_index[text]

    # twin of relation i gets id num_text_relations + i
    trels = [(h, t, x) for h, t, x in zip(g.trel_heads, g.trel_tails, g.trel_text)]
    for h, t, x in zip(g.trel_heads, g.trel_tails, g.trel_text):
        trels.append((t, h, text_id(reverse_text(g.texts[x]))))
    return RelationGraph(g.entities, predicates, edges, texts, trels, g.form, reversed_=True)


def mix_label_into_text(g: RelationGraph, triples, fraction: float, seed: int) -> RelationGraph:
    """Blend label triples into a text-form graph as one-word relation texts.

    A ``fraction`` sample of the (name-form) triples becomes text relations
    whose whole text is the predicate name; if the base graph already has
    reverse closure, each sampled triple also contributes the ``_rev``
    one-worder in the opposite direction, preserving closure.
    """
    if g.form != "text":
        raise GraphError(f"can only mix labels into a text-form graph, got {g.form!r}")
    if not 0.0 <= fraction <= 1.0:
        raise GraphError(f"fraction must be in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    triples = list(triples)
    k = int(round(fraction * len(triples)))
    picked = sorted(rng.choice(len(triples), size=k, replace=False)) if k else []

    texts = list(g.texts)
    text_index = {t: i for i, t in enumerate(texts)}

    def text_id(text: str) -> int:
        if text not in text_index:
            text_index[text] = len(texts)
            texts.append(text)
        return text_index[text]

    trels = [(h, t, x) for h, t, x in zip(g.trel_heads, g.trel_tails, g.trel_text)]
    for idx in picked:
        h_name, p_name, t_name = triples[idx]
        h, t = g.entities.id(h_name), g.entities.id(t_name)
        trels.append((h, t, text_id(p_name)))
        if g.reversed:
            trels.append((t, h, text_id(reverse_text(p_name))))
    return RelationGraph(g.entities, Vocab(g.predicates.names), [], texts, trels, "mixed", reversed_=g.reversed)
