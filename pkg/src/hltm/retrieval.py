"""Identity-scoped multi-signal retrieval over the collapsed tree.

Every node in the scope's subtree, leaf or internal, is one candidate. Three
independent signals score it (facet micro-queries, best answerable question,
concise summary) and each view returns its own top-k; views are not fused.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import prompts
from .backends import (
    EmbeddingBackend,
    ExtractionRequest,
    GenerationBackend,
    Schema,
    generate_structured,
)
from .errors import MalformedResponse, MissingMemory, UnknownNode, UnknownScope
from .memory import normalize_key
from .models import Facet, QAPair, SummaryView, linearize
from .store import MemoryStore, NodeIndex, View
from .tree import MemoryTree, NodeId

logger = logging.getLogger(__name__)

_RULE_KV_RE = re.compile(r'([A-Za-z_][\w\-]*)=(?:"([^"]*)"|([^\s,;?!]+))')


@dataclass
class RetrievalSettings:
    k_facet: int = 5
    k_qa: int = 5
    k_summary: int = 5
    k_inner: int = 3
    query_parser: str = "llm"  # or "rules"


@dataclass
class Query:
    text: str
    scope: NodeId
    parsed_facets: list[tuple[str, str]]
    embedding: np.ndarray


@dataclass
class FacetHit:
    node: NodeId
    facets: list[Facet]
    score: float


@dataclass
class QAHit:
    node: NodeId
    pair: QAPair
    score: float


@dataclass
class SummaryHit:
    node: NodeId
    summary: SummaryView
    score: float


@dataclass
class RetrievalResult:
    facet_hits: list[FacetHit] = field(default_factory=list)
    qa_hits: list[QAHit] = field(default_factory=list)
    summary_hits: list[SummaryHit] = field(default_factory=list)
    pool: set[NodeId] = field(default_factory=set)

    def is_empty(self) -> bool:
        return not (self.facet_hits or self.qa_hits or self.summary_hits)

    def nodes(self) -> set[NodeId]:
        return ({h.node for h in self.facet_hits} | {h.node for h in self.qa_hits}
                | {h.node for h in self.summary_hits})

    def to_dict(self) -> dict:
        return {
            "facet": [{"node": h.node, "score": h.score,
                       "facets": [f.linearized for f in h.facets]} for h in self.facet_hits],
            "qa": [{"node": h.node, "score": h.score, "question": h.pair.question,
                    "answer": h.pair.answer, "source": h.pair.source_doc} for h in self.qa_hits],
            "summary": [{"node": h.node, "score": h.score, "concise": h.summary.concise}
                        for h in self.summary_hits],
        }


def rule_parse(text: str) -> list[tuple[str, str]]:
    out = []
    for m in _RULE_KV_RE.finditer(text):
        out.append((m.group(1), m.group(2) if m.group(2) is not None else m.group(3)))
    return out


def facet_score_from_sims(sims: np.ndarray, k: int) -> float:
    """Apply the facet formula to a |F_v| x |F_q| similarity matrix.

    Each micro-query (column) contributes the sum of its top-k node-facet
    similarities; the total is divided by k·|F_q| even when |F_v| < k.
    """
    n_facets, n_micro = sims.shape
    if n_facets == 0 or n_micro == 0:
        return 0.0
    take = min(k, n_facets)
    top = -np.sort(-sims, axis=0)[:take]
    return float(top.sum() / (k * n_micro))


class Retriever:
    def __init__(self, tree: MemoryTree, store: MemoryStore, generator: GenerationBackend,
                 embedder: EmbeddingBackend, settings: Optional[RetrievalSettings] = None):
        self.tree = tree
        self.store = store
        self.generator = generator
        self.embedder = embedder
        self.settings = settings or RetrievalSettings()

    # -- query preparation ---------------------------------------------------

    def parse_query_facets(self, text: str) -> list[tuple[str, str]]:
        if not text.strip():
            raise ValueError("query text must be non-empty")
        if self.settings.query_parser == "rules":
            pairs = rule_parse(text)
        else:
            req = ExtractionRequest(prompts.QUERY_PARSE_SYSTEM, text, Schema.FACET_JSON,
                                    task="parse_query")
            try:
                pairs = list(generate_structured(self.generator, req).items())
            except MalformedResponse as exc:
                logger.warning("query facet parse failed, skipping facet view: %s", exc)
                return []
        return [(normalize_key(k), v.strip()) for k, v in pairs if normalize_key(k) and v.strip()]

    def make_query(self, text: str, scope: NodeId) -> Query:
        if scope not in self.tree:
            raise UnknownScope(f"unknown scope {scope!r}", scope=scope)
        facets = self.parse_query_facets(text)
        return Query(text, scope, facets, self.embedder.embed(text))

    def _micro_matrix(self, fq: list[tuple[str, str]]) -> np.ndarray:
        return np.vstack(self.embedder.embed_many([linearize(k, v) for k, v in fq]))

    def _index(self, v: NodeId) -> Optional[NodeIndex]:
        if v not in self.tree:
            raise UnknownNode(f"unknown node {v!r}", node=v)
        return self.store.snapshot([v]).get(v)

    # -- per-node scores -----------------------------------------------------

    def score_facet(self, fq: list[tuple[str, str]], v: NodeId, k: Optional[int] = None) -> float:
        k = self.settings.k_inner if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        idx = self._index(v)
        if not fq or idx is None or idx.matrices[View.FACET].shape[0] == 0:
            return 0.0
        sims = np.clip(idx.matrices[View.FACET] @ self._micro_matrix(fq).T, -1.0, 1.0)
        return facet_score_from_sims(sims, k)

    def score_qa(self, q: Query, v: NodeId) -> float:
        idx = self._index(v)
        if idx is None or idx.matrices[View.QA].shape[0] == 0:
            return 0.0
        return float(np.clip(idx.matrices[View.QA] @ q.embedding, -1.0, 1.0).max())

    def score_summary(self, q: Query, v: NodeId) -> float:
        idx = self._index(v)
        if idx is None:
            raise MissingMemory(f"{v!r} has no indexed memory", node=v)
        return float(np.clip(idx.matrices[View.SUMMARY][0] @ q.embedding, -1.0, 1.0))

    # -- retrieval -----------------------------------------------------------

    def retrieve(self, q: Query, k_facet: Optional[int] = None, k_qa: Optional[int] = None,
                 k_summary: Optional[int] = None, k_inner: Optional[int] = None) -> RetrievalResult:
        s = self.settings
        k_facet = s.k_facet if k_facet is None else k_facet
        k_qa = s.k_qa if k_qa is None else k_qa
        k_summary = s.k_summary if k_summary is None else k_summary
        k_inner = s.k_inner if k_inner is None else k_inner
        if q.scope not in self.tree:
            raise UnknownScope(f"unknown scope {q.scope!r}", scope=q.scope)
        pool = self.tree.subtree(q.scope)
        snap = self.store.snapshot(pool)
        result = RetrievalResult(pool=pool)

        if q.parsed_facets and k_facet > 0:
            micro = self._micro_matrix(q.parsed_facets)
            scored = []
            for node, idx in snap.items():
                fm = idx.matrices[View.FACET]
                if fm.shape[0] == 0:
                    continue
                sims = np.clip(fm @ micro.T, -1.0, 1.0)
                scored.append((facet_score_from_sims(sims, k_inner), node, idx))
            scored.sort(key=lambda t: (-t[0], t[1]))
            result.facet_hits = [FacetHit(node, list(idx.memory.facets), score)
                                 for score, node, idx in scored[:k_facet]]

        if k_qa > 0:
            pairs = []
            for node, idx in snap.items():
                qm = idx.matrices[View.QA]
                if qm.shape[0] == 0:
                    continue
                for ref, sim in enumerate(np.clip(qm @ q.embedding, -1.0, 1.0)):
                    pairs.append((float(sim), node, ref, idx))
            pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
            result.qa_hits = [QAHit(node, idx.memory.qa[ref], sim)
                              for sim, node, ref, idx in pairs[:k_qa]]

        if k_summary > 0:
            sums = [(float(np.clip(idx.matrices[View.SUMMARY][0] @ q.embedding, -1.0, 1.0)), node, idx)
                    for node, idx in snap.items()]
            sums.sort(key=lambda t: (-t[0], t[1]))
            result.summary_hits = [SummaryHit(node, idx.memory.summary, sim)
                                   for sim, node, idx in sums[:k_summary]]
        return result
