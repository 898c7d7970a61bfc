"""Builds node memories M_v = (facets, answerable QA, summary) from documents."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

from . import prompts
from .backends import (
    EmbeddingBackend,
    ExtractionRequest,
    GenerationBackend,
    MockGenerator,
    Schema,
    count_tokens,
    generate_structured,
    merge_values,
)
from .errors import EmptyDocuments
from .models import Document, Facet, NodeMemory, QAPair, SummaryView, linearize
from .tree import NodeId

if TYPE_CHECKING:
    from .adaptation import QueryPatternProfile

logger = logging.getLogger(__name__)


def normalize_key(key: str) -> str:
    return " ".join(key.strip().lower().split())


def content_hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def profile_hints(profile: Optional["QueryPatternProfile"]) -> tuple[list[str], list[str]]:
    if profile is None:
        return [], []
    return profile.facet_name_list(), profile.pattern_list()


def merge_facet_pairs(pairs: Sequence[tuple[str, str]]) -> list[tuple[str, str]]:
    """Normalize keys; keys that collide after normalization get merged values."""
    grouped: dict[str, list[str]] = {}
    for k, v in pairs:
        nk = normalize_key(k)
        if nk and v.strip():
            grouped.setdefault(nk, []).append(v.strip())
    return [(k, vs[0] if len(set(vs)) == 1 else merge_values(vs)) for k, vs in grouped.items()]


@dataclass
class BuildSettings:
    max_facets: int = 64
    max_qa: int = 32
    doc_token_budget: int = 8000
    prune_min_children: int = 0


class MemoryBuilder:
    """Runs the extraction prompts against a backend and embeds every view."""

    def __init__(self, generator: GenerationBackend, embedder: EmbeddingBackend,
                 settings: Optional[BuildSettings] = None):
        self.generator = generator
        self.embedder = embedder
        self.settings = settings or BuildSettings()

    # -- batching ------------------------------------------------------------

    def _batches(self, docs: Sequence[Document]) -> list[list[Document]]:
        """Pack documents into prompt batches under the token budget.

        A single oversized document is cut into line-aligned pieces that keep
        its doc_id. In the common case everything fits in one batch.
        """
        budget = self.settings.doc_token_budget
        pieces: list[Document] = []
        for d in docs:
            if count_tokens(d.text) <= budget:
                pieces.append(d)
                continue
            chunk: list[str] = []
            size = 0
            for line in d.text.splitlines():
                n = count_tokens(line)
                if chunk and size + n > budget:
                    pieces.append(Document(d.doc_id, d.node, d.timestamp, "\n".join(chunk)))
                    chunk, size = [], 0
                chunk.append(line)
                size += n
            if chunk:
                pieces.append(Document(d.doc_id, d.node, d.timestamp, "\n".join(chunk)))
        batches: list[list[Document]] = [[]]
        size = 0
        for p in pieces:
            n = count_tokens(p.text)
            if batches[-1] and size + n > budget:
                batches.append([])
                size = 0
            batches[-1].append(p)
            size += n
        return batches

    @staticmethod
    def _require(docs: Sequence[Document]) -> list[Document]:
        if not docs:
            raise EmptyDocuments("at least one document is required")
        return sorted(docs, key=lambda d: d.sort_key)

    # -- the three extractors ------------------------------------------------

    def _facet_pairs(self, docs, hints) -> list[tuple[str, str]]:
        system = prompts.FACET_SYSTEM + prompts.emphasis_suffix(hints)
        pairs: list[tuple[str, str]] = []
        for batch in self._batches(docs):
            req = ExtractionRequest(system, prompts.render_documents(batch), Schema.FACET_JSON,
                                    task="facets")
            pairs.extend(generate_structured(self.generator, req).items())
        return merge_facet_pairs(pairs)

    def extract_facets(self, docs: Sequence[Document], hints: Optional[Sequence[str]] = None,
                       node: Optional[NodeId] = None) -> list[Facet]:
        docs = self._require(docs)
        node = node or docs[0].node
        pairs = self._facet_pairs(docs, list(hints or []))[: self.settings.max_facets]
        return self._facets(pairs, node)

    def _facets(self, pairs: Sequence[tuple[str, str]], node: NodeId) -> list[Facet]:
        vecs = self.embedder.embed_many([linearize(k, v) for k, v in pairs]) if pairs else []
        return [Facet(k, v, e, node) for (k, v), e in zip(pairs, vecs)]

    def generate_qa(self, docs: Sequence[Document], patterns: Optional[Sequence[str]] = None,
                    node: Optional[NodeId] = None) -> list[QAPair]:
        docs = self._require(docs)
        node = node or docs[0].node
        system = prompts.QA_SYSTEM + prompts.pattern_suffix(list(patterns or []))
        raw: list[dict] = []
        for batch in self._batches(docs):
            req = ExtractionRequest(system, prompts.render_documents(batch), Schema.QA_JSON,
                                    task="qa")
            got = generate_structured(self.generator, req)
            if not isinstance(self.generator, MockGenerator) and not 5 <= len(got) <= 10:
                logger.warning("QA generation returned %d pairs for %s (expected 5-10)",
                               len(got), node)
            raw.extend(got)
        return self._qa(raw[: self.settings.max_qa], node)

    def _qa(self, raw: Sequence[dict], node: NodeId) -> list[QAPair]:
        vecs = self.embedder.embed_many([p["question"] for p in raw]) if raw else []
        return [QAPair(p["question"], p["answer"], p["source"], e, node)
                for p, e in zip(raw, vecs)]

    def summarize(self, docs: Sequence[Document], hints: Optional[Sequence[str]] = None,
                  node: Optional[NodeId] = None) -> SummaryView:
        docs = self._require(docs)
        node = node or docs[0].node
        suffix = prompts.emphasis_suffix(list(hints or []))
        parts = []
        for batch in self._batches(docs):
            req = ExtractionRequest(prompts.DETAILED_SUMMARY_SYSTEM + suffix,
                                    prompts.render_documents(batch), Schema.FREE_TEXT,
                                    task="detailed_summary")
            parts.append(generate_structured(self.generator, req))
        return self.condense("\n".join(parts), node, hints)

    def condense(self, detailed: str, node: NodeId,
                 hints: Optional[Sequence[str]] = None, task: str = "concise_summary") -> SummaryView:
        req = ExtractionRequest(prompts.CONCISE_SUMMARY_SYSTEM
                                + prompts.emphasis_suffix(list(hints or [])),
                                detailed, Schema.FREE_TEXT, task=task)
        concise = generate_structured(self.generator, req)
        return SummaryView(detailed, concise, self.embedder.embed(concise), node)

    # -- leaves --------------------------------------------------------------

    def build_leaf_memory(self, node: NodeId, docs: Sequence[Document],
                          profile: Optional["QueryPatternProfile"] = None,
                          version: int = 1) -> NodeMemory:
        docs = self._require(docs)
        hints, patterns = profile_hints(profile)
        facets = self.extract_facets(docs, hints, node)
        qa = self.generate_qa(docs, patterns, node)
        summary = self.summarize(docs, hints, node)
        built_from = content_hash({
            "docs": [[d.doc_id, d.timestamp.isoformat(), d.text] for d in docs],
            "hints": hints, "patterns": patterns,
        })
        return NodeMemory(node, facets, qa, summary, version=version, built_from=built_from)
