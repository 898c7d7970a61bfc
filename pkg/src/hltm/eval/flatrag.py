"""Flat chunk-level RAG comparator.

Every document is one chunk embedded on its raw text. Queries take the global
top-k chunks by cosine with no scope filter and answer in a single call, so
this system has no structural isolation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from ..answer import Answer, ContextItem, answer_from_items
from ..backends import EmbeddingBackend, GenerationBackend, track_usage
from ..models import Document
from ..tree import NodeId


@dataclass
class FlatResponse:
    answer: Answer
    chunks: list[tuple[str, NodeId, float]]
    usage: dict
    latency: float


class FlatRAG:
    def __init__(self, generator: GenerationBackend, embedder: EmbeddingBackend, k: int = 5,
                 token_cap: int = 4000):
        self.generator = generator
        self.embedder = embedder
        self.k = k
        self.token_cap = token_cap
        self.docs: list[Document] = []
        self.matrix = np.zeros((0, embedder.dim))

    def index(self, docs: Iterable[Document]) -> None:
        self.docs = sorted(docs, key=lambda d: d.sort_key)
        vecs = self.embedder.embed_many([d.text for d in self.docs])
        self.matrix = np.vstack(vecs) if vecs else np.zeros((0, self.embedder.dim))

    def query(self, text: str, scope: Optional[NodeId] = None) -> FlatResponse:
        """``scope`` is accepted for interface parity and deliberately ignored."""
        t0 = time.perf_counter()
        with track_usage() as usage:
            q = self.embedder.embed(text)
            sims = self.matrix @ q
            # stable sort keeps document order on ties
            order = np.argsort(-sims, kind="stable")[: self.k]
            items = [ContextItem(self.docs[i].node, "chunk", float(sims[i]), self.docs[i].text)
                     for i in order]
            ans = answer_from_items(self.generator, text, items, self.token_cap)
        chunks = [(self.docs[i].doc_id, self.docs[i].node, float(sims[i])) for i in order]
        return FlatResponse(ans, chunks, usage.to_dict(), time.perf_counter() - t0)
