"""Records shared across the memory pipeline: documents and per-node memories."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from .tree import NodeId


def parse_timestamp(value) -> datetime:
    if isinstance(value, datetime):
        ts = value
    elif value is None or value == "":
        ts = datetime(1970, 1, 1, tzinfo=timezone.utc)
    else:
        ts = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


@dataclass(frozen=True)
class Document:
    doc_id: str
    node: NodeId
    timestamp: datetime
    text: str

    @property
    def sort_key(self) -> tuple:
        return (self.timestamp, self.doc_id)

    def to_dict(self, business_key: Optional[str] = None) -> dict:
        return {"doc_id": self.doc_id, "node_business_key": business_key or self.node,
                "timestamp": self.timestamp.isoformat(), "text": self.text}


def _vec(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    v.setflags(write=False)
    return v


@dataclass(eq=False)
class Facet:
    key: str
    value: str
    embedding: np.ndarray
    source_node: NodeId

    @property
    def linearized(self) -> str:
        return linearize(self.key, self.value)


def linearize(key: str, value: str) -> str:
    return f"{key}: {value}"


@dataclass(eq=False)
class QAPair:
    question: str
    answer: str
    source_doc: str
    embedding: np.ndarray
    source_node: NodeId


@dataclass(eq=False)
class SummaryView:
    detailed: str
    concise: str
    embedding: np.ndarray
    source_node: NodeId


@dataclass(eq=False)
class NodeMemory:
    """The multi-view memory of one node: facets, answerable QA pairs, summary."""

    node: NodeId
    facets: list[Facet]
    qa: list[QAPair]
    summary: SummaryView
    version: int = 1
    built_from: str = ""

    def content(self) -> dict:
        """Version-free view of the memory; what equivalence checks compare."""
        return {
            "node": self.node,
            "facets": [{"key": f.key, "value": f.value} for f in self.facets],
            "qa": [{"question": p.question, "answer": p.answer, "source": p.source_doc}
                   for p in self.qa],
            "summary": {"detailed": self.summary.detailed, "concise": self.summary.concise},
        }

    def dump(self) -> dict:
        """JSON memory-dump record ``{"node","version","facets","qa","summary"}``."""
        out = self.content()
        out["version"] = self.version
        out["built_from"] = self.built_from
        return out

    def to_record(self) -> dict:
        """Full persistence record including embeddings."""
        return {
            "node": self.node,
            "version": self.version,
            "built_from": self.built_from,
            "facets": [[f.key, f.value, f.embedding.tolist()] for f in self.facets],
            "qa": [[p.question, p.answer, p.source_doc, p.embedding.tolist()] for p in self.qa],
            "summary": [self.summary.detailed, self.summary.concise,
                        self.summary.embedding.tolist()],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "NodeMemory":
        node = rec["node"]
        detailed, concise, s_emb = rec["summary"]
        return cls(
            node=node,
            facets=[Facet(k, v, _vec(e), node) for k, v, e in rec["facets"]],
            qa=[QAPair(q, a, s, _vec(e), node) for q, a, s, e in rec["qa"]],
            summary=SummaryView(detailed, concise, _vec(s_emb), node),
            version=rec["version"],
            built_from=rec.get("built_from", ""),
        )
