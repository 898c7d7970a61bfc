"""Document store, node-memory store and scope-filtered vector indexes.

Persistence is a single JSON-lines append log replayed on open and compacted
into a snapshot on close. Vector search is an exact scan that filters by
scope *before* ranking, so an out-of-scope entry can never be returned.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np

from .errors import EmptyScope, StaleVersion
from .models import Document, NodeMemory, parse_timestamp
from .tree import NodeId

logger = logging.getLogger(__name__)


class View(str, Enum):
    FACET = "facet"
    QA = "qa"
    SUMMARY = "summary"


@dataclass(frozen=True, eq=False)
class VectorEntry:
    vector: np.ndarray
    view: View
    node: NodeId
    item_ref: int
    version: int
    # the memory the vector came from; resolving items through it avoids a
    # version mix if the node is swapped concurrently
    memory: Optional[NodeMemory] = None


@dataclass(frozen=True)
class NodeIndex:
    """One node's memory plus a stacked matrix per view, swapped in as one object."""

    memory: NodeMemory
    matrices: dict

    @classmethod
    def build(cls, mem: NodeMemory) -> "NodeIndex":
        def stack(vecs):
            return np.vstack(vecs) if vecs else np.zeros((0, 0))
        return cls(mem, {
            View.FACET: stack([f.embedding for f in mem.facets]),
            View.QA: stack([p.embedding for p in mem.qa]),
            View.SUMMARY: stack([mem.summary.embedding]),
        })

    @property
    def size(self) -> int:
        return sum(m.shape[0] for m in self.matrices.values())


class MemoryStore:
    def __init__(self, path: Optional[Union[str, Path]] = None, fsync: bool = False):
        self.path = Path(path) if path else None
        self.fsync = fsync
        self.documents: dict[str, Document] = {}
        self.memories: dict[NodeId, NodeMemory] = {}
        self.meta: dict[str, Any] = {}
        self._index: dict[NodeId, NodeIndex] = {}
        self._lock = threading.RLock()
        self._log = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                self._replay()
            self._log = open(self.path, "a", encoding="utf-8")

    # -- log -----------------------------------------------------------------

    def _append(self, record: dict) -> None:
        if self._log is None:
            return
        self._log.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._log.flush()
        if self.fsync:
            os.fsync(self._log.fileno())

    def _replay(self) -> None:
        n = 0
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    # a torn final write; everything before it is intact
                    logger.warning("ignoring unreadable log line %d in %s", n + 1, self.path)
                    continue
                self._apply(rec)
                n += 1
        logger.debug("replayed %d records from %s", n, self.path)

    def _apply(self, rec: dict) -> None:
        op = rec["op"]
        if op == "doc":
            d = rec["doc"]
            self.documents[d["doc_id"]] = Document(d["doc_id"], d["node"],
                                                   parse_timestamp(d["timestamp"]), d["text"])
        elif op == "doc_del":
            self.documents.pop(rec["doc_id"], None)
        elif op == "mem":
            self._install(NodeMemory.from_record(rec["rec"]))
        elif op == "mem_del":
            self._uninstall(rec["node"])
        elif op == "purge":
            self._purge(set(rec["nodes"]))
        elif op == "meta":
            if rec.get("value") is None:
                self.meta.pop(rec["key"], None)
            else:
                self.meta[rec["key"]] = rec["value"]
        else:
            raise ValueError(f"unknown log op {op!r}")

    def compact(self) -> None:
        """Rewrite the log as a snapshot of the current state."""
        if self.path is None:
            return
        with self._lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for key, value in self.meta.items():
                    fh.write(json.dumps({"op": "meta", "key": key, "value": value}) + "\n")
                for d in self.documents.values():
                    fh.write(json.dumps({"op": "doc", "doc": _doc_record(d)}, ensure_ascii=False) + "\n")
                for m in self.memories.values():
                    fh.write(json.dumps({"op": "mem", "rec": m.to_record()}, ensure_ascii=False) + "\n")
            if self._log is not None:
                self._log.close()
            os.replace(tmp, self.path)
            self._log = open(self.path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._log is not None:
            self.compact()
            self._log.close()
            self._log = None

    def __enter__(self) -> "MemoryStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- metadata ------------------------------------------------------------

    def put_meta(self, key: str, value: Any) -> None:
        with self._lock:
            if value is None:
                self.meta.pop(key, None)
            else:
                self.meta[key] = value
            self._append({"op": "meta", "key": key, "value": value})

    # -- documents -----------------------------------------------------------

    def put_document(self, doc: Document) -> Optional[Document]:
        """Insert or replace a document; returns the replaced one, if any."""
        with self._lock:
            prior = self.documents.get(doc.doc_id)
            self.documents[doc.doc_id] = doc
            self._append({"op": "doc", "doc": _doc_record(doc)})
            return prior

    def remove_document(self, doc_id: str) -> Optional[Document]:
        with self._lock:
            prior = self.documents.pop(doc_id, None)
            if prior is not None:
                self._append({"op": "doc_del", "doc_id": doc_id})
            return prior

    def documents_for(self, node: NodeId) -> list[Document]:
        docs = [d for d in list(self.documents.values()) if d.node == node]
        return sorted(docs, key=lambda d: d.sort_key)

    # -- memories ------------------------------------------------------------

    def get_memory(self, node: NodeId) -> Optional[NodeMemory]:
        return self.memories.get(node)

    def version(self, node: NodeId) -> int:
        m = self.memories.get(node)
        return m.version if m is not None else 0

    def put_memory(self, mem: NodeMemory) -> None:
        with self._lock:
            current = self.version(mem.node)
            if mem.version <= current:
                raise StaleVersion(f"{mem.node!r}: version {mem.version} <= stored {current}",
                                   node=mem.node, version=mem.version, stored=current)
            self._install(mem)
            self._append({"op": "mem", "rec": mem.to_record()})

    def _install(self, mem: NodeMemory) -> None:
        self._index[mem.node] = NodeIndex.build(mem)
        self.memories[mem.node] = mem

    def remove_memory(self, node: NodeId) -> bool:
        with self._lock:
            if node not in self.memories:
                return False
            self._uninstall(node)
            self._append({"op": "mem_del", "node": node})
            return True

    def _uninstall(self, node: NodeId) -> int:
        idx = self._index.pop(node, None)
        self.memories.pop(node, None)
        return idx.size if idx is not None else 0

    # -- search --------------------------------------------------------------

    def snapshot(self, scope: Iterable[NodeId]) -> dict[NodeId, NodeIndex]:
        """Current per-node index objects for the in-scope nodes that have one."""
        out = {}
        for node in sorted(set(scope)):
            idx = self._index.get(node)
            if idx is not None:
                out[node] = idx
        return out

    def entries(self, view: View, scope: Iterable[NodeId]) -> list[tuple[NodeId, np.ndarray, NodeMemory]]:
        """(node, matrix, memory) for every in-scope node with vectors in ``view``."""
        view = View(view)
        return [(node, idx.matrices[view], idx.memory)
                for node, idx in self.snapshot(scope).items() if idx.matrices[view].shape[0]]

    def knn(self, view: View, query_vec: np.ndarray, scope: Iterable[NodeId],
            k: int) -> list[tuple[VectorEntry, float]]:
        """Exact top-k by cosine over in-scope entries of one view.

        Ties break on (node id, item_ref) ascending.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        scope = set(scope)
        if not scope:
            raise EmptyScope("scope must contain at least one node")
        view = View(view)
        q = np.asarray(query_vec, dtype=np.float64)
        scored = []
        for node, matrix, mem in self.entries(view, scope):
            sims = np.clip(matrix @ q, -1.0, 1.0)
            for ref, s in enumerate(sims):
                scored.append((-float(s), node, ref, matrix, mem))
        scored.sort(key=lambda t: t[:3])
        return [(VectorEntry(m[ref], view, node, ref, mem.version, mem), -neg)
                for neg, node, ref, m, mem in scored[:k]]

    # -- deletion ------------------------------------------------------------

    def purge_scope(self, nodes: Iterable[NodeId]) -> dict[str, int]:
        nodes = set(nodes)
        with self._lock:
            counts = self._purge(nodes)
            if any(counts.values()):
                self._append({"op": "purge", "nodes": sorted(nodes)})
            return counts

    def _purge(self, nodes: set[NodeId]) -> dict[str, int]:
        doomed = [d for d, doc in self.documents.items() if doc.node in nodes]
        for d in doomed:
            del self.documents[d]
        memories = vectors = 0
        for node in nodes:
            if node in self.memories:
                memories += 1
            vectors += self._uninstall(node)
        return {"documents": len(doomed), "memories": memories, "vectors": vectors}

    def referenced_nodes(self) -> set[NodeId]:
        """Every node id mentioned anywhere in the store."""
        return {d.node for d in self.documents.values()} | set(self.memories) | set(self._index)

    def dump(self, include_versions: bool = True) -> list[dict]:
        out = []
        for node in sorted(self.memories):
            rec = self.memories[node].dump()
            if not include_versions:
                rec.pop("version")
            out.append(rec)
        return out


def _doc_record(d: Document) -> dict:
    return {"doc_id": d.doc_id, "node": d.node, "timestamp": d.timestamp.isoformat(),
            "text": d.text}
