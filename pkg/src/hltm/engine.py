"""The memory engine: one tree, one store, one backend pair.

``Engine`` is what the CLI and HTTP service wrap. It owns the single-writer
lock: topology changes, ingestion and index cycles are serialized; queries
only read per-node snapshots and run concurrently.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Union

from . import indexer
from .adaptation import QueryPatternProfile, mine_profile
from .aggregation import aggregate_upward
from .answer import Answer, generate_answer
from .backends import (
    EmbeddingBackend,
    GenerationBackend,
    HTTPEmbedder,
    HTTPGenerator,
    MockEmbedder,
    MockGenerator,
    track_usage,
)
from .config import Config
from .errors import NotALeaf, NotApproved, UnknownProfile
from .indexer import DirtySet, IndexReport, Reason
from .memory import BuildSettings, MemoryBuilder
from .models import Document, NodeMemory, parse_timestamp
from .retrieval import RetrievalResult, RetrievalSettings, Retriever
from .store import MemoryStore
from .tree import MemoryTree, NodeId

logger = logging.getLogger(__name__)


def make_backends(config: Config) -> tuple[GenerationBackend, EmbeddingBackend]:
    if config.backend == "mock":
        return MockGenerator(), MockEmbedder(dim=int(config["embedding"]["dim"]))
    g, e = config["generation"], config["embedding"]
    return (HTTPGenerator(g["base_url"], g["model"], g["api_key_env"], g["timeout"], g["temperature"]),
            HTTPEmbedder(e["base_url"], e["model"], int(e["dim"]), e["api_key_env"], e["timeout"],
                         int(e["batch_size"])))


@dataclass
class QueryResponse:
    answer: Answer
    hits: RetrievalResult
    scope: NodeId
    usage: dict
    latency: float
    parsed_facets: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = self.answer.to_dict()
        out.update({"scope": self.scope, "hits": self.hits.to_dict(), "usage": self.usage,
                    "parsed_facets": [list(p) for p in self.parsed_facets],
                    "latency_ms": round(self.latency * 1000, 3)})
        return out


class Engine:
    def __init__(self, config: Optional[Config] = None, *, tree: Optional[MemoryTree] = None,
                 store: Optional[MemoryStore] = None,
                 generator: Optional[GenerationBackend] = None,
                 embedder: Optional[EmbeddingBackend] = None):
        self.config = config or Config()
        if generator is None or embedder is None:
            g, e = make_backends(self.config)
            generator = generator or g
            embedder = embedder or e
        self.generator = generator
        self.embedder = embedder
        self.store = store if store is not None else MemoryStore(self.config["store_path"])
        m, a = self.config["memory"], self.config["aggregation"]
        self.builder = MemoryBuilder(generator, embedder, BuildSettings(
            max_facets=int(m["max_facets"]), max_qa=int(m["max_qa"]),
            doc_token_budget=int(m["doc_token_budget"]),
            prune_min_children=int(a["prune_min_children"])))
        r = self.config["retrieval"]
        self.retrieval_settings = RetrievalSettings(int(r["k_facet"]), int(r["k_qa"]),
                                                    int(r["k_summary"]), int(r["k_inner"]),
                                                    r["query_parser"])
        self.workers = int(self.config["indexing"]["workers"])
        self._write_lock = threading.RLock()
        self._index_lock = threading.Lock()

        if tree is not None:
            self.tree = tree
            self._save_tree()
        elif "tree" in self.store.meta:
            self.tree = MemoryTree.from_json(self.store.meta["tree"])
        else:
            self.tree = MemoryTree()
        for doc in sorted(self.store.documents.values(), key=lambda d: d.sort_key):
            if doc.node in self.tree:
                self.tree.attach_doc(doc.node, doc.doc_id)
        self.dirty = DirtySet.from_json(self.store.meta.get("dirty"))
        self.retriever = Retriever(self.tree, self.store, generator, embedder,
                                   self.retrieval_settings)

    @classmethod
    def from_config_file(cls, path) -> "Engine":
        return cls(Config.load(path))

    def close(self) -> None:
        self.store.close()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- persistence helpers -----------------------------------------------------

    def _save_tree(self) -> None:
        self.store.put_meta("tree", self.tree.to_json())

    def _save_dirty(self) -> None:
        self.store.put_meta("dirty", self.dirty.to_json())

    # -- topology ------------------------------------------------------------------

    def load_tree(self, data: Union[dict, MemoryTree]) -> None:
        """Replace an empty topology with ``data`` (tree JSON or a MemoryTree)."""
        with self._write_lock:
            if len(self.tree):
                raise ValueError("engine already has a topology; delete it before loading another")
            new = data if isinstance(data, MemoryTree) else MemoryTree.from_json(data)
            self.tree.nodes, self.tree.root = new.nodes, new.root
            self._save_tree()

    def create_node(self, business_key: str, level_label: str,
                    parent: Optional[str] = None) -> NodeId:
        with self._write_lock:
            pid = self.tree.resolve(parent) if parent is not None else None
            nid = self.tree.create_node(business_key, level_label, pid)
            self.dirty.mark(self.tree, nid, Reason.CREATED)
            self._save_tree()
            self._save_dirty()
            return nid

    def delete_node(self, key: str) -> dict:
        """Remove a subtree from topology and storage; its leaves become Deleted."""
        with self._write_lock:
            nid = self.tree.resolve(key)
            removed_nodes = self.tree.preorder(nid)
            leaves = [n for n in removed_nodes if self.tree.is_leaf(n)]
            ancestors = {leaf: self.tree.ancestor_path(leaf) for leaf in leaves}
            for leaf in leaves:
                self.dirty.mark(self.tree, leaf, Reason.DELETED, ancestors[leaf])
            for n in removed_nodes:
                if not self.tree.is_leaf(n):
                    self.dirty.entries.pop(n, None)
            count = self.tree.delete_subtree(nid)
            counts = self.store.purge_scope(removed_nodes)
            self._save_tree()
            self._save_dirty()
            return {"node": nid, "nodes": count, **counts}

    # -- ingestion -----------------------------------------------------------------

    def _to_document(self, rec: Union[dict, Document]) -> Document:
        if isinstance(rec, Document):
            return rec
        node_ref = rec.get("node") or rec.get("node_business_key")
        if not rec.get("doc_id") or node_ref is None or not str(rec.get("text", "")).strip():
            raise ValueError("document needs doc_id, node_business_key and non-empty text")
        return Document(str(rec["doc_id"]), self.tree.resolve(str(node_ref)),
                        parse_timestamp(rec.get("timestamp")), str(rec["text"]))

    def ingest(self, records: Iterable[Union[dict, Document]]) -> list[NodeId]:
        """Store documents and mark their leaves dirty; returns the marked leaves."""
        touched: list[NodeId] = []
        with self._write_lock:
            docs = [self._to_document(r) for r in records]
            for doc in docs:
                if not self.tree.is_leaf(doc.node):
                    raise NotALeaf(f"document {doc.doc_id!r} targets non-leaf {doc.node!r}",
                                   node=doc.node)
            for doc in docs:
                prior = self.store.put_document(doc)
                if prior is not None and prior.node != doc.node and prior.node in self.tree:
                    self.tree.detach_doc(prior.node, doc.doc_id)
                    self.dirty.mark(self.tree, prior.node, Reason.MODIFIED)
                    touched.append(prior.node)
                self.tree.attach_doc(doc.node, doc.doc_id)
                self.dirty.mark(self.tree, doc.node, Reason.MODIFIED)
                touched.append(doc.node)
            self._save_dirty()
        return list(dict.fromkeys(touched))

    def remove_document(self, doc_id: str) -> Optional[NodeId]:
        with self._write_lock:
            prior = self.store.remove_document(doc_id)
            if prior is None or prior.node not in self.tree:
                return None
            self.tree.detach_doc(prior.node, doc_id)
            self.dirty.mark(self.tree, prior.node, Reason.MODIFIED)
            self._save_dirty()
            return prior.node

    # -- indexing ------------------------------------------------------------------

    def full_index(self) -> IndexReport:
        with self._index_lock, self._write_lock:
            report = indexer.full_index(self.tree, self.store, self.builder, self.profile,
                                        self.workers)
            self.dirty.clear()
            self._save_dirty()
            return report

    def incremental_index(self) -> IndexReport:
        with self._index_lock, self._write_lock:
            if not len(self.dirty):
                return IndexReport("incremental")
            report = indexer.incremental_index(self.tree, self.store, self.builder, self.dirty,
                                               self.profile, self.workers)
            self._save_dirty()
            return report

    def aggregate_upward(self, from_leaves: Iterable[NodeId]) -> list[NodeId]:
        with self._write_lock:
            return aggregate_upward(self.tree, self.store, self.builder, list(from_leaves),
                                    self.profile, self.workers)

    # -- querying ------------------------------------------------------------------

    def query(self, text: str, scope: str, k: Optional[dict] = None) -> QueryResponse:
        """Parse, retrieve within ``scope``'s subtree and answer: two generate() calls."""
        t0 = time.perf_counter()
        scope_id = self.tree.resolve(scope)
        k = k or {}
        with track_usage() as usage:
            q = self.retriever.make_query(text, scope_id)
            hits = self.retriever.retrieve(q, k.get("k_facet"), k.get("k_qa"), k.get("k_summary"),
                                           k.get("k_inner"))
            ans = generate_answer(self.generator, q, hits,
                                  int(self.config["answer"]["context_token_cap"]))
        return QueryResponse(ans, hits, scope_id, usage.to_dict(), time.perf_counter() - t0,
                             q.parsed_facets)

    # -- observability -------------------------------------------------------------

    def memory(self, key: str) -> Optional[NodeMemory]:
        return self.store.get_memory(self.tree.resolve(key))

    def dump(self, include_versions: bool = True) -> dict:
        return indexer.make_dump(self.tree, self.store, include_versions)

    # -- adaptation ----------------------------------------------------------------

    @property
    def profiles(self) -> dict[str, QueryPatternProfile]:
        return {pid: QueryPatternProfile.from_dict(d)
                for pid, d in self.store.meta.get("profiles", {}).items()}

    @property
    def profile(self) -> Optional[QueryPatternProfile]:
        pid = self.store.meta.get("active_profile")
        if pid is None:
            return None
        return self.profiles.get(pid)

    def _save_profile(self, profile: QueryPatternProfile) -> None:
        profiles = dict(self.store.meta.get("profiles", {}))
        profiles[profile.id] = profile.to_dict()
        self.store.put_meta("profiles", profiles)

    def mine_profile(self, queries: Iterable[tuple[str, Any]], min_support: Optional[int] = None,
                     window=None) -> QueryPatternProfile:
        a = self.config["adaptation"]
        profile = mine_profile(list(queries), self.retriever.parse_query_facets, window,
                               int(min_support or a["min_support"]), int(a["window_days"]),
                               int(a["window_max_queries"]))
        with self._write_lock:
            self._save_profile(profile)
        return profile

    def _get_profile(self, pid: str) -> QueryPatternProfile:
        try:
            return self.profiles[pid]
        except KeyError:
            raise UnknownProfile(f"no profile {pid!r}", profile=pid) from None

    def approve_profile(self, pid: str) -> QueryPatternProfile:
        with self._write_lock:
            profile = self._get_profile(pid)
            profile.approved = True
            self._save_profile(profile)
            return profile

    def apply_profile(self, pid: Optional[str]) -> Optional[QueryPatternProfile]:
        """Make ``pid`` the profile used by later builds; ``None`` clears it."""
        with self._write_lock:
            if pid is None:
                self.store.put_meta("active_profile", None)
                return None
            profile = self._get_profile(pid)
            if self.config["adaptation"]["review_mode"] and not profile.approved:
                raise NotApproved(f"profile {pid!r} needs approval before it is applied",
                                  profile=pid)
            self.store.put_meta("active_profile", pid)
            return profile


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{i}: invalid JSON ({exc.msg})") from None
    return rows
