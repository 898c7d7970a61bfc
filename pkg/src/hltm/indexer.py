"""Full and incremental index builds, dirty-set tracking, equivalence checks."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional, Sequence

from .aggregation import aggregate_upward
from .backends import map_in_context
from .errors import MalformedDump, NotALeaf
from .memory import MemoryBuilder
from .store import MemoryStore
from .tree import MemoryTree, NodeId

if TYPE_CHECKING:
    from .adaptation import QueryPatternProfile

logger = logging.getLogger(__name__)


class Reason(str, Enum):
    CREATED = "Created"
    MODIFIED = "Modified"
    DELETED = "Deleted"


@dataclass
class DirtyEntry:
    reason: Reason
    # for deleted leaves: the ancestor chain at deletion time, nearest first
    former_ancestors: list[NodeId] = field(default_factory=list)


class DirtySet:
    """Leaves created, modified or deleted since the last cycle (V*)."""

    def __init__(self) -> None:
        self.entries: dict[NodeId, DirtyEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, leaf: object) -> bool:
        return leaf in self.entries

    @property
    def leaves(self) -> set[NodeId]:
        return set(self.entries)

    def mark(self, tree: MemoryTree, leaf: NodeId, reason: Reason,
             former_ancestors: Sequence[NodeId] = ()) -> None:
        reason = Reason(reason)
        if reason is Reason.DELETED:
            if leaf in tree and not tree.is_leaf(leaf):
                raise NotALeaf(f"{leaf!r} is not a leaf", node=leaf)
            ancestors = list(former_ancestors) or (tree.ancestor_path(leaf) if leaf in tree else [])
            self.entries[leaf] = DirtyEntry(Reason.DELETED, ancestors)
            return
        if not tree.is_leaf(leaf):
            raise NotALeaf(f"{leaf!r} is not a leaf", node=leaf)
        prior = self.entries.get(leaf)
        if prior is None:
            self.entries[leaf] = DirtyEntry(reason)
        elif prior.reason is Reason.DELETED:
            # deleted and re-created within one cycle
            self.entries[leaf] = DirtyEntry(Reason.CREATED, prior.former_ancestors)
        elif prior.reason is Reason.MODIFIED and reason is Reason.CREATED:
            prior.reason = Reason.CREATED

    def clear(self) -> None:
        self.entries.clear()

    def to_json(self) -> dict:
        return {leaf: {"reason": e.reason.value, "former_ancestors": e.former_ancestors}
                for leaf, e in sorted(self.entries.items())}

    @classmethod
    def from_json(cls, data: Optional[dict]) -> "DirtySet":
        ds = cls()
        for leaf, e in (data or {}).items():
            ds.entries[leaf] = DirtyEntry(Reason(e["reason"]), list(e.get("former_ancestors", [])))
        return ds


@dataclass
class IndexReport:
    mode: str
    leaves_built: list[NodeId] = field(default_factory=list)
    aggregated: list[NodeId] = field(default_factory=list)
    purged: list[NodeId] = field(default_factory=list)
    llm_calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = 0.0

    @property
    def nodes_built(self) -> int:
        return len(self.leaves_built) + len(self.aggregated)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "nodes_built": self.nodes_built,
                "leaves_built": self.leaves_built, "aggregated": self.aggregated,
                "purged": self.purged, "llm_calls": self.llm_calls,
                "prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens,
                "wall_time": round(self.wall_time, 6)}


def _rebuild_leaves(tree: MemoryTree, store: MemoryStore, builder: MemoryBuilder,
                    leaves: Sequence[NodeId], profile, workers: int) -> list[NodeId]:
    """Rebuild leaf memories in parallel; leaves without documents lose their memory."""

    def one(leaf: NodeId) -> Optional[NodeId]:
        docs = store.documents_for(leaf)
        if not docs:
            store.remove_memory(leaf)
            return None
        mem = builder.build_leaf_memory(leaf, docs, profile, version=store.version(leaf) + 1)
        store.put_memory(mem)
        return leaf

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return [leaf for leaf in map_in_context(pool, one, leaves) if leaf is not None]


def _finish(report: IndexReport, builder: MemoryBuilder, before, t0: float) -> IndexReport:
    delta = builder.generator.usage.snapshot() - before
    report.llm_calls = delta.llm_calls
    report.prompt_tokens = delta.prompt_tokens
    report.completion_tokens = delta.completion_tokens
    report.wall_time = time.perf_counter() - t0
    return report


def full_index(tree: MemoryTree, store: MemoryStore, builder: MemoryBuilder,
               profile: Optional["QueryPatternProfile"] = None, workers: int = 1) -> IndexReport:
    """Rebuild every leaf, then every internal node bottom-up."""
    t0 = time.perf_counter()
    before = builder.generator.usage.snapshot()
    report = IndexReport("full")
    stale = set(store.memories) - set(tree.nodes)
    if stale:
        store.purge_scope(stale)
        report.purged = sorted(stale)
    leaves = tree.leaves()
    report.leaves_built = _rebuild_leaves(tree, store, builder, leaves, profile, workers)
    report.aggregated = aggregate_upward(tree, store, builder, leaves, profile, workers)
    return _finish(report, builder, before, t0)


def incremental_index(tree: MemoryTree, store: MemoryStore, builder: MemoryBuilder,
                      dirty: DirtySet, profile: Optional["QueryPatternProfile"] = None,
                      workers: int = 1) -> IndexReport:
    """Rebuild dirty leaves and only their ancestor paths; clears ``dirty``."""
    t0 = time.perf_counter()
    before = builder.generator.usage.snapshot()
    report = IndexReport("incremental")
    rebuild: list[NodeId] = []
    extra: list[NodeId] = []
    gone: set[NodeId] = set()
    for leaf in tree.preorder():
        entry = dirty.entries.get(leaf)
        if entry is None:
            continue
        if tree.is_leaf(leaf):
            rebuild.append(leaf)
        else:
            extra.append(leaf)  # gained children since it was marked
        extra.extend(entry.former_ancestors)
    for leaf, entry in sorted(dirty.entries.items()):
        if leaf not in tree:
            gone.add(leaf)
            survivor = next((a for a in entry.former_ancestors if a in tree), None)
            if survivor is not None:
                extra.append(survivor)
    if gone:
        store.purge_scope(gone)
        report.purged = sorted(gone)
    report.leaves_built = _rebuild_leaves(tree, store, builder, rebuild, profile, workers)
    report.aggregated = aggregate_upward(tree, store, builder, rebuild, profile, workers,
                                         extra=[n for n in extra if n in tree])
    dirty.clear()
    return _finish(report, builder, before, t0)


# -- equivalence -------------------------------------------------------------------

def make_dump(tree: MemoryTree, store: MemoryStore, include_versions: bool = True) -> dict:
    return {"tree": tree.to_json(), "memories": store.dump(include_versions)}


@dataclass
class EquivalenceReport:
    identical: bool
    diffs: list[dict]

    def to_dict(self) -> dict:
        return {"identical": self.identical, "diff_count": len(self.diffs), "diffs": self.diffs}


def _validate(dump: dict, label: str) -> tuple[dict, dict]:
    try:
        topo = {n["id"]: (n["business_key"], n["level"], n["parent"]) for n in dump["tree"]["nodes"]}
        mems = {}
        for m in dump["memories"]:
            mems[m["node"]] = {
                "facets": {f["key"]: f["value"] for f in m["facets"]},
                "qa": {q["question"]: (q["answer"], q.get("source", "")) for q in m["qa"]},
                "summary": (m["summary"]["detailed"], m["summary"]["concise"]),
            }
    except (KeyError, TypeError) as exc:
        raise MalformedDump(f"dump {label} is not a memory dump: missing {exc}") from None
    return topo, mems


def check_equivalence(dump_a: dict, dump_b: dict) -> EquivalenceReport:
    """Compare topology and per-node view contents; versions and ordering are ignored."""
    topo_a, mem_a = _validate(dump_a, "a")
    topo_b, mem_b = _validate(dump_b, "b")
    diffs: list[dict] = []
    for nid in sorted(set(topo_a) | set(topo_b)):
        if topo_a.get(nid) != topo_b.get(nid):
            diffs.append({"node": nid, "field": "topology", "a": topo_a.get(nid), "b": topo_b.get(nid)})
    for nid in sorted(set(mem_a) | set(mem_b)):
        a, b = mem_a.get(nid), mem_b.get(nid)
        if a is None or b is None:
            diffs.append({"node": nid, "field": "memory", "a": a is not None, "b": b is not None})
            continue
        for key in sorted(set(a["facets"]) | set(b["facets"])):
            if a["facets"].get(key) != b["facets"].get(key):
                diffs.append({"node": nid, "field": f"facet:{key}",
                              "a": a["facets"].get(key), "b": b["facets"].get(key)})
        for q in sorted(set(a["qa"]) | set(b["qa"])):
            if a["qa"].get(q) != b["qa"].get(q):
                diffs.append({"node": nid, "field": f"qa:{q}", "a": a["qa"].get(q), "b": b["qa"].get(q)})
        for i, part in enumerate(("detailed", "concise")):
            if a["summary"][i] != b["summary"][i]:
                diffs.append({"node": nid, "field": f"summary:{part}",
                              "a": a["summary"][i], "b": b["summary"][i]})
    return EquivalenceReport(not diffs, diffs)
