"""Schema-aligned memory tree: topology, identity scopes and ancestor paths.

Node ids are derived from the chain of ``level:business_key`` labels from the
root, so a node rebuilt from the same business entity always gets the same id.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import (
    AmbiguousKey,
    DuplicateBusinessKey,
    LeafPromotion,
    NotALeaf,
    TopologyError,
    UnknownNode,
    UnknownParent,
)

NodeId = str


@dataclass
class TreeNode:
    id: NodeId
    business_key: str
    level_label: str
    parent: Optional[NodeId] = None
    children: list[NodeId] = field(default_factory=list)
    doc_ids: list[str] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "business_key": self.business_key,
            "level": self.level_label,
            "parent": self.parent,
        }


def default_node_id(business_key: str, level_label: str, parent: Optional[NodeId]) -> NodeId:
    label = f"{level_label}:{business_key}"
    return label if parent is None else f"{parent}/{label}"


class MemoryTree:
    """Rooted tree T = (V, E) whose edges follow the business ownership chain.

    Reads are lock-free; every mutation goes through ``self.lock`` so callers
    get a single-writer contract. Children keep insertion order and every
    traversal below follows it.
    """

    def __init__(self) -> None:
        self.nodes: dict[NodeId, TreeNode] = {}
        self.root: Optional[NodeId] = None
        self.lock = threading.RLock()

    # -- queries -----------------------------------------------------------

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[TreeNode]:
        return iter(self.nodes.values())

    def get(self, node_id: NodeId) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id!r}", node=node_id) from None

    def is_leaf(self, node_id: NodeId) -> bool:
        return self.get(node_id).is_leaf

    def leaves(self) -> list[NodeId]:
        return [n for n in self.preorder() if self.nodes[n].is_leaf]

    def internal_nodes(self) -> list[NodeId]:
        return [n for n in self.preorder() if not self.nodes[n].is_leaf]

    def preorder(self, start: Optional[NodeId] = None) -> list[NodeId]:
        if start is None:
            if self.root is None:
                return []
            start = self.root
        self.get(start)
        out: list[NodeId] = []
        stack = [start]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return out

    def subtree(self, node_id: NodeId) -> set[NodeId]:
        """Return ``{v} ∪ Desc(v)``."""
        return set(self.preorder(node_id))

    def ancestor_path(self, node_id: NodeId) -> list[NodeId]:
        """Return ``[parent(v), ..., root]``; empty for the root."""
        path: list[NodeId] = []
        cur = self.get(node_id).parent
        while cur is not None:
            path.append(cur)
            cur = self.nodes[cur].parent
        return path

    def depth(self, node_id: NodeId) -> int:
        return len(self.ancestor_path(node_id))

    def height(self) -> int:
        return max((self.depth(n) for n in self.nodes), default=-1) + 1

    def find_by_key(self, business_key: str) -> list[NodeId]:
        return [n.id for n in self.nodes.values() if n.business_key == business_key]

    def resolve(self, key: str) -> NodeId:
        """Map a node id or a globally unambiguous business key to a node id."""
        if key in self.nodes:
            return key
        matches = self.find_by_key(key)
        if not matches:
            raise UnknownNode(f"no node with id or business key {key!r}", key=key)
        if len(matches) > 1:
            raise AmbiguousKey(f"business key {key!r} names {len(matches)} nodes; use a node id",
                               key=key, nodes=sorted(matches))
        return matches[0]

    # -- mutations ---------------------------------------------------------

    def create_node(
        self,
        business_key: str,
        level_label: str,
        parent: Optional[NodeId] = None,
        node_id: Optional[NodeId] = None,
    ) -> NodeId:
        if not business_key:
            raise TopologyError("business_key must be non-empty")
        with self.lock:
            if parent is None:
                if self.root is not None:
                    raise TopologyError("tree already has a root", root=self.root)
            else:
                if parent not in self.nodes:
                    raise UnknownParent(f"unknown parent {parent!r}", parent=parent)
                pnode = self.nodes[parent]
                if pnode.doc_ids:
                    raise LeafPromotion(
                        f"{parent!r} holds documents and cannot gain children", node=parent)
                for cid in pnode.children:
                    c = self.nodes[cid]
                    if c.business_key == business_key and c.level_label == level_label:
                        raise DuplicateBusinessKey(
                            f"{level_label} {business_key!r} already exists under {parent!r}",
                            business_key=business_key, parent=parent)
            nid = node_id or default_node_id(business_key, level_label, parent)
            if nid in self.nodes:
                raise DuplicateBusinessKey(f"node id {nid!r} already exists", node=nid)
            self.nodes[nid] = TreeNode(nid, business_key, level_label, parent)
            if parent is None:
                self.root = nid
            else:
                self.nodes[parent].children.append(nid)
            return nid

    def delete_subtree(self, node_id: NodeId) -> int:
        with self.lock:
            doomed = self.preorder(node_id)
            parent = self.nodes[node_id].parent
            if parent is not None:
                self.nodes[parent].children.remove(node_id)
            else:
                self.root = None
            for nid in doomed:
                del self.nodes[nid]
            return len(doomed)

    def attach_doc(self, node_id: NodeId, doc_id: str) -> None:
        with self.lock:
            node = self.get(node_id)
            if not node.is_leaf:
                raise NotALeaf(f"documents attach to leaves only; {node_id!r} has children",
                               node=node_id)
            if doc_id not in node.doc_ids:
                node.doc_ids.append(doc_id)

    def detach_doc(self, node_id: NodeId, doc_id: str) -> None:
        with self.lock:
            node = self.get(node_id)
            if doc_id in node.doc_ids:
                node.doc_ids.remove(doc_id)

    # -- (de)serialization -------------------------------------------------

    def to_json(self) -> dict:
        return {"nodes": [self.nodes[n].to_dict() for n in self.preorder()]}

    @classmethod
    def from_json(cls, data: dict) -> "MemoryTree":
        """Build a tree from ``{"nodes": [{"id", "business_key", "level", "parent"}, ...]}``.

        Entries may be listed in any order; sibling order follows list order.
        """
        try:
            pending = list(data["nodes"])
        except (KeyError, TypeError):
            raise TopologyError("tree document must have a 'nodes' list") from None
        tree = cls()
        while pending:
            deferred = []
            for entry in pending:
                parent = entry.get("parent")
                if parent is None or parent in tree.nodes:
                    tree.create_node(entry["business_key"], entry["level"], parent,
                                     node_id=entry.get("id"))
                else:
                    deferred.append(entry)
            if len(deferred) == len(pending):
                missing = sorted({e.get("parent") for e in deferred})
                raise UnknownParent(f"unresolvable parents {missing}", parents=missing)
            pending = deferred
        return tree

    @classmethod
    def load(cls, path) -> "MemoryTree":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def copy(self) -> "MemoryTree":
        clone = MemoryTree.from_json(self.to_json())
        for n in self.nodes.values():
            clone.nodes[n.id].doc_ids = list(n.doc_ids)
        return clone

    def bottom_up_levels(self, nodes: Iterable[NodeId]) -> list[list[NodeId]]:
        """Group ``nodes`` by depth, deepest first, preserving preorder within a level."""
        wanted = set(nodes)
        by_depth: dict[int, list[NodeId]] = {}
        for nid in self.preorder():
            if nid in wanted:
                by_depth.setdefault(self.depth(nid), []).append(nid)
        return [by_depth[d] for d in sorted(by_depth, reverse=True)]

