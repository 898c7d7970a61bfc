"""Bottom-up composition of child memories into parent memories."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

from . import prompts
from .backends import (
    ExtractionRequest,
    Schema,
    generate_structured,
    map_in_context,
    normalize_question,
)
from .errors import EmptyChildren
from .memory import MemoryBuilder, content_hash, merge_facet_pairs, profile_hints
from .models import NodeMemory
from .tree import MemoryTree, NodeId

if TYPE_CHECKING:
    from .adaptation import QueryPatternProfile
    from .store import MemoryStore

logger = logging.getLogger(__name__)


def _prune(facets: list[tuple[str, str]], qa: list[dict], children: Sequence[NodeMemory],
           min_children: int) -> tuple[list[tuple[str, str]], list[dict]]:
    """Drop facet values and questions that occur in fewer than ``min_children`` children."""
    value_support: dict[tuple[str, str], int] = {}
    question_support: dict[str, int] = {}
    for child in children:
        parts = {(f.key, p.strip()) for f in child.facets for p in f.value.split("; ")}
        for key in parts:
            value_support[key] = value_support.get(key, 0) + 1
        for q in {normalize_question(p.question) for p in child.qa}:
            question_support[q] = question_support.get(q, 0) + 1
    kept_facets = []
    for k, v in facets:
        parts = [p for p in v.split("; ") if value_support.get((k, p.strip()), 0) >= min_children]
        if parts:
            kept_facets.append((k, "; ".join(parts)))
    kept_qa = [p for p in qa
               if question_support.get(normalize_question(p["question"]), 0) >= min_children]
    return kept_facets, kept_qa


def aggregate_children(builder: MemoryBuilder, parent: NodeId, children: Sequence[NodeMemory],
                       profile: Optional["QueryPatternProfile"] = None,
                       version: int = 1) -> NodeMemory:
    """Compose a parent memory from its children's memories (4 generate() calls)."""
    if not children:
        raise EmptyChildren(f"{parent!r} has no child memories to aggregate", node=parent)
    hints, patterns = profile_hints(profile)
    emphasis = prompts.emphasis_suffix(hints)
    user = prompts.render_children(children)
    settings = builder.settings

    raw_facets = generate_structured(builder.generator, ExtractionRequest(
        prompts.AGGREGATE_FACETS_SYSTEM + emphasis, user, Schema.FACET_JSON,
        task="aggregate_facets"))
    raw_qa = generate_structured(builder.generator, ExtractionRequest(
        prompts.AGGREGATE_QA_SYSTEM + prompts.pattern_suffix(patterns), user, Schema.QA_JSON,
        task="aggregate_qa"))
    detailed = generate_structured(builder.generator, ExtractionRequest(
        prompts.AGGREGATE_SUMMARY_SYSTEM + emphasis, user, Schema.FREE_TEXT,
        task="aggregate_summary"))

    facets = merge_facet_pairs(list(raw_facets.items()))
    if settings.prune_min_children > 1:
        facets, raw_qa = _prune(facets, raw_qa, children, settings.prune_min_children)
    facets = builder._facets(facets[: settings.max_facets], parent)
    qa = builder._qa(raw_qa[: settings.max_qa], parent)
    summary = builder.condense(detailed, parent, hints, task="aggregate_concise")
    built_from = content_hash({"children": [c.content() for c in children],
                               "hints": hints, "patterns": patterns})
    return NodeMemory(parent, facets, qa, summary, version=version, built_from=built_from)


def rebuild_set(tree: MemoryTree, from_leaves: Iterable[NodeId]) -> set[NodeId]:
    nodes: set[NodeId] = set()
    for leaf in from_leaves:
        nodes.update(tree.ancestor_path(leaf))
    return nodes


def aggregate_upward(tree: MemoryTree, store: "MemoryStore", builder: MemoryBuilder,
                     from_leaves: Iterable[NodeId],
                     profile: Optional["QueryPatternProfile"] = None,
                     workers: int = 1, extra: Iterable[NodeId] = ()) -> list[NodeId]:
    """Rebuild every ancestor of ``from_leaves`` exactly once, children before parents.

    ``extra`` adds internal nodes whose subtree changed without a surviving
    leaf to start from (e.g. the former parent of a deleted leaf). Returns the
    rebuild order. A parent none of whose children hold a memory loses its own.
    """
    targets = rebuild_set(tree, from_leaves)
    for nid in extra:
        if nid in tree:
            targets.add(nid)
            targets.update(tree.ancestor_path(nid))

    def rebuild(nid: NodeId) -> None:
        kids = [m for c in tree.get(nid).children if (m := store.get_memory(c)) is not None]
        if not kids:
            store.remove_memory(nid)
            return
        mem = aggregate_children(builder, nid, kids, profile, version=store.version(nid) + 1)
        store.put_memory(mem)

    order: list[NodeId] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for level in tree.bottom_up_levels(targets):
            map_in_context(pool, rebuild, level)
            order.extend(level)
    return order
