"""Answer synthesis over retrieved memories, with node-id citations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from . import prompts
from .backends import ExtractionRequest, GenerationBackend, Schema, count_tokens, generate_structured
from .errors import EmptyContext
from .retrieval import Query, RetrievalResult
from .tree import NodeId

logger = logging.getLogger(__name__)

_VIEW_ORDER = {"facet": 0, "qa": 1, "summary": 2, "chunk": 3}


@dataclass
class ContextItem:
    node: NodeId
    view: str
    score: float
    body: str

    def render(self) -> str:
        return prompts.render_item(self.node, self.view, self.score, self.body)


@dataclass
class Answer:
    rationale: str
    answer: str
    citations: list[NodeId]
    context_nodes: list[NodeId] = field(default_factory=list)
    dropped_citations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"answer": self.answer, "rationale": self.rationale, "citations": self.citations}


def context_items(ctx: RetrievalResult) -> list[ContextItem]:
    """Facet hits, then QA hits, then summary hits; score-descending within a view."""
    items = [ContextItem(h.node, "facet", h.score, "\n".join(f.linearized for f in h.facets))
             for h in ctx.facet_hits if h.facets]
    items += [ContextItem(h.node, "qa", h.score, f"Q: {h.pair.question}\nA: {h.pair.answer}")
              for h in ctx.qa_hits]
    items += [ContextItem(h.node, "summary", h.score, h.summary.detailed)
              for h in ctx.summary_hits]
    items.sort(key=lambda it: (_VIEW_ORDER[it.view], -it.score))
    return items


def cap_context(items: Sequence[ContextItem], token_cap: int) -> list[ContextItem]:
    """Drop the lowest-scoring items until the bodies fit ``token_cap`` (one item always stays)."""
    kept = list(items)
    total = sum(count_tokens(it.body) for it in kept)
    while total > token_cap and len(kept) > 1:
        worst = min(range(len(kept)), key=lambda i: (kept[i].score, -i))
        total -= count_tokens(kept[worst].body)
        del kept[worst]
    return kept


def answer_from_items(generator: GenerationBackend, query_text: str,
                      items: Sequence[ContextItem], token_cap: int = 4000) -> Answer:
    items = cap_context(items, token_cap)
    if not items:
        raise EmptyContext("no retrieved context to answer from")
    user = prompts.ANSWER_USER.format(query=query_text,
                                      context="\n".join(it.render() for it in items))
    req = ExtractionRequest(prompts.ANSWER_SYSTEM, user, Schema.ANSWER_JSON, task="answer")
    parsed = generate_structured(generator, req)

    in_context = list(dict.fromkeys(it.node for it in items))
    allowed = set(in_context)
    citations, dropped = [], []
    for c in parsed["citation"]:
        if c in allowed:
            if c not in citations:
                citations.append(c)
        else:
            dropped.append(c)
    if dropped:
        logger.warning("dropping citations not present in the context: %s", dropped)
    return Answer(parsed["rationale"], parsed["answer"], citations, in_context, dropped)


def generate_answer(generator: GenerationBackend, q: Query, ctx: RetrievalResult,
                    token_cap: int = 4000) -> Answer:
    """Exactly one generate() call (plus one retry on an unparseable reply)."""
    if ctx.is_empty():
        raise EmptyContext("retrieval returned nothing for this scope")
    return answer_from_items(generator, q.text, context_items(ctx), token_cap)
