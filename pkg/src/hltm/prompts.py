"""Prompt templates and the block formats the prompts carry.

Indexing prompts follow the facet / QA / summary / answering agents; the
aggregation and query-parsing prompts have no published template and are
written here in the same style.  Document, child-memory and context blocks
are the wire format between the engine and a generation backend; the mock
backend parses them back, so render and parse live side by side.
"""

from __future__ import annotations

import html
import json
import re
from typing import Iterable, Optional, Sequence

FACET_SYSTEM = """You are a helpful assistant specializing in extracting structured information from the input text data. Only retain key information; no need to include all details (e.g., detailed activities).
Return a JSON object with key "facets" and value as a flattened dictionary, in which the key is the facet name and the value is the corresponding extracted facet value in string format; no nested information.
{
 "facets": {
        <facet_name>: <facet_value>,
        <facet_name>: <facet_value>,
        <facet_name>: <facet_value>,
        ...
    }
}"""

QA_SYSTEM = """Analyze text, produce 5-10 self-contained Q&A pairs covering only the most critical info, and include a rationale explaining the result.
Rules
- Q&A must be explicit (no pronouns/ambiguous refs), concise, and essential-only.
Output (single JSON)
{
  "rationale": "...",
  "question_answers": [
    { "question": "...", "answer": "...", "source": "<doc_id>" },
    ...
  ]
}"""

DETAILED_SUMMARY_SYSTEM = """You are a helpful assistant. Summarize this input document to retain key information.
Please include the document ID(s) in the output when provided."""

CONCISE_SUMMARY_SYSTEM = """You are a helpful assistant. You are provided with the following data, please generate a single-sentence summary of this data, only retain key information."""

ANSWER_SYSTEM = """You are a helpful assistant that generates an answer from a provided context.
Output Format: a JSON object of this schema:
{
  "rationale": str, # rationale of generating the answer,
  "answer": str, # the answer to the query
  "citation": list[str], # a ranked list of node IDs provided in the context.
}"""

ANSWER_USER = """Here is the query to be answered:
<query>
{query}
</query>

Below is the context for answering the query:
<context>
{context}
</context>"""

QUERY_PARSE_SYSTEM = """You are a helpful assistant that decomposes a search query into structured constraints.
Return a JSON object with key "facets" whose value is a flattened dictionary mapping a facet name (e.g. title, location, skill) to the value the query asks about, in string format; no nested information. Return an empty dictionary when the query states no such constraint.
{
 "facets": {
        <facet_name>: <facet_value>,
        ...
    }
}"""

_AGGREGATE_RULES = """The input holds the memories of several child entities that belong to one parent entity. Build the parent-level memory:
- group semantically similar evidence across children;
- merge redundant content and reconcile conflicts, preferring evidence supported by more children; when tied keep both values with their child counts;
- keep only information that helps describe the parent scope as a whole."""

AGGREGATE_FACETS_SYSTEM = _AGGREGATE_RULES + """
Return a JSON object with key "facets" and value as a flattened dictionary from facet name to a merged facet value in string format; no nested information."""

AGGREGATE_QA_SYSTEM = _AGGREGATE_RULES + """
Return a single JSON object {"rationale": "...", "question_answers": [{"question": "...", "answer": "...", "source": "<doc_id>"}, ...]} keeping self-contained, non-redundant question-answer pairs."""

AGGREGATE_SUMMARY_SYSTEM = _AGGREGATE_RULES + """
Write a detailed summary paragraph of the parent scope. Keep the document ID(s) that support each statement."""


def emphasis_suffix(facet_names: Sequence[str]) -> str:
    if not facet_names:
        return ""
    return "\nPay particular attention to these facets: " + ", ".join(facet_names) + "."


def pattern_suffix(patterns: Sequence[str]) -> str:
    if not patterns:
        return ""
    return "\nPrioritize questions matching these patterns: " + "; ".join(patterns) + "."


# -- document blocks ---------------------------------------------------------

_DOC_RE = re.compile(r'<document id="([^"]*)">\n(.*?)\n</document>', re.S)


def render_documents(docs: Iterable) -> str:
    return "\n".join(
        f'<document id="{html.escape(d.doc_id, quote=True)}">\n{d.text}\n</document>' for d in docs
    )


def parse_documents(text: str) -> list[tuple[str, str]]:
    return [(html.unescape(m.group(1)), m.group(2)) for m in _DOC_RE.finditer(text)]


# -- child memory blocks -----------------------------------------------------

def render_children(children: Iterable) -> str:
    payload = []
    for m in children:
        payload.append({
            "node": m.node,
            "facets": [[f.key, f.value] for f in m.facets],
            "qa": [[p.question, p.answer, p.source_doc] for p in m.qa],
            "summary": {"detailed": m.summary.detailed, "concise": m.summary.concise},
        })
    return json.dumps({"children": payload}, ensure_ascii=False, indent=1)


def parse_children(text: str) -> list[dict]:
    return json.loads(text)["children"]


# -- answer context blocks ---------------------------------------------------

_ITEM_RE = re.compile(
    r'<item node="([^"]*)" view="([^"]*)" score="([^"]*)">\n(.*?)\n</item>', re.S)
_QUERY_RE = re.compile(r"<query>\n(.*?)\n</query>", re.S)


def render_item(node: str, view: str, score: float, body: str) -> str:
    return (f'<item node="{html.escape(node, quote=True)}" view="{view}" '
            f'score="{score:.4f}">\n{body}\n</item>')


def parse_items(text: str) -> list[tuple[str, str, float, str]]:
    return [(html.unescape(m.group(1)), m.group(2), float(m.group(3)), m.group(4))
            for m in _ITEM_RE.finditer(text)]


def parse_query_block(text: str) -> Optional[str]:
    m = _QUERY_RE.search(text)
    return m.group(1) if m else None


JUDGE_SYSTEM = """You grade answers. Given a question, a reference answer and a candidate answer, decide whether the candidate states the same fact as the reference. Reply with the single word "correct" or "incorrect"."""

_JUDGE_RE = re.compile(r"<(question|reference|candidate)>\n(.*?)\n</\1>", re.S)


def render_judge(question: str, reference: str, candidate: str) -> str:
    return "\n".join(f"<{tag}>\n{text}\n</{tag}>" for tag, text in
                     (("question", question), ("reference", reference), ("candidate", candidate)))


def parse_judge(text: str) -> dict[str, str]:
    return {m.group(1): m.group(2) for m in _JUDGE_RE.finditer(text)}
