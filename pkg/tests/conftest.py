from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hltm.backends import GenerationBackend, MockEmbedder, MockGenerator  # noqa: E402
from hltm.engine import Engine  # noqa: E402
from hltm.memory import MemoryBuilder  # noqa: E402
from hltm.tree import MemoryTree  # noqa: E402

# account r -> seats s1, s2 -> projects p1, p2 (under s1) and p3, p4 (under s2)
SMALL_DOCS = {
    "p1": "title: software engineer\nlocation: SF Bay Area\nbudget: 150k USD",
    "p2": "title: data scientist\nlocation: New York NY",
    "p3": "title: product designer\nlocation: Austin TX",
    "p4": "title: sales director\nlocation: Seattle WA\nseniority: senior",
}


class ScriptedGenerator(GenerationBackend):
    """Returns canned responses in order (the last one repeats)."""

    def __init__(self, responses):
        super().__init__()
        self.responses = list(responses)
        self.requests = []

    def _complete(self, req):
        self.requests.append(req)
        text = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if not isinstance(text, str):
            text = json.dumps(text)
        return text, 1, 1


def small_tree() -> tuple[MemoryTree, dict[str, str]]:
    t = MemoryTree()
    ids = {"r": t.create_node("acct-1", "account")}
    ids["s1"] = t.create_node("seat-1", "seat", ids["r"])
    ids["s2"] = t.create_node("seat-2", "seat", ids["r"])
    for p, s in (("p1", "s1"), ("p2", "s1"), ("p3", "s2"), ("p4", "s2")):
        ids[p] = t.create_node(f"proj-{p[1]}", "project", ids[s])
    return t, ids


def small_engine(**kw) -> tuple[Engine, dict[str, str]]:
    tree, ids = small_tree()
    eng = Engine(tree=tree, **kw)
    eng.ingest([{"doc_id": f"{p}-doc", "node_business_key": ids[p],
                 "timestamp": "2026-01-01T00:00:00Z", "text": text}
                for p, text in SMALL_DOCS.items()])
    return eng, ids


@pytest.fixture
def builder() -> MemoryBuilder:
    return MemoryBuilder(MockGenerator(), MockEmbedder())


@pytest.fixture
def indexed():
    eng, ids = small_engine()
    eng.full_index()
    yield eng, ids
    eng.close()
