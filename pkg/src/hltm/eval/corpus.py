"""Synthetic multi-tenant hiring corpora with planted key-value facts.

Every project leaf carries documents made of ``key: value`` lines drawn from
a seeded RNG, so gold answers are known exactly.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

from ..tree import MemoryTree, NodeId

FACT_POOLS: dict[str, list[str]] = {
    "location": ["San Francisco Bay Area", "Austin TX", "New York NY", "Seattle WA",
                 "Remote US", "Chicago IL", "Boston MA", "Denver CO"],
    "title": ["software engineer", "data scientist", "product designer", "sales director",
              "site reliability engineer", "recruiting coordinator", "security analyst"],
    "budget": ["120k USD", "150k USD", "180k USD", "210k USD", "95k USD"],
    "seniority": ["junior", "mid level", "senior", "staff", "principal"],
    "team": ["payments", "search ranking", "growth marketing", "infrastructure", "mobile apps"],
    "hiring manager": ["Dana Reyes", "Priya Natarajan", "Omar Haddad", "Lena Fischer",
                       "Kenji Watanabe"],
    "start date": ["January 2027", "March 2027", "June 2027", "September 2027"],
    "headcount": ["one opening", "two openings", "three openings", "five openings"],
    "skill": ["Python", "Kubernetes", "distributed systems", "user research", "negotiation"],
    "work mode": ["onsite", "hybrid", "fully remote"],
}

NOTES = [
    "Notes from the weekly sync were shared with the interview panel.",
    "The intake call covered sourcing channels and outreach cadence.",
    "Candidate pipeline looks healthy after the latest sourcing push.",
    "Feedback from the hiring panel arrived late this week.",
]

LEVELS = ("account", "seat", "project")
ROOT_LEVEL = "platform"


@dataclass
class CorpusSpec:
    tenants: int = 3
    seats: int = 3
    projects: int = 5
    docs_per_project: int = 3
    facts_per_doc: int = 2
    seed: int = 0
    start: str = "2026-01-01T00:00:00+00:00"

    @classmethod
    def load(cls, path) -> "CorpusSpec":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown corpus spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Corpus:
    spec: CorpusSpec
    tree: MemoryTree
    documents: list[dict]
    planted: dict[NodeId, dict[str, str]] = field(default_factory=dict)

    @property
    def projects(self) -> list[NodeId]:
        return list(self.planted)

    def owner_of(self) -> dict[str, NodeId]:
        """Entity name (node id or business key) -> owning node."""
        out: dict[str, NodeId] = {}
        for node in self.tree:
            out[node.id] = node.id
            out[node.business_key] = node.id
        return out

    def write(self, out_dir) -> dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"tree": out / "tree.json", "documents": out / "documents.jsonl",
                 "queries": out / "queries.jsonl", "planted": out / "planted.json"}
        paths["tree"].write_text(json.dumps(self.tree.to_json(), indent=1), encoding="utf-8")
        paths["documents"].write_text("".join(json.dumps(d) + "\n" for d in self.documents),
                                      encoding="utf-8")
        queries = planted_queries(self) + leakage_queries(self)
        paths["queries"].write_text("".join(json.dumps(q) + "\n" for q in queries), encoding="utf-8")
        paths["planted"].write_text(json.dumps(self.planted, indent=1), encoding="utf-8")
        return {k: str(v) for k, v in paths.items()}


def make_doc_text(facts: list[tuple[str, str]], rng: random.Random) -> str:
    lines = [f"{k}: {v}" for k, v in facts]
    lines.append(rng.choice(NOTES))
    return "\n".join(lines)


def plant_project(rng: random.Random, docs: int, facts_per_doc: int) -> list[list[tuple[str, str]]]:
    """Per-document fact lists; keys are distinct across the whole project."""
    n_keys = min(len(FACT_POOLS), docs * facts_per_doc)
    keys = rng.sample(sorted(FACT_POOLS), n_keys)
    per_doc: list[list[tuple[str, str]]] = [[] for _ in range(docs)]
    for i, key in enumerate(keys):
        per_doc[i % docs].append((key, rng.choice(FACT_POOLS[key])))
    return per_doc


def generate_corpus(spec: Optional[CorpusSpec] = None) -> Corpus:
    spec = spec or CorpusSpec()
    rng = random.Random(spec.seed)
    t0 = datetime.fromisoformat(spec.start).astimezone(timezone.utc)
    tree = MemoryTree()
    root: Optional[NodeId] = None
    if spec.tenants > 1:
        root = tree.create_node("hltm", ROOT_LEVEL)
    documents: list[dict] = []
    planted: dict[NodeId, dict[str, str]] = {}
    tick = 0
    for t in range(spec.tenants):
        acct = tree.create_node(f"t{t}", "account", root)
        for s in range(spec.seats):
            seat = tree.create_node(f"t{t}-s{s}", "seat", acct)
            for p in range(spec.projects):
                pkey = f"t{t}-s{s}-p{p}"
                proj = tree.create_node(pkey, "project", seat)
                planted[proj] = {}
                for d, facts in enumerate(plant_project(rng, spec.docs_per_project,
                                                        spec.facts_per_doc)):
                    tick += 1
                    documents.append({
                        "doc_id": f"{pkey}-d{d}", "node_business_key": pkey,
                        "timestamp": (t0 + timedelta(minutes=tick)).isoformat(),
                        "text": make_doc_text(facts, rng),
                    })
                    planted[proj].update(facts)
    return Corpus(spec, tree, documents, planted)


def planted_queries(corpus: Corpus) -> list[dict]:
    """One retrieval-style question per planted fact, scoped to its project."""
    out = []
    for proj, facts in corpus.planted.items():
        for key, value in sorted(facts.items()):
            out.append({"kind": "retrieval", "text": f"What is the {key} for this project?",
                        "scope": proj, "gold_answer": value, "gold_entities": [proj]})
    return out


def leakage_queries(corpus: Corpus, n: int = 50, seed: Optional[int] = None) -> list[dict]:
    """Questions naming a random project anywhere, issued under a random scope."""
    rng = random.Random(corpus.spec.seed + 1 if seed is None else seed)
    nodes = [n.id for n in corpus.tree if n.parent is not None] or [corpus.tree.root]
    projects = corpus.projects
    out = []
    for _ in range(n):
        target = rng.choice(projects)
        key, value = rng.choice(sorted(corpus.planted[target].items()))
        bkey = corpus.tree.get(target).business_key
        out.append({"kind": "leakage", "text": f"What is the {key} for {bkey}?",
                    "scope": rng.choice(nodes), "gold_answer": value, "gold_entities": [target]})
    return out


def next_project_key(tree: MemoryTree, seat: NodeId) -> str:
    base = tree.get(seat).business_key
    used = {tree.get(c).business_key for c in tree.get(seat).children}
    i = 0
    while f"{base}-p{i}" in used or tree.find_by_key(f"{base}-p{i}"):
        i += 1
    return f"{base}-p{i}"


def apply_random_mutations(engine, rng: random.Random, n: int, docs_per_project: int = 3,
                           facts_per_doc: int = 2, clock: Optional[datetime] = None) -> list[dict]:
    """Create, modify or delete project leaves through ``engine``; returns a log."""
    clock = clock or datetime(2026, 6, 1, tzinfo=timezone.utc)
    log = []
    for i in range(n):
        tree = engine.tree
        leaves = [x for x in tree.leaves() if tree.get(x).level_label == "project"]
        seats = [x.id for x in tree if x.level_label == "seat"]
        op = rng.choice(["create", "modify", "modify", "delete"])
        if op == "delete" and len(leaves) <= 2:
            op = "modify"
        if op == "modify" and not leaves:
            op = "create"
        stamp = (clock + timedelta(minutes=i)).isoformat()
        if op == "create":
            seat = rng.choice(seats)
            key = next_project_key(tree, seat)
            nid = engine.create_node(key, "project", seat)
            docs = [{"doc_id": f"{key}-d{d}", "node_business_key": nid, "timestamp": stamp,
                     "text": make_doc_text(facts, rng)}
                    for d, facts in enumerate(plant_project(rng, docs_per_project, facts_per_doc))]
            engine.ingest(docs)
            log.append({"op": "create", "node": nid})
        elif op == "modify":
            leaf = rng.choice(leaves)
            doc_ids = list(tree.get(leaf).doc_ids)
            facts = plant_project(rng, 1, facts_per_doc)[0]
            if doc_ids and rng.random() < 0.5:
                doc_id = rng.choice(doc_ids)
            else:
                doc_id = f"{tree.get(leaf).business_key}-m{i}"
            engine.ingest([{"doc_id": doc_id, "node_business_key": leaf, "timestamp": stamp,
                            "text": make_doc_text(facts, rng)}])
            log.append({"op": "modify", "node": leaf, "doc_id": doc_id})
        else:
            leaf = rng.choice(leaves)
            engine.delete_node(leaf)
            log.append({"op": "delete", "node": leaf})
    return log
