import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hltm.backends import MockEmbedder, MockGenerator
from hltm.errors import MissingMemory, UnknownScope
from hltm.memory import MemoryBuilder
from hltm.models import Document, parse_timestamp
from hltm.retrieval import Retriever, RetrievalSettings, facet_score_from_sims, rule_parse
from hltm.store import MemoryStore
from hltm.tree import MemoryTree
from conftest import ScriptedGenerator, small_engine
import oracles

TS = parse_timestamp("2026-01-01T00:00:00Z")
WORDS = ["alpha", "beta", "gamma", "location", "title", "austin", "remote", "senior", "sf"]


def single_node(text):
    tree = MemoryTree()
    n = tree.create_node("x", "project")
    store = MemoryStore()
    b = MemoryBuilder(MockGenerator(), MockEmbedder())
    if text is not None:
        store.put_memory(b.build_leaf_memory(n, [Document("d", n, TS, text)]))
    return Retriever(tree, store, MockGenerator(), MockEmbedder()), n, store


# -- query parsing ------------------------------------------------------------------

def test_worked_example_decomposition():
    reply = {"facets": {"title": "software engineer", "location": "San Francisco Bay Area"}}
    r, n, _ = single_node("a: b")
    r.generator = ScriptedGenerator([reply])
    got = r.parse_query_facets(
        "typical workplace for hiring software engineers in the San Francisco Bay Area?")
    assert got == [("title", "software engineer"), ("location", "San Francisco Bay Area")]


def test_mock_parse_rule_and_empty():
    r, _, _ = single_node("a: b")
    assert r.parse_query_facets("jobs with location=SF please") == [("location", "SF")]
    assert r.parse_query_facets('title="staff engineer" now') == [("title", "staff engineer")]
    assert r.parse_query_facets("what is going on?") == []
    assert rule_parse("location=SF") == [("location", "SF")]


def test_malformed_parse_degrades_to_no_facets():
    r, _, _ = single_node("a: b")
    r.generator = ScriptedGenerator(["not json"])
    assert r.parse_query_facets("location=SF") == []


# -- per-node scores ----------------------------------------------------------------

def test_facet_score_identical_facet():
    r, n, _ = single_node("location: SF Bay Area")
    assert r.score_facet([("location", "SF Bay Area")], n, k=1) == pytest.approx(1.0)


def test_facet_score_empty_view():
    r, n, _ = single_node(None)
    assert r.score_facet([("location", "SF")], n, k=1) == 0.0
    r, n, _ = single_node("just prose without pairs")
    assert r.score_facet([("location", "SF")], n, k=1) == 0.0


def test_facet_score_two_micro_queries_three_facets():
    text = "title: data scientist\nlocation: Austin TX\nseniority: senior"
    r, n, _ = single_node(text)
    fq = [("title", "software engineer"), ("location", "Austin TX")]
    node_vecs = [oracles.hashed_bag(line) for line in text.splitlines()]
    micro = [oracles.hashed_bag(f"{k}: {v}") for k, v in fq]
    assert r.score_facet(fq, n, k=2) == pytest.approx(oracles.facet_score(micro, node_vecs, 2),
                                                      abs=1e-9)


def test_facet_denominator_uses_k_even_when_fewer_facets():
    import numpy as np
    sims = np.array([[0.5, 1.0]])
    assert facet_score_from_sims(sims, 3) == pytest.approx(1.5 / 6)


def test_qa_score_examples():
    r, n, store = single_node("salary: 100")
    q = r.make_query("What is the salary for d?", n)
    assert r.score_qa(q, n) == pytest.approx(1.0)
    r2, n2, _ = single_node("no pairs at all")
    assert r2.score_qa(r2.make_query("anything", n2), n2) == 0.0


def test_qa_score_is_max_of_five():
    text = "\n".join(f"{w}: v{i}" for i, w in enumerate(WORDS[:5]))
    r, n, store = single_node(text)
    q = r.make_query("what is the alpha title", n)
    questions = [p.question for p in store.get_memory(n).qa]
    assert len(questions) == 5
    want = max(oracles.cos(oracles.hashed_bag(q.text), oracles.hashed_bag(t)) for t in questions)
    assert r.score_qa(q, n) == pytest.approx(want, abs=1e-9)


def test_summary_score_examples():
    r, n, store = single_node("title: engineer")
    concise = store.get_memory(n).summary.concise
    assert r.score_summary(r.make_query(concise, n), n) == pytest.approx(1.0)
    empty, m, _ = single_node(None)
    with pytest.raises(MissingMemory):
        empty.score_summary(empty.make_query("x", m), m)


def test_summary_ranking_matches_pairwise_oracle(indexed):
    eng, ids = indexed
    r = eng.retriever
    q = r.make_query("location austin designer", ids["r"])
    a, b = ids["p1"], ids["p3"]
    sa, sb = r.score_summary(q, a), r.score_summary(q, b)
    oa = oracles.cos(oracles.hashed_bag(q.text), oracles.hashed_bag(eng.memory(a).summary.concise))
    ob = oracles.cos(oracles.hashed_bag(q.text), oracles.hashed_bag(eng.memory(b).summary.concise))
    assert (sa > sb) == (oa > ob)
    assert sa == pytest.approx(oa, abs=1e-9) and sb == pytest.approx(ob, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(WORDS), st.lists(st.sampled_from(WORDS), min_size=1,
                                                            max_size=3)),
                min_size=1, max_size=6, unique_by=lambda t: t[0]),
       st.lists(st.tuples(st.sampled_from(WORDS), st.sampled_from(WORDS)), min_size=1, max_size=3),
       st.lists(st.sampled_from(WORDS), min_size=1, max_size=6),
       st.integers(1, 4))
def test_scores_match_brute_force(pairs, fq, q_words, k):
    text = "\n".join(f"{key}: {' '.join(vals)}" for key, vals in pairs)
    r, n, store = single_node(text)
    mem = store.get_memory(n)
    q = r.make_query(" ".join(q_words), n)
    qv = oracles.hashed_bag(q.text)
    node_vecs = [oracles.hashed_bag(f.linearized) for f in mem.facets]
    micro = [oracles.hashed_bag(f"{a}: {b}") for a, b in fq]
    assert r.score_facet(fq, n, k) == pytest.approx(oracles.facet_score(micro, node_vecs, k),
                                                    abs=1e-9)
    assert r.score_qa(q, n) == pytest.approx(
        oracles.qa_score(qv, [oracles.hashed_bag(p.question) for p in mem.qa]), abs=1e-9)
    assert r.score_summary(q, n) == pytest.approx(
        oracles.summary_score(qv, oracles.hashed_bag(mem.summary.concise)), abs=1e-9)
    for s in (r.score_facet(fq, n, k), r.score_qa(q, n), r.score_summary(q, n)):
        assert 0.0 <= s <= 1.0 + 1e-12


# -- retrieve -----------------------------------------------------------------------

def brute_force_retrieve(eng, text, scope, fq, k_facet=5, k_qa=5, k_summary=5, k_inner=3):
    pool = eng.tree.subtree(scope)
    qv = oracles.hashed_bag(text)
    facet, qa, summ = [], [], []
    micro = [oracles.hashed_bag(f"{a}: {b}") for a, b in fq]
    for n in pool:
        mem = eng.store.get_memory(n)
        if mem is None:
            continue
        if fq and mem.facets:
            facet.append((oracles.facet_score(micro, [oracles.hashed_bag(f.linearized)
                                                      for f in mem.facets], k_inner), n))
        for i, p in enumerate(mem.qa):
            qa.append((oracles.cos(qv, oracles.hashed_bag(p.question)), n, i))
        summ.append((oracles.cos(qv, oracles.hashed_bag(mem.summary.concise)), n))
    facet.sort(key=lambda t: (-t[0], t[1]))
    qa.sort(key=lambda t: (-t[0], t[1], t[2]))
    summ.sort(key=lambda t: (-t[0], t[1]))
    return facet[:k_facet], qa[:k_qa], summ[:k_summary]


@pytest.mark.parametrize("text", ["location=Austin designer", "title=engineer budget",
                                  "What is the location for p3-doc?", "senior sales"])
@pytest.mark.parametrize("scope_key", ["r", "s1", "s2", "p4"])
def test_retrieve_equals_exhaustive_oracle(indexed, text, scope_key):
    eng, ids = indexed
    r = eng.retriever
    q = r.make_query(text, ids[scope_key])
    res = r.retrieve(q)
    facet, qa, summ = brute_force_retrieve(eng, text, ids[scope_key], q.parsed_facets)
    assert [(h.node, round(h.score, 9)) for h in res.facet_hits] == [(n, round(s, 9)) for s, n in facet]
    assert [(h.node, h.pair.question) for h in res.qa_hits] == [
        (n, eng.store.get_memory(n).qa[i].question) for _, n, i in qa]
    assert all(abs(h.score - s) < 1e-9 for h, (s, _, _) in zip(res.qa_hits, qa))
    assert [(h.node, round(h.score, 9)) for h in res.summary_hits] == [(n, round(s, 9)) for s, n in summ]
    assert res.pool == eng.tree.subtree(ids[scope_key])


def test_leaf_scope_returns_only_that_leaf(indexed):
    eng, ids = indexed
    res = eng.retriever.retrieve(eng.retriever.make_query("location=Austin title", ids["p1"]))
    assert res.nodes() == {ids["p1"]}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(WORDS + ["location=SF", "title=engineer"]), min_size=1, max_size=5),
       st.sampled_from(["r", "s1", "s2", "p1", "p2", "p3", "p4"]))
def test_scope_isolation_for_any_query(words, scope_key):
    eng, ids = small_engine()
    eng.full_index()
    scope = ids[scope_key]
    res = eng.retriever.retrieve(eng.retriever.make_query(" ".join(words), scope))
    assert res.nodes() <= eng.tree.subtree(scope)
    if scope_key == "s1":
        assert not (res.nodes() & eng.tree.subtree(ids["s2"]))


def test_adding_unrelated_node_keeps_scores(indexed):
    eng, ids = indexed
    r = eng.retriever
    q = r.make_query("location=Austin designer", ids["r"])
    before = {n: (r.score_facet(q.parsed_facets, n), r.score_qa(q, n), r.score_summary(q, n))
              for n in eng.tree.nodes}
    new = eng.create_node("proj-9", "project", ids["s2"])
    eng.ingest([{"doc_id": "p9", "node_business_key": new, "text": "location: Austin TX"}])
    eng.incremental_index()
    for n in (ids["p1"], ids["p2"], ids["p3"], ids["p4"], ids["s1"]):
        assert (r.score_facet(q.parsed_facets, n), r.score_qa(q, n), r.score_summary(q, n)) == before[n]


def test_unknown_scope():
    r, _, _ = single_node("a: b")
    with pytest.raises(UnknownScope):
        r.make_query("x", "nope")


def test_rule_parser_setting():
    r, n, _ = single_node("a: b")
    r.settings = RetrievalSettings(query_parser="rules")
    calls = r.generator.usage.llm_calls
    assert r.parse_query_facets("Location=SF") == [("location", "SF")]
    assert r.generator.usage.llm_calls == calls
