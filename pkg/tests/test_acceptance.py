"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the verdict lines are printed
even when output capture is on).
"""

import json
import random
import time

import pytest

from hltm.backends import MockEmbedder, MockGenerator, track_usage
from hltm.config import Config
from hltm.engine import Engine
from hltm.eval.bench import run_system
from hltm.eval.corpus import (CorpusSpec, apply_random_mutations, generate_corpus,
                              leakage_queries, planted_queries)
from hltm.eval.metrics import bleu1, leakage, retrieval_prf, token_f1
from hltm.indexer import check_equivalence
from hltm.memory import MemoryBuilder
from hltm.service import Api
from conftest import small_tree
import oracles


@pytest.fixture
def verdict(capsys):
    def report(label: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        assert ok, detail
    return report


def indexed_corpus(spec: CorpusSpec) -> tuple[Engine, object]:
    corpus = generate_corpus(spec)
    eng = Engine(tree=corpus.tree.copy())
    eng.ingest(corpus.documents)
    eng.full_index()
    return eng, corpus


def test_c1_incremental_is_lossless(verdict):
    t0 = time.perf_counter()
    eng, _ = indexed_corpus(CorpusSpec(tenants=3, seats=3, projects=5, docs_per_project=3, seed=11))
    applied = apply_random_mutations(eng, random.Random(2024), 20)
    eng.incremental_index()
    fresh = Engine()
    fresh.load_tree(eng.tree.to_json())
    fresh.ingest(sorted(eng.store.documents.values(), key=lambda d: d.sort_key))
    fresh.full_index()
    rep = check_equivalence(eng.dump(), fresh.dump())
    elapsed = time.perf_counter() - t0
    ok = rep.identical and not rep.diffs and elapsed < 60 and len(applied) == 20
    verdict("C1 losslessness", ok,
            f"identical={rep.identical} diffs={len(rep.diffs)} mutations={len(applied)} "
            f"time={elapsed:.1f}s (<60s)")


def test_c2_zero_leakage(verdict):
    corpus = generate_corpus(CorpusSpec(tenants=3, seats=3, projects=5, seed=7))
    queries = leakage_queries(corpus, n=50, seed=99)
    out = run_system("hltm", corpus, queries, Config(), workers=4)
    qw, ew = out["leakage"]["query_wise"], out["leakage"]["entity_wise"]
    scopes = {q["scope"] for q in queries}
    returned = sum(len(r["entities"].split()) for r in out["records"])
    verdict("C2 zero leakage", out["n_queries"] == 50 and qw == 0.0 and ew == 0.0,
            f"query_wise={qw:.3f} entity_wise={ew:.3f} over 50 queries, {len(scopes)} scopes, "
            f"{returned} returned entities")


def test_c3_scores_match_brute_force(verdict):
    eng, corpus = indexed_corpus(CorpusSpec(tenants=2, seats=2, projects=3, seed=5))
    rng = random.Random(31)
    vocab = sorted({w for d in corpus.documents for w in d["text"].replace(":", " ").split()})
    keys = sorted({k.replace(" ", "_") for facts in corpus.planted.values() for k in facts})
    nodes = sorted(eng.tree.nodes)
    r = eng.retriever
    worst = 0.0
    for _ in range(200):
        words = rng.sample(vocab, rng.randint(1, 6))
        if rng.random() < 0.7:
            words.append(f"{rng.choice(keys)}={rng.choice(vocab)}")
        node = rng.choice(nodes)
        q = r.make_query(" ".join(words), node)
        mem = eng.store.get_memory(node)
        k = rng.randint(1, 4)
        qv = oracles.hashed_bag(q.text)
        want_f = oracles.facet_score([oracles.hashed_bag(f"{a}: {b}") for a, b in q.parsed_facets],
                                     [oracles.hashed_bag(f.linearized) for f in mem.facets], k)
        want_q = oracles.qa_score(qv, [oracles.hashed_bag(p.question) for p in mem.qa])
        want_s = oracles.summary_score(qv, oracles.hashed_bag(mem.summary.concise))
        for got, want in ((r.score_facet(q.parsed_facets, node, k), want_f),
                          (r.score_qa(q, node), want_q), (r.score_summary(q, node), want_s)):
            worst = max(worst, abs(got - want))
    verdict("C3 scoring oracle", worst <= 1e-9, f"200 pairs x 3 scores, max |diff|={worst:.2e} (<=1e-9)")


def test_c4_call_budget(verdict):
    corpus = generate_corpus(CorpusSpec(tenants=2, seats=2, projects=3, seed=8))
    eng = Engine(tree=corpus.tree.copy())
    eng.ingest(corpus.documents)
    builder = MemoryBuilder(MockGenerator(), MockEmbedder())
    leaf_calls = set()
    for leaf in eng.tree.leaves():
        docs = [eng.store.documents[d] for d in eng.tree.get(leaf).doc_ids]
        with track_usage() as usage:
            builder.build_leaf_memory(leaf, docs)
        leaf_calls.add(usage.llm_calls)
    eng.full_index()
    api = Api(eng)
    query_calls = set()
    queries = planted_queries(corpus)[:20] + leakage_queries(corpus, n=20, seed=3)
    for q in queries:
        with track_usage() as usage:
            status, out = api.dispatch("POST", "/query", json.dumps(
                {"text": q["text"], "scope_business_key": q["scope"]}).encode())
        assert status == 200
        query_calls.update({usage.llm_calls, out["usage"]["llm_calls"]})
    verdict("C4 call budget", leaf_calls == {4} and query_calls == {2},
            f"per-leaf calls={sorted(leaf_calls)} over {len(eng.tree.leaves())} leaves, "
            f"per-query calls={sorted(query_calls)} over {len(queries)} /query requests")


def test_c5_incremental_cost(verdict):
    eng, _ = indexed_corpus(CorpusSpec(tenants=1, seats=10, projects=10, docs_per_project=1, seed=2))
    assert len(eng.tree.leaves()) == 100 and eng.tree.height() == 3
    with track_usage() as full:
        eng.full_index()
    leaves = random.Random(5).sample(eng.tree.leaves(), 5)
    for i, leaf in enumerate(leaves):
        eng.ingest([{"doc_id": f"extra-{i}", "node_business_key": leaf, "text": "skill: Rust"}])
    with track_usage() as inc:
        eng.incremental_index()
    ratio = inc.llm_calls / full.llm_calls
    verdict("C5 incremental cost", ratio <= 0.20,
            f"incremental={inc.llm_calls} full={full.llm_calls} ratio={ratio:.3f} (<=0.20)")


def test_c6_planted_facts(verdict):
    corpus = generate_corpus(CorpusSpec(tenants=3, seats=3, projects=5, seed=0))
    out = run_system("hltm", corpus, planted_queries(corpus), Config(), workers=4)
    f1s = [r["f1"] for r in out["records"]]
    tf1s = [r["token_f1"] for r in out["records"]]
    ok = min(f1s) == 1.0 and min(tf1s) == 1.0
    verdict("C6 planted facts", ok,
            f"{len(f1s)} queries, retrieval F1 min={min(f1s):.3f}, token_f1 min={min(tf1s):.3f}")


def test_c7_locality(verdict):
    eng, _ = indexed_corpus(CorpusSpec(tenants=2, seats=3, projects=3, seed=4))
    before = {n: (eng.store.version(n), json.dumps(eng.store.get_memory(n).dump(), sort_keys=True))
              for n in eng.tree.nodes}
    leaf = random.Random(1).choice(eng.tree.leaves())
    eng.ingest([{"doc_id": "late", "node_business_key": leaf, "text": "seniority: principal"}])
    eng.incremental_index()
    on_path = {leaf, *eng.tree.ancestor_path(leaf)}
    changed = [n for n in eng.tree.nodes if n not in on_path and
               (eng.store.version(n), json.dumps(eng.store.get_memory(n).dump(), sort_keys=True))
               != before[n]]
    bumped = all(eng.store.version(n) == before[n][0] + 1 for n in on_path)
    verdict("C7 locality", not changed and bumped,
            f"{len(eng.tree) - len(on_path)} off-path nodes unchanged={not changed}, "
            f"{len(on_path)} path nodes rebuilt={bumped}")


def test_c8_metric_examples(verdict):
    t, ids = small_tree()
    checks = {
        "token_f1 identical": token_f1("sf bay area", "sf bay area") == 1.0,
        "token_f1 'a b'/'b c'": token_f1("a b", "b c") == 0.5,
        "token_f1 disjoint": token_f1("x y", "a b") == 0.0,
        "bleu1 identical": bleu1("the cat", "the cat") == 1.0,
        "bleu1 'a a a'/'a b'": abs(bleu1("a a a", "a b") - 1 / 3) < 1e-12,
        "bleu1 empty": bleu1("", "a b") == 0.0,
        "prf exact": retrieval_prf({"p"}, {"p"}) == (1.0, 1.0, 1.0),
        "prf superset": all(abs(a - b) < 1e-12 for a, b in
                            zip(retrieval_prf({"a", "b", "x"}, {"a", "b"}), (2 / 3, 1.0, 0.8))),
        "prf disjoint": retrieval_prf({"x"}, {"p"}) == (0.0, 0.0, 0.0),
        "leakage in-scope": leakage([(ids["s1"], {"a": ids["p1"]})], t) == (0.0, 0.0),
        "leakage 1 of 2": leakage([(ids["s1"], {"a": ids["p1"], "b": ids["p2"], "c": ids["s1"],
                                                "d": ids["p3"]}),
                                   (ids["s2"], {"e": ids["p4"]})], t) == (0.5, 0.125),
    }
    failed = [k for k, v in checks.items() if not v]
    verdict("C8 metric examples", not failed,
            f"{len(checks) - len(failed)}/{len(checks)} hand examples exact"
            + (f"; failed: {failed}" if failed else ""))
