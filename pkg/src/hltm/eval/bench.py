"""Benchmark runner: answer quality, retrieval P/R/F1, leakage, latency and cost."""

from __future__ import annotations

import csv
import json
import logging
import re
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from ..backends import map_in_context, track_usage
from ..config import Config
from ..engine import Engine, make_backends
from ..errors import EmptyContext
from .corpus import Corpus, CorpusSpec, generate_corpus, leakage_queries, planted_queries
from .flatrag import FlatRAG
from .judge import Judge, make_llm_judge
from .metrics import bleu1, leakage, mean_se, retrieval_prf, token_f1

logger = logging.getLogger(__name__)

SYSTEMS = ("hltm", "flatrag")
METRICS = ("token_f1", "bleu1", "precision", "recall", "f1", "llm_calls", "tokens", "latency_ms")


@dataclass
class QueryRecord:
    kind: str
    text: str
    scope: str
    gold_answer: str
    answer: str
    citations: list[str]
    entities: dict[str, str]
    # quality metrics are None when the query carries no gold to grade against
    token_f1: Optional[float]
    bleu1: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    llm_calls: int
    tokens: int
    latency_ms: float
    leaked: bool
    judge: Optional[float] = None

    def row(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["citations"] = " ".join(self.citations)
        out["entities"] = " ".join(sorted(self.entities))
        return out


def returned_entities(answer: str, citations: Sequence[str], owners: dict[str, str]) -> dict[str, str]:
    """Cited node ids plus node ids or business keys mentioned in the answer text."""
    found = {c: owners.get(c, c) for c in citations}
    for name, owner in owners.items():
        if re.search(rf"(?<![\w-]){re.escape(name)}(?![\w-])", answer):
            found[name] = owner
    return found


class _HLTMSystem:
    name = "hltm"

    def __init__(self, corpus: Corpus, config: Config):
        self.engine = Engine(config, tree=corpus.tree.copy())
        self.engine.ingest(corpus.documents)
        self.index_report = self.engine.full_index().to_dict()

    def ask(self, text: str, scope: str):
        t0 = time.perf_counter()
        with track_usage() as usage:
            try:
                resp = self.engine.query(text, scope)
            except EmptyContext:
                return "unknown", [], usage.to_dict(), time.perf_counter() - t0
        return resp.answer.answer, resp.answer.citations, resp.usage, resp.latency

    def close(self) -> None:
        self.engine.close()


class _FlatSystem:
    name = "flatrag"

    def __init__(self, corpus: Corpus, config: Config):
        self.engine = Engine(config, tree=corpus.tree.copy())
        self.engine.ingest(corpus.documents)
        r = config["retrieval"]
        self.rag = FlatRAG(self.engine.generator, self.engine.embedder, k=int(r["k_summary"]),
                           token_cap=int(config["answer"]["context_token_cap"]))
        t0 = time.perf_counter()
        self.rag.index(self.engine.store.documents.values())
        self.index_report = {"mode": "flat", "chunks": len(self.rag.docs), "llm_calls": 0,
                             "wall_time": round(time.perf_counter() - t0, 6)}

    def ask(self, text: str, scope: str):
        resp = self.rag.query(text, scope)
        return resp.answer.answer, resp.answer.citations, resp.usage, resp.latency

    def close(self) -> None:
        self.engine.close()


def default_queries(corpus: Corpus, n_leakage: int = 50) -> list[dict]:
    return planted_queries(corpus) + leakage_queries(corpus, n_leakage)


def _summarize(records: Sequence[QueryRecord]) -> dict:
    out = {m: mean_se([float(v) for r in records if (v := getattr(r, m)) is not None])
           for m in METRICS}
    judged = [r.judge for r in records if r.judge is not None]
    if judged:
        out["judge"] = mean_se(judged)
    lat = sorted(r.latency_ms for r in records)
    if lat:
        q = statistics.quantiles(lat, n=20) if len(lat) > 1 else [lat[0]] * 19
        out["latency_stats"] = {"mean": statistics.fmean(lat), "p50": statistics.median(lat),
                                "p95": q[18], "max": lat[-1]}
    return out


def run_system(system: str, corpus: Corpus, queries: Sequence[dict],
               config: Optional[Config] = None, workers: int = 4,
               judge: Optional[Judge] = None) -> dict:
    """Index ``corpus`` with one system and score every query.

    ``judge(question, gold, answer)`` is called for queries with a gold answer
    when given; its calls are not counted in the per-query cost.
    """
    config = config or Config()
    if system not in SYSTEMS:
        raise ValueError(f"system must be one of {SYSTEMS}, got {system!r}")
    impl = _HLTMSystem(corpus, config) if system == "hltm" else _FlatSystem(corpus, config)
    owners = corpus.owner_of()
    tree = impl.engine.tree

    def one(q: dict) -> QueryRecord:
        scope = tree.resolve(q["scope"])
        answer, citations, usage, latency = impl.ask(q["text"], scope)
        entities = returned_entities(answer, citations, owners)
        gold = q.get("gold_answer") or ""
        gold_entities = set(q.get("gold_entities") or [])
        p, r, f = retrieval_prf(set(entities.values()), gold_entities) if gold_entities else (None,) * 3
        allowed = tree.subtree(scope)
        return QueryRecord(
            kind=q.get("kind", "retrieval"), text=q["text"], scope=scope, gold_answer=gold,
            answer=answer, citations=list(citations), entities=entities,
            token_f1=token_f1(answer, gold) if gold else None,
            bleu1=bleu1(answer, gold) if gold else None,
            precision=p, recall=r, f1=f, llm_calls=int(usage.get("llm_calls", 0)),
            tokens=int(usage.get("tokens", 0)), latency_ms=latency * 1000,
            leaked=any(o not in allowed for o in entities.values()),
            judge=judge(q["text"], gold, answer) if judge and gold else None)

    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            records = map_in_context(pool, one, queries)
    finally:
        impl.close()

    by_kind: dict[str, list[QueryRecord]] = {}
    for rec in records:
        by_kind.setdefault(rec.kind, []).append(rec)
    qw, ew = leakage([(r.scope, r.entities) for r in records], tree)
    return {
        "system": system,
        "index": impl.index_report,
        "n_queries": len(records),
        "overall": _summarize(records),
        "by_kind": {k: _summarize(v) for k, v in sorted(by_kind.items())},
        "leakage": {"query_wise": qw, "entity_wise": ew},
        "records": [r.row() for r in records],
    }


def run_benchmark(spec: CorpusSpec, queries: Optional[Sequence[dict]] = None,
                  systems: Sequence[str] = ("hltm",), config: Optional[Config] = None,
                  workers: int = 4, judge: bool = False) -> dict:
    """Run each system on a fresh corpus; ``judge`` adds LLM-graded correctness."""
    config = config or Config()
    corpus = generate_corpus(spec)
    queries = list(queries) if queries is not None else default_queries(corpus)
    grader = make_llm_judge(make_backends(config)[0]) if judge else None
    return {"corpus": spec.to_dict(),
            "systems": {s: run_system(s, corpus, queries, config, workers, grader)
                        for s in systems}}


# -- reporting ---------------------------------------------------------------------

def _fmt(stat: dict) -> str:
    if stat["mean"] is None:
        return "-"
    return f"{stat['mean']:.3f} ± {stat['se']:.3f}"


def text_table(report: dict) -> str:
    systems = list(report["systems"])
    kinds = sorted({k for s in systems for k in report["systems"][s]["by_kind"]})
    header = ["metric", "kind"] + systems
    rows = []
    metrics = list(METRICS) + (["judge"] if any(
        "judge" in sub for s in systems for sub in report["systems"][s]["by_kind"].values()) else [])
    for metric in metrics:
        for kind in kinds:
            rows.append([metric, kind] + [
                _fmt(report["systems"][s]["by_kind"][kind][metric])
                if metric in report["systems"][s]["by_kind"].get(kind, {}) else "-"
                for s in systems])
    for part in ("query_wise", "entity_wise"):
        rows.append([f"leakage_{part}", "all"] + [f"{report['systems'][s]['leakage'][part]:.3f}"
                                                  for s in systems])
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(len(header))]

    def line(cells) -> str:
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


def write_report(report: dict, out: str | Path, figures: bool = True) -> dict[str, str]:
    """Write JSON, a text table, per-query CSV and (optionally) PNG figures next to ``out``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = {"json": out, "table": out.with_suffix(".txt"), "csv": out.with_suffix(".csv")}
    out.write_text(json.dumps(report, indent=1, ensure_ascii=False), encoding="utf-8")
    paths["table"].write_text(text_table(report), encoding="utf-8")
    with open(paths["csv"], "w", newline="", encoding="utf-8") as fh:
        writer = None
        for system, sub in report["systems"].items():
            for rec in sub["records"]:
                row = {"system": system, **rec}
                if writer is None:
                    writer = csv.DictWriter(fh, fieldnames=list(row))
                    writer.writeheader()
                writer.writerow(row)
    if figures:
        from .figures import render_figures

        for name, p in render_figures(report, out.parent, out.stem).items():
            paths[name] = p
    return {k: str(v) for k, v in paths.items()}
