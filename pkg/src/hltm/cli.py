"""Command-line interface: ``hltm --config cfg.json <command> ...``.

All commands share one config file. Results go to stdout (JSON unless noted);
failures print a JSON error object to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import Config
from .engine import Engine, read_jsonl
from .errors import HLTMError, MissingMemory
from .indexer import check_equivalence

logger = logging.getLogger("hltm")

DEFAULT_STORE = "hltm-store.jsonl"


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1, ensure_ascii=False))


def _load_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _config(args) -> Config:
    cfg = Config.load(args.config)
    if args.store:
        cfg.data["store_path"] = args.store
    elif not cfg.data.get("store_path"):
        cfg.data["store_path"] = DEFAULT_STORE
    return cfg


def _engine(args) -> Engine:
    return Engine(_config(args))


# -- commands -------------------------------------------------------------------

def cmd_tree(args) -> int:
    with _engine(args) as engine:
        if args.tree_cmd == "load":
            engine.load_tree(_load_json(args.file))
            _emit({"nodes": len(engine.tree), "root": engine.tree.root})
        elif args.tree_cmd == "export":
            data = engine.tree.to_json()
            if args.out:
                Path(args.out).write_text(json.dumps(data, indent=1), encoding="utf-8")
                _emit({"out": args.out, "nodes": len(engine.tree)})
            else:
                _emit(data)
        else:
            nid = engine.create_node(args.business_key, args.level, args.parent)
            _emit({"id": nid})
    return 0


def cmd_ingest(args) -> int:
    with _engine(args) as engine:
        rows = read_jsonl(args.file)
        dirty = engine.ingest(rows)
        _emit({"accepted": len(rows), "dirty": dirty})
    return 0


def cmd_remove_doc(args) -> int:
    with _engine(args) as engine:
        _emit({"doc_id": args.doc_id, "node": engine.remove_document(args.doc_id)})
    return 0


def cmd_index(args) -> int:
    with _engine(args) as engine:
        report = engine.full_index() if args.full else engine.incremental_index()
        _emit(report.to_dict())
    return 0


def _citation_table(resp) -> str:
    lines = [f"answer: {resp.answer.answer}", f"rationale: {resp.answer.rationale}", "",
             f"{'#':>2}  node"]
    for i, c in enumerate(resp.answer.citations, 1):
        lines.append(f"{i:>2}  {c}")
    if not resp.answer.citations:
        lines.append(" -  (no citations)")
    u = resp.usage
    lines += ["", f"llm_calls={u['llm_calls']} tokens={u['tokens']} "
                  f"latency_ms={resp.latency * 1000:.1f}"]
    return "\n".join(lines)


def cmd_query(args) -> int:
    k = {name: getattr(args, name) for name in ("k_facet", "k_qa", "k_summary", "k_inner")
         if getattr(args, name) is not None}
    with _engine(args) as engine:
        resp = engine.query(args.text, args.scope, k)
        if args.json:
            _emit(resp.to_dict())
        else:
            print(_citation_table(resp))
    return 0


def cmd_memory(args) -> int:
    with _engine(args) as engine:
        mem = engine.memory(args.node)
        if mem is None:
            raise MissingMemory(f"node {args.node!r} has no memory", node=args.node)
        _emit(mem.dump())
    return 0


def cmd_dump(args) -> int:
    with _engine(args) as engine:
        data = engine.dump(include_versions=not args.no_versions)
    if args.out:
        Path(args.out).write_text(json.dumps(data, indent=1, sort_keys=True, ensure_ascii=False),
                                  encoding="utf-8")
        _emit({"out": args.out, "memories": len(data["memories"])})
    else:
        _emit(data)
    return 0


def cmd_check(args) -> int:
    report = check_equivalence(_load_json(args.a), _load_json(args.b))
    _emit(report.to_dict())
    return 0 if report.identical else 3


def cmd_delete(args) -> int:
    with _engine(args) as engine:
        _emit(engine.delete_node(args.node))
    return 0


def cmd_bench(args) -> int:
    from .eval.bench import run_benchmark, text_table, write_report
    from .eval.corpus import CorpusSpec

    spec = CorpusSpec.load(args.corpus) if args.corpus else CorpusSpec()
    queries = read_jsonl(args.queries) if args.queries else None
    systems = ("hltm", "flatrag") if args.system == "both" else (args.system,)
    cfg = Config.load(args.config)
    cfg.data["store_path"] = None  # benchmarks always run in memory
    report = run_benchmark(spec, queries, systems, cfg, args.workers, judge=args.judge)
    paths = write_report(report, args.out, figures=not args.no_figures)
    print(text_table(report), end="")
    _emit({"outputs": paths})
    return 0


def cmd_corpus(args) -> int:
    from .eval.corpus import CorpusSpec, generate_corpus

    spec = CorpusSpec.load(args.spec) if args.spec else CorpusSpec()
    corpus = generate_corpus(spec)
    paths = corpus.write(args.out)
    _emit({"nodes": len(corpus.tree), "documents": len(corpus.documents), "outputs": paths})
    return 0


def cmd_profile(args) -> int:
    with _engine(args) as engine:
        if args.profile_cmd == "mine":
            rows = read_jsonl(args.log)
            window = (args.since, args.until) if (args.since or args.until) else None
            profile = engine.mine_profile([(r["text"], r["timestamp"]) for r in rows],
                                          args.min_support, window)
            _emit(profile.to_dict())
        elif args.profile_cmd == "approve":
            _emit(engine.approve_profile(args.id).to_dict())
        elif args.profile_cmd == "apply":
            p = engine.apply_profile(None if args.clear else args.id)
            _emit(p.to_dict() if p else {"active": None})
        else:
            _emit({"active": engine.store.meta.get("active_profile"),
                   "profiles": [p.to_dict() for p in engine.profiles.values()]})
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(_engine(args), args.host, args.port)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def shared(default) -> argparse.ArgumentParser:
        sp = argparse.ArgumentParser(add_help=False)
        sp.add_argument("--config", default=default, help="JSON config file (defaults: mock backend)")
        sp.add_argument("--store", default=default, help="override store_path from the config")
        sp.add_argument("--log-level", default=default, help="DEBUG, INFO, WARNING, ...")
        return sp

    # options may appear before or after the subcommand; later ones must not reset earlier ones
    common = shared(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="hltm", parents=[shared(None)],
                                description="Hierarchical long-term memory engine.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tree", parents=[common], help="load, export or extend the topology")
    tsub = t.add_subparsers(dest="tree_cmd", required=True)
    tl = tsub.add_parser("load", parents=[common])
    tl.add_argument("file")
    te = tsub.add_parser("export", parents=[common])
    te.add_argument("--out")
    tc = tsub.add_parser("create", parents=[common])
    tc.add_argument("business_key")
    tc.add_argument("--level", required=True)
    tc.add_argument("--parent")
    t.set_defaults(func=cmd_tree)

    s = sub.add_parser("ingest", parents=[common], help="store documents from a JSONL file")
    s.add_argument("file")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("remove-doc", parents=[common], help="remove one document")
    s.add_argument("doc_id")
    s.set_defaults(func=cmd_remove_doc)

    s = sub.add_parser("index", parents=[common], help="run an indexing cycle")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--full", action="store_true")
    g.add_argument("--incremental", action="store_true")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("query", parents=[common], help="answer a question within a scope")
    s.add_argument("text")
    s.add_argument("--scope", required=True, help="business key or node id")
    for name in ("k-facet", "k-qa", "k-summary", "k-inner"):
        s.add_argument(f"--{name}", type=int)
    s.add_argument("--json", action="store_true", help="print the full response as JSON")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("memory", parents=[common], help="show one node's memory")
    s.add_argument("node")
    s.set_defaults(func=cmd_memory)

    s = sub.add_parser("dump", parents=[common], help="dump topology and all memories")
    s.add_argument("--out")
    s.add_argument("--no-versions", action="store_true")
    s.set_defaults(func=cmd_dump)

    s = sub.add_parser("check-equivalence", parents=[common], help="compare two dumps")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("delete", parents=[common], help="delete a subtree")
    s.add_argument("node")
    s.set_defaults(func=cmd_delete)

    b = sub.add_parser("bench", parents=[common], help="benchmarks")
    bsub = b.add_subparsers(dest="bench_cmd", required=True)
    br = bsub.add_parser("run", parents=[common])
    br.add_argument("--corpus", help="corpus spec JSON")
    br.add_argument("--queries", help="query JSONL (default: planted + leakage queries)")
    br.add_argument("--system", choices=["hltm", "flatrag", "both"], default="hltm")
    br.add_argument("--out", required=True, help="report JSON path; .txt/.csv/.png go alongside")
    br.add_argument("--workers", type=int, default=4)
    br.add_argument("--no-figures", action="store_true")
    br.add_argument("--judge", action="store_true",
                    help="also grade answers with the configured generation backend")
    br.set_defaults(func=cmd_bench)

    c = sub.add_parser("corpus", parents=[common], help="synthetic corpora")
    csub = c.add_subparsers(dest="corpus_cmd", required=True)
    cg = csub.add_parser("generate", parents=[common])
    cg.add_argument("--spec", help="corpus spec JSON")
    cg.add_argument("--out", required=True, help="output directory")
    cg.set_defaults(func=cmd_corpus)

    pr = sub.add_parser("profile", parents=[common], help="query-pattern profiles")
    psub = pr.add_subparsers(dest="profile_cmd", required=True)
    pm = psub.add_parser("mine", parents=[common])
    pm.add_argument("log", help='query log JSONL with {"text","timestamp"} rows')
    pm.add_argument("--min-support", type=int)
    pm.add_argument("--since")
    pm.add_argument("--until")
    pa = psub.add_parser("approve", parents=[common])
    pa.add_argument("id")
    pp = psub.add_parser("apply", parents=[common])
    pp.add_argument("id", nargs="?")
    pp.add_argument("--clear", action="store_true")
    psub.add_parser("list", parents=[common])
    pr.set_defaults(func=cmd_profile)

    s = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "profile" and args.profile_cmd == "apply" and not (args.id or args.clear):
        parser.error("profile apply needs an id or --clear")
    level = args.log_level
    if level is None and args.config:
        try:
            level = Config.load(args.config)["logging"]["level"]
        except (OSError, ValueError):
            level = None
    logging.basicConfig(level=(level or "WARNING").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HLTMError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
