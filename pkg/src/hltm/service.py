"""JSON-over-HTTP adapter around :class:`~hltm.engine.Engine`.

Every handler delegates straight to the engine; no retrieval logic lives here.
Node ids in paths are URL-encoded and may be either a node id or a business key.
"""

from __future__ import annotations

import json
import logging
import re
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import unquote

from .engine import Engine
from .errors import HLTMError, MissingMemory

logger = logging.getLogger(__name__)


class BadRequest(HLTMError):
    code = "bad_request"


def _parse_jsonl(body: bytes) -> list[dict]:
    rows = []
    for i, line in enumerate(body.decode("utf-8").splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise BadRequest(f"line {i}: invalid JSON ({exc.msg})") from None
    return rows


class Api:
    """Routes ``(method, path, body)`` to engine calls; returns ``(status, payload)``."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.routes: list[tuple[str, re.Pattern, Callable]] = [
            ("GET", re.compile(r"^/health$"), self.health),
            ("GET", re.compile(r"^/tree$"), self.get_tree),
            ("POST", re.compile(r"^/tree$"), self.load_tree),
            ("POST", re.compile(r"^/nodes$"), self.create_node),
            ("DELETE", re.compile(r"^/nodes/(?P<node>[^/]+)$"), self.delete_node),
            ("GET", re.compile(r"^/nodes/(?P<node>[^/]+)/memory$"), self.node_memory),
            ("POST", re.compile(r"^/documents$"), self.documents),
            ("DELETE", re.compile(r"^/documents/(?P<doc>[^/]+)$"), self.delete_document),
            ("POST", re.compile(r"^/index$"), self.index),
            ("POST", re.compile(r"^/query$"), self.query),
            ("GET", re.compile(r"^/profiles$"), self.list_profiles),
            ("POST", re.compile(r"^/profiles/mine$"), self.mine),
            ("POST", re.compile(r"^/profiles/(?P<pid>[^/]+)/approve$"), self.approve),
            ("POST", re.compile(r"^/profiles/(?P<pid>[^/]+)/apply$"), self.apply),
        ]

    @staticmethod
    def _json(body: bytes) -> dict:
        if not body:
            return {}
        try:
            data = json.loads(body)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BadRequest(f"request body is not JSON: {exc}") from None
        if not isinstance(data, dict):
            raise BadRequest("request body must be a JSON object")
        return data

    def dispatch(self, method: str, path: str, body: bytes) -> tuple[int, dict]:
        path = path.split("?", 1)[0]
        allowed = False
        for m, pattern, fn in self.routes:
            match = pattern.match(path)
            if not match:
                continue
            allowed = True
            if m != method:
                continue
            params = {k: unquote(v) for k, v in match.groupdict().items()}
            try:
                return fn(body, **params)
            except HLTMError as exc:
                return exc.http_status, exc.to_dict()
            except (ValueError, KeyError, TypeError) as exc:
                return 400, {"error": "bad_request", "message": str(exc)}
        if allowed:
            return 405, {"error": "method_not_allowed", "message": f"{method} {path}"}
        return 404, {"error": "not_found", "message": f"no route for {path}"}

    # -- handlers ------------------------------------------------------------------

    def health(self, body: bytes) -> tuple[int, dict]:
        return 200, {"status": "ok", "nodes": len(self.engine.tree),
                     "memories": len(self.engine.store.memories),
                     "dirty": len(self.engine.dirty)}

    def get_tree(self, body: bytes) -> tuple[int, dict]:
        return 200, self.engine.tree.to_json()

    def load_tree(self, body: bytes) -> tuple[int, dict]:
        self.engine.load_tree(self._json(body))
        return 201, {"nodes": len(self.engine.tree)}

    def create_node(self, body: bytes) -> tuple[int, dict]:
        data = self._json(body)
        nid = self.engine.create_node(data["business_key"], data["level"], data.get("parent"))
        return 201, {"id": nid}

    def delete_node(self, body: bytes, node: str) -> tuple[int, dict]:
        return 200, self.engine.delete_node(node)

    def node_memory(self, body: bytes, node: str) -> tuple[int, dict]:
        mem = self.engine.memory(node)
        if mem is None:
            raise MissingMemory(f"node {node!r} has no memory", node=node)
        return 200, mem.dump()

    def documents(self, body: bytes) -> tuple[int, dict]:
        rows = _parse_jsonl(body)
        if not rows:
            raise BadRequest("no documents in request body")
        dirty = self.engine.ingest(rows)
        return 202, {"accepted": len(rows), "dirty": dirty}

    def delete_document(self, body: bytes, doc: str) -> tuple[int, dict]:
        node = self.engine.remove_document(doc)
        return 200, {"doc_id": doc, "node": node}

    def index(self, body: bytes) -> tuple[int, dict]:
        mode = self._json(body).get("mode", "incremental")
        if mode == "full":
            report = self.engine.full_index()
        elif mode == "incremental":
            report = self.engine.incremental_index()
        else:
            raise BadRequest(f"mode must be 'full' or 'incremental', got {mode!r}")
        return 200, report.to_dict()

    def query(self, body: bytes) -> tuple[int, dict]:
        data = self._json(body)
        text = data.get("text")
        scope = data.get("scope_business_key") or data.get("scope")
        if not text or not scope:
            raise BadRequest("query needs 'text' and 'scope_business_key'")
        k = data.get("k") or {}
        if not isinstance(k, dict):
            raise BadRequest("'k' must be an object of overrides")
        return 200, self.engine.query(text, scope, k).to_dict()

    def list_profiles(self, body: bytes) -> tuple[int, dict]:
        active = self.engine.store.meta.get("active_profile")
        return 200, {"active": active,
                     "profiles": [p.to_dict() for p in self.engine.profiles.values()]}

    def mine(self, body: bytes) -> tuple[int, dict]:
        data = self._json(body)
        queries = [(q["text"], q["timestamp"]) for q in data.get("queries", [])]
        window = data.get("window")
        profile = self.engine.mine_profile(queries, data.get("min_support"),
                                           tuple(window) if window else None)
        return 201, profile.to_dict()

    def approve(self, body: bytes, pid: str) -> tuple[int, dict]:
        return 200, self.engine.approve_profile(pid).to_dict()

    def apply(self, body: bytes, pid: str) -> tuple[int, dict]:
        return 200, self.engine.apply_profile(pid).to_dict()


def make_handler(api: Api) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        server_version = "hltm/0.1"
        protocol_version = "HTTP/1.1"

        def _handle(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            status, payload = api.dispatch(self.command, self.path, body)
            data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        do_GET = do_POST = do_DELETE = _handle

        def log_message(self, fmt: str, *args) -> None:
            logger.info("%s %s", self.address_string(), fmt % args)

    return Handler


def make_server(engine: Engine, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    """Bind (port 0 picks a free port); call ``serve_forever()`` on the result."""
    server = ThreadingHTTPServer((host, port), make_handler(Api(engine)))
    server.daemon_threads = True
    return server


def serve(engine: Engine, host: str = "127.0.0.1", port: int = 8080,
          ready: Optional[Callable[[ThreadingHTTPServer], None]] = None) -> None:
    server = make_server(engine, host, port)
    logger.warning("serving on http://%s:%d", *server.server_address[:2])
    if ready:
        ready(server)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        engine.close()
