"""Generation and embedding backends.

Two families live here: remote JSON-over-HTTP clients for production, and
deterministic mocks that let the whole pipeline run offline with exact
expected values.  Every ``generate()`` call is counted in a ``UsageRecord``.
"""

from __future__ import annotations

import contextvars
import hashlib
import json
import logging
import os
import re
import threading
import urllib.error
import urllib.request
from collections import Counter
from concurrent.futures import Executor
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from . import prompts
from .errors import BackendUnavailable, DimMismatch, EmptyText, MalformedResponse

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[0-9a-z]+")
KV_LINE_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9 _\-]*?)\s*:\s*(\S.*?)\s*$")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics."""
    return _TOKEN_RE.findall(text.lower())


def count_tokens(text: str) -> int:
    return len(text.split())


def kv_lines(text: str) -> list[tuple[str, str]]:
    out = []
    for line in text.splitlines():
        m = KV_LINE_RE.match(line)
        if m:
            out.append((m.group(1), m.group(2)))
    return out


class Schema(str, Enum):
    FACET_JSON = "FacetJson"
    QA_JSON = "QaJson"
    FREE_TEXT = "FreeText"
    ANSWER_JSON = "AnswerJson"


@dataclass(frozen=True)
class ExtractionRequest:
    system_message: str
    user_message: str
    expected_schema: Schema
    # Names the pipeline step; remote backends ignore it, the mock dispatches on it.
    task: str = ""

    def __post_init__(self):
        if not self.system_message.strip() or not self.user_message.strip():
            raise ValueError("system and user messages must be non-empty")


@dataclass
class UsageRecord:
    llm_calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    by_task: Counter = field(default_factory=Counter)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def add(self, prompt_tokens: int, completion_tokens: int, task: str = "") -> None:
        with self._lock:
            self.llm_calls += 1
            self.prompt_tokens += prompt_tokens
            self.completion_tokens += completion_tokens
            self.by_task[task] += 1

    def snapshot(self) -> "UsageRecord":
        with self._lock:
            return UsageRecord(self.llm_calls, self.prompt_tokens, self.completion_tokens,
                               Counter(self.by_task))

    def __sub__(self, other: "UsageRecord") -> "UsageRecord":
        return UsageRecord(self.llm_calls - other.llm_calls,
                           self.prompt_tokens - other.prompt_tokens,
                           self.completion_tokens - other.completion_tokens,
                           self.by_task - other.by_task)

    def to_dict(self) -> dict:
        return {"llm_calls": self.llm_calls, "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens, "tokens": self.tokens}


_active_usage: contextvars.ContextVar[tuple[UsageRecord, ...]] = contextvars.ContextVar(
    "hltm_active_usage", default=())


@contextmanager
def track_usage() -> Iterator[UsageRecord]:
    """Collect the usage of every generate() made by this thread inside the block."""
    rec = UsageRecord()
    token = _active_usage.set(_active_usage.get() + (rec,))
    try:
        yield rec
    finally:
        _active_usage.reset(token)


def map_in_context(pool: Executor, fn: Callable, items: Iterable) -> list:
    """``pool.map`` that carries the caller's usage trackers into worker threads."""
    futures = [pool.submit(contextvars.copy_context().run, fn, item) for item in items]
    return [f.result() for f in futures]


@dataclass
class Generation:
    text: str
    usage: UsageRecord


class GenerationBackend:
    """Base class; subclasses implement ``_complete``."""

    def __init__(self) -> None:
        self.usage = UsageRecord()

    def _complete(self, req: ExtractionRequest) -> tuple[str, int, int]:
        raise NotImplementedError

    def generate(self, req: ExtractionRequest) -> Generation:
        text, p_tok, c_tok = self._complete(req)
        self.usage.add(p_tok, c_tok, req.task)
        for rec in _active_usage.get():
            rec.add(p_tok, c_tok, req.task)
        delta = UsageRecord()
        delta.add(p_tok, c_tok, req.task)
        return Generation(text, delta)


# -- response parsing ----------------------------------------------------------

_FENCE_RE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.S)


def _load_json(text: str) -> Any:
    text = text.strip()
    m = _FENCE_RE.match(text)
    if m:
        text = m.group(1)
    return json.loads(text)


def parse_response(text: str, schema: Schema) -> Any:
    """Validate ``text`` against ``schema``; raise ValueError on any mismatch."""
    if schema is Schema.FREE_TEXT:
        if not text.strip():
            raise ValueError("empty free-text response")
        return text.strip()
    data = _load_json(text)
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    if schema is Schema.FACET_JSON:
        facets = data.get("facets")
        if not isinstance(facets, dict):
            raise ValueError("missing 'facets' object")
        out = {}
        for k, v in facets.items():
            if isinstance(v, (dict, list)):
                raise ValueError(f"nested facet value under {k!r}")
            if v is None or not str(k).strip():
                continue
            out[str(k)] = str(v)
        return out
    if schema is Schema.QA_JSON:
        pairs = data.get("question_answers")
        if not isinstance(pairs, list):
            raise ValueError("missing 'question_answers' list")
        out = []
        for p in pairs:
            if not isinstance(p, dict):
                raise ValueError("QA entry is not an object")
            q, a = str(p.get("question", "")).strip(), str(p.get("answer", "")).strip()
            if q and a:
                out.append({"question": q, "answer": a, "source": str(p.get("source") or "")})
        return out
    if schema is Schema.ANSWER_JSON:
        if "answer" not in data:
            raise ValueError("missing 'answer'")
        cites = data.get("citation", data.get("citations", []))
        if isinstance(cites, str):
            cites = [cites]
        if not isinstance(cites, list):
            raise ValueError("'citation' must be a list")
        return {"rationale": str(data.get("rationale", "")), "answer": str(data["answer"]),
                "citation": [str(c) for c in cites]}
    raise ValueError(f"unknown schema {schema}")


def generate_structured(backend: GenerationBackend, req: ExtractionRequest) -> Any:
    """generate() + parse, retrying once before raising MalformedResponse."""
    last_err: Optional[Exception] = None
    for attempt in range(2):
        gen = backend.generate(req)
        try:
            return parse_response(gen.text, req.expected_schema)
        except (ValueError, TypeError) as exc:
            last_err = exc
            logger.warning("unparseable %s response for %s (attempt %d): %s",
                           req.expected_schema.value, req.task or "request", attempt + 1, exc)
    raise MalformedResponse(f"{req.task or 'response'}: {last_err}", task=req.task)


# -- mock generation -------------------------------------------------------------

def merge_values(values: Sequence[str]) -> str:
    """Union of '; '-separated values, deduplicated and sorted."""
    parts = {p.strip() for v in values for p in v.split("; ") if p.strip()}
    return "; ".join(sorted(parts))


def normalize_question(q: str) -> str:
    return " ".join(q.lower().split())


def _unique_lines(lines: Sequence[str]) -> list[str]:
    seen, out = set(), []
    for line in lines:
        if line not in seen:
            seen.add(line)
            out.append(line)
    return out


def _one_sentence(text: str) -> str:
    for line in text.splitlines():
        if KV_LINE_RE.match(line):
            return line.strip().rstrip(".") + "."
    for line in text.splitlines():
        if line.strip():
            return line.strip().rstrip(".") + "."
    return "No content."


class MockGenerator(GenerationBackend):
    """Deterministic stand-in for an LLM.

    Documents are expected to hold ``key: value`` lines; each task echoes or
    recombines those lines so that every pipeline output has an exact,
    hand-computable value.
    """

    _QUERY_KV_RE = re.compile(r'([A-Za-z_][\w\-]*)=(?:"([^"]*)"|([^\s,;?!]+))')

    def _complete(self, req: ExtractionRequest) -> tuple[str, int, int]:
        handler = getattr(self, f"_task_{req.task}", None)
        if handler is None:
            raise BackendUnavailable(f"mock backend has no handler for task {req.task!r}")
        out = handler(req.user_message)
        if not isinstance(out, str):
            out = json.dumps(out, ensure_ascii=False)
        return out, count_tokens(req.system_message) + count_tokens(req.user_message), count_tokens(out)

    def _task_facets(self, user: str) -> dict:
        collected: dict[str, list[str]] = {}
        for _doc_id, text in prompts.parse_documents(user):
            for k, v in kv_lines(text):
                collected.setdefault(k, []).append(v)
        return {"facets": {k: merge_values(vs) for k, vs in collected.items()}}

    def _task_qa(self, user: str) -> dict:
        pairs = []
        for doc_id, text in prompts.parse_documents(user):
            for k, v in kv_lines(text):
                pairs.append({"question": f"What is the {k} for {doc_id}?", "answer": v,
                              "source": doc_id})
        return {"rationale": "one question per key-value line", "question_answers": pairs}

    def _task_detailed_summary(self, user: str) -> str:
        docs = prompts.parse_documents(user)
        lines = [f"[{', '.join(d for d, _ in docs)}]"]
        body = [f"{k}: {v}" for _, text in docs for k, v in kv_lines(text)]
        if not body:
            body = [_one_sentence(text) for _, text in docs]
        return "\n".join(_unique_lines(lines + body))

    def _task_concise_summary(self, user: str) -> str:
        return _one_sentence(user)

    def _task_aggregate_facets(self, user: str) -> dict:
        grouped: dict[str, list[str]] = {}
        for child in prompts.parse_children(user):
            for k, v in child["facets"]:
                grouped.setdefault(k, []).append(v)
        return {"facets": {k: merge_values(vs) for k, vs in grouped.items()}}

    def _task_aggregate_qa(self, user: str) -> dict:
        seen, pairs = set(), []
        for child in prompts.parse_children(user):
            for q, a, src in child["qa"]:
                key = normalize_question(q)
                if key not in seen:
                    seen.add(key)
                    pairs.append({"question": q, "answer": a, "source": src})
        return {"rationale": "unique questions across children", "question_answers": pairs}

    def _task_aggregate_summary(self, user: str) -> str:
        lines = [line for child in prompts.parse_children(user)
                 for line in child["summary"]["detailed"].splitlines()]
        return "\n".join(_unique_lines(lines))

    _task_aggregate_concise = _task_concise_summary

    def _task_parse_query(self, user: str) -> dict:
        facets = {}
        for m in self._QUERY_KV_RE.finditer(user):
            facets[m.group(1)] = m.group(2) if m.group(2) is not None else m.group(3)
        return {"facets": facets}

    def _task_answer(self, user: str) -> dict:
        query = prompts.parse_query_block(user) or ""
        q_tokens = set(tokenize(query))
        best = None  # (overlap, node, view, answer)
        for node, view, _score, body in prompts.parse_items(user):
            if view == "qa":
                lines = body.splitlines()
                question = lines[0][3:] if lines and lines[0].startswith("Q: ") else body
                answer = next((ln[3:] for ln in lines if ln.startswith("A: ")), "")
                cands = [(question, answer)]
            elif view in ("facet", "chunk"):
                cands = [(f"{k}: {v}", v) for k, v in kv_lines(body)]
            else:
                continue
            for text, answer in cands:
                overlap = len(q_tokens & set(tokenize(text)))
                if overlap > 0 and (best is None or overlap > best[0]):
                    best = (overlap, node, view, answer)
        if best is None:
            return {"rationale": "no context item overlaps the query", "answer": "unknown",
                    "citation": []}
        overlap, node, view, answer = best
        return {"rationale": f"best token overlap ({overlap}) with a {view} item of {node}",
                "answer": answer, "citation": [node]}

    def _task_judge(self, user: str) -> str:
        parts = prompts.parse_judge(user)
        same = Counter(tokenize(parts.get("reference", ""))) == Counter(tokenize(parts.get("candidate", "")))
        return "correct" if same else "incorrect"


# -- remote generation -----------------------------------------------------------

def _post_json(url: str, payload: dict, api_key: Optional[str], timeout: float) -> dict:
    body = json.dumps(payload).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    request = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise BackendUnavailable(f"{url}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BackendUnavailable(f"{url}: non-JSON reply") from exc


class HTTPGenerator(GenerationBackend):
    """Chat-completions style endpoint: POST {base_url}/chat/completions."""

    def __init__(self, base_url: str, model: str, api_key_env: str = "HLTM_API_KEY",
                 timeout: float = 60.0, temperature: float = 0.0):
        super().__init__()
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.temperature = temperature

    def _complete(self, req: ExtractionRequest) -> tuple[str, int, int]:
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "system", "content": req.system_message},
                         {"role": "user", "content": req.user_message}],
        }
        if req.expected_schema is not Schema.FREE_TEXT:
            payload["response_format"] = {"type": "json_object"}
        data = _post_json(self.url, payload, os.environ.get(self.api_key_env), self.timeout)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"{self.url}: unexpected reply shape") from exc
        usage = data.get("usage") or {}
        p_tok = usage.get("prompt_tokens", count_tokens(req.system_message + " " + req.user_message))
        c_tok = usage.get("completion_tokens", count_tokens(text))
        return text, int(p_tok), int(c_tok)


# -- embeddings ------------------------------------------------------------------

class EmbeddingBackend:
    """Base embedder.  ``embed`` validates input, normalizes and caches."""

    dim: int

    def __init__(self) -> None:
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _raw(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        for t in texts:
            if not t or not t.strip():
                raise EmptyText("cannot embed empty text")
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self._cache))
        if missing:
            raw = self._raw(missing)
            with self._lock:
                for t, vec in zip(missing, raw):
                    vec = np.asarray(vec, dtype=np.float64)
                    if vec.shape != (self.dim,):
                        raise DimMismatch(f"backend returned shape {vec.shape}, expected ({self.dim},)")
                    norm = np.linalg.norm(vec)
                    if norm > 0:
                        vec = vec / norm
                    vec.setflags(write=False)
                    self._cache[t] = vec
        with self._lock:
            return [self._cache[t] for t in texts]


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class MockEmbedder(EmbeddingBackend):
    """Hashed bag-of-tokens: each token adds +1 to one of ``dim`` buckets."""

    def __init__(self, dim: int = 256):
        super().__init__()
        self.dim = dim

    def _raw(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for t in texts:
            vec = np.zeros(self.dim)
            toks = tokenize(t) or [t.strip().lower()]
            for tok in toks:
                vec[_bucket(tok, self.dim)] += 1.0
            out.append(vec)
        return out


class HTTPEmbedder(EmbeddingBackend):
    """POST {base_url}/embeddings with a batch ``input`` list."""

    def __init__(self, base_url: str, model: str, dim: int, api_key_env: str = "HLTM_API_KEY",
                 timeout: float = 60.0, batch_size: int = 64):
        super().__init__()
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.batch_size = batch_size

    def _raw(self, texts: list[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for i in range(0, len(texts), self.batch_size):
            batch = texts[i:i + self.batch_size]
            data = _post_json(self.url, {"model": self.model, "input": batch},
                              os.environ.get(self.api_key_env), self.timeout)
            try:
                rows = sorted(data["data"], key=lambda r: r.get("index", 0))
                out.extend(np.asarray(r["embedding"], dtype=np.float64) for r in rows)
            except (KeyError, TypeError) as exc:
                raise BackendUnavailable(f"{self.url}: unexpected reply shape") from exc
            if len(out) < i + len(batch):
                raise BackendUnavailable(f"{self.url}: returned fewer vectors than inputs")
        return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
