"""Engine configuration, read from a single JSON file.

Example::

    {
      "backend": "mock",
      "store_path": "data/hltm.log",
      "retrieval": {"k_facet": 5, "k_qa": 5, "k_summary": 5, "k_inner": 3},
      "generation": {"base_url": "https://llm.internal/v1", "model": "gpt-4o-mini",
                     "api_key_env": "HLTM_API_KEY"},
      "embedding": {"base_url": "https://llm.internal/v1", "model": "text-embedding-3-large",
                    "dim": 3072}
    }
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

DEFAULTS: dict[str, Any] = {
    "backend": "mock",
    "store_path": None,
    "generation": {"base_url": "", "model": "", "api_key_env": "HLTM_API_KEY",
                   "timeout": 60.0, "temperature": 0.0},
    "embedding": {"base_url": "", "model": "", "api_key_env": "HLTM_API_KEY",
                  "dim": 256, "timeout": 60.0, "batch_size": 64},
    "retrieval": {"k_facet": 5, "k_qa": 5, "k_summary": 5, "k_inner": 3, "query_parser": "llm"},
    "answer": {"context_token_cap": 4000},
    "memory": {"max_facets": 64, "max_qa": 32, "doc_token_budget": 8000},
    "aggregation": {"prune_min_children": 0},
    "indexing": {"workers": 4},
    "adaptation": {"review_mode": True, "min_support": 3, "window_days": 30,
                   "window_max_queries": 10000},
    "logging": {"level": "WARNING"},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class Config:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    source: Optional[Path] = None

    @classmethod
    def from_dict(cls, data: dict, source: Optional[Path] = None) -> "Config":
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(_merge(DEFAULTS, data), source)
        if cfg.backend not in ("mock", "http"):
            raise ValueError(f"backend must be 'mock' or 'http', got {cfg.backend!r}")
        return cfg

    @classmethod
    def load(cls, path: Optional[str | Path]) -> "Config":
        if path is None:
            return cls()
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            cfg = cls.from_dict(json.load(fh), path)
        sp = cfg.data.get("store_path")
        if sp and not Path(sp).is_absolute():
            cfg.data["store_path"] = str(path.parent / sp)
        return cfg

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def backend(self) -> str:
        return self.data["backend"]
