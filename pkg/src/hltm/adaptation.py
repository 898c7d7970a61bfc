"""Mining recurring query patterns and salient facet names from a query log.

A pattern is the query text with every parsed facet value replaced by a
``<key>`` placeholder, lowercased and whitespace-collapsed. Patterns and facet
names are counted exactly and kept only at or above ``min_support``.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Callable, Iterable, Optional, Sequence

from .errors import WindowEmpty
from .memory import content_hash
from .models import parse_timestamp

Parser = Callable[[str], list[tuple[str, str]]]


@dataclass
class QueryPatternProfile:
    patterns: list[tuple[str, int]] = field(default_factory=list)
    facet_names: list[tuple[str, int]] = field(default_factory=list)
    window: tuple[Optional[str], Optional[str]] = (None, None)
    min_support: int = 3
    approved: bool = False

    @property
    def id(self) -> str:
        return content_hash({"patterns": self.patterns, "facet_names": self.facet_names,
                             "window": list(self.window), "min_support": self.min_support})

    def facet_name_list(self) -> list[str]:
        return [name for name, _ in self.facet_names]

    def pattern_list(self) -> list[str]:
        return [p for p, _ in self.patterns]

    def is_empty(self) -> bool:
        return not self.patterns and not self.facet_names

    def to_dict(self) -> dict:
        return {"id": self.id, "patterns": [list(p) for p in self.patterns],
                "facet_names": [list(f) for f in self.facet_names],
                "window": list(self.window), "min_support": self.min_support,
                "approved": self.approved}

    @classmethod
    def from_dict(cls, d: dict) -> "QueryPatternProfile":
        return cls(patterns=[(p, int(n)) for p, n in d.get("patterns", [])],
                   facet_names=[(f, int(n)) for f, n in d.get("facet_names", [])],
                   window=tuple(d.get("window", (None, None))),
                   min_support=int(d.get("min_support", 3)),
                   approved=bool(d.get("approved", False)))


def template(text: str, facets: Sequence[tuple[str, str]]) -> str:
    out = text
    # longest values first so a value that contains another is replaced whole
    for key, value in sorted(facets, key=lambda kv: -len(kv[1])):
        if value:
            out = re.sub(re.escape(value), f"<{key}>", out, flags=re.IGNORECASE)
    return " ".join(out.lower().split())


def _ranked(counts: Counter, min_support: int) -> list[tuple[str, int]]:
    kept = [(k, n) for k, n in counts.items() if n >= min_support]
    return sorted(kept, key=lambda kv: (-kv[1], kv[0]))


def select_window(queries: Iterable[tuple[str, object]],
                  window: Optional[tuple[object, object]] = None,
                  days: int = 30, max_queries: int = 10_000) -> tuple[list[tuple[str, datetime]], tuple]:
    """Apply an explicit (start, end) window, or the default: the last ``days``
    days before the newest query, capped at the newest ``max_queries``."""
    rows = sorted(((t, parse_timestamp(ts)) for t, ts in queries), key=lambda r: r[1])
    if not rows:
        raise WindowEmpty("no queries supplied")
    if window is not None:
        start = parse_timestamp(window[0]) if window[0] is not None else rows[0][1]
        end = parse_timestamp(window[1]) if window[1] is not None else rows[-1][1]
        rows = [r for r in rows if start <= r[1] <= end]
    else:
        end = rows[-1][1]
        start = end - timedelta(days=days)
        rows = [r for r in rows if r[1] >= start][-max_queries:]
        if rows:
            start = rows[0][1]
    if not rows:
        raise WindowEmpty("no queries fall inside the window")
    return rows, (start.isoformat(), end.isoformat())


def mine_profile(queries: Iterable[tuple[str, object]], parse: Parser,
                 window: Optional[tuple[object, object]] = None, min_support: int = 3,
                 days: int = 30, max_queries: int = 10_000) -> QueryPatternProfile:
    if min_support < 2:
        raise ValueError("min_support must be at least 2")
    rows, bounds = select_window(queries, window, days, max_queries)
    pattern_counts: Counter = Counter()
    facet_counts: Counter = Counter()
    for text, _ts in rows:
        facets = parse(text)
        facet_counts.update({k for k, _ in facets})
        pattern_counts[template(text, facets)] += 1
    return QueryPatternProfile(patterns=_ranked(pattern_counts, min_support),
                               facet_names=_ranked(facet_counts, min_support),
                               window=bounds, min_support=min_support)
