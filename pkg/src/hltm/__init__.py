"""Hierarchical long-term semantic memory for LLM agents.

A schema-aligned memory tree whose nodes hold facet, answerable-QA and summary
views, queried with identity-scoped multi-signal retrieval and kept fresh by
lossless incremental indexing.
"""

from .backends import (
    EmbeddingBackend,
    ExtractionRequest,
    GenerationBackend,
    HTTPEmbedder,
    HTTPGenerator,
    MockEmbedder,
    MockGenerator,
    Schema,
    UsageRecord,
    cosine,
    track_usage,
)
from .config import Config
from .engine import Engine, QueryResponse
from .indexer import DirtySet, IndexReport, Reason, check_equivalence
from .models import Document, Facet, NodeMemory, QAPair, SummaryView
from .retrieval import Query, RetrievalResult
from .store import MemoryStore, View
from .tree import MemoryTree, TreeNode

__version__ = "0.1.0"

__all__ = [
    "Config", "DirtySet", "Document", "EmbeddingBackend", "Engine", "ExtractionRequest",
    "Facet", "GenerationBackend", "HTTPEmbedder", "HTTPGenerator", "IndexReport",
    "MemoryStore", "MemoryTree", "MockEmbedder", "MockGenerator", "NodeMemory", "QAPair",
    "Query", "QueryResponse", "Reason", "RetrievalResult", "Schema", "SummaryView",
    "TreeNode", "UsageRecord", "View", "check_equivalence", "cosine", "track_usage",
]
