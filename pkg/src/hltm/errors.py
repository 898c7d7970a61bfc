"""Exception hierarchy shared by every layer of the memory engine."""

from __future__ import annotations


class HLTMError(Exception):
    """Base class. ``code`` is the machine-readable name used by the CLI and HTTP layer."""

    code = "error"
    http_status = 400

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.__class__.__name__)
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": str(self)}
        if self.details:
            out["details"] = self.details
        return out


# topology
class UnknownNode(HLTMError):
    code = "unknown_node"
    http_status = 404


class UnknownParent(UnknownNode):
    code = "unknown_parent"


class UnknownScope(UnknownNode):
    code = "unknown_scope"


class AmbiguousKey(HLTMError):
    code = "ambiguous_key"


class DuplicateBusinessKey(HLTMError):
    code = "duplicate_business_key"
    http_status = 409


class LeafPromotion(HLTMError):
    code = "leaf_promotion"
    http_status = 409


class NotALeaf(HLTMError):
    code = "not_a_leaf"


class TopologyError(HLTMError):
    code = "topology_error"


# backends
class BackendUnavailable(HLTMError):
    code = "backend_unavailable"
    http_status = 503


class MalformedResponse(HLTMError):
    code = "malformed_response"
    http_status = 502


class EmptyText(HLTMError):
    code = "empty_text"


class DimMismatch(HLTMError):
    code = "dim_mismatch"


# memory / storage
class EmptyDocuments(HLTMError):
    code = "empty_documents"


class EmptyChildren(HLTMError):
    code = "empty_children"


class StaleVersion(HLTMError):
    code = "stale_version"
    http_status = 409


class EmptyScope(HLTMError):
    code = "empty_scope"


class MissingMemory(HLTMError):
    code = "missing_memory"
    http_status = 404


class EmptyContext(HLTMError):
    code = "empty_context"


class MalformedDump(HLTMError):
    code = "malformed_dump"


# adaptation
class WindowEmpty(HLTMError):
    code = "window_empty"


class NotApproved(HLTMError):
    code = "not_approved"
    http_status = 409


class UnknownProfile(HLTMError):
    code = "unknown_profile"
    http_status = 404


# evaluation
class EmptyGold(HLTMError):
    code = "empty_gold"


class UnknownEntity(HLTMError):
    code = "unknown_entity"
