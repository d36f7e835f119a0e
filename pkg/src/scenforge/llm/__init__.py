from .gateway import (
    CompletionRequest,
    Gateway,
    Message,
    Role,
    Transcript,
    TranscriptEntry,
    TranscriptMode,
)
from .providers import ChatProvider, ScriptedProvider
from .schemas import SchemaViolation

__all__ = [
    "ChatProvider",
    "CompletionRequest",
    "Gateway",
    "Message",
    "Role",
    "SchemaViolation",
    "ScriptedProvider",
    "Transcript",
    "TranscriptEntry",
    "TranscriptMode",
]
