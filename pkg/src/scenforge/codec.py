"""Canonical JSON documents for every artifact exchanged between stages.

Documents are UTF-8, key-sorted and indented so that identical artifacts
always produce identical bytes. Each document carries a ``kind`` tag used to
pick the dataclass on the way back in.
"""

from __future__ import annotations

import dataclasses
import json
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

import dacite

from . import model
from .errors import InvariantViolation, SchemaError

T = TypeVar("T")

FORMAT_VERSION = 1

_KINDS: dict[str, type] = {}
_NAMES: dict[type, str] = {}

_DACITE = dacite.Config(cast=[Enum, tuple, frozenset], strict=True)


def register(kind: str):
    """Class decorator registering a dataclass under an artifact kind tag."""

    def wrap(cls: type[T]) -> type[T]:
        _KINDS[kind] = cls
        _NAMES[cls] = kind
        return cls

    return wrap


for _kind, _cls in {
    "focal_method": model.FocalMethod,
    "test_case": model.TestCase,
    "knowledge_item": model.KnowledgeItem,
    "variation_point": model.VariationPoint,
    "template_step": model.TemplateStep,
    "scenario_template": model.ScenarioTemplate,
    "oracle": model.Oracle,
    "scenario_instance": model.ScenarioInstance,
    "rule_prompt": model.RulePrompt,
}.items():
    register(_kind)(_cls)


def kind_of(obj: Any) -> str:
    try:
        return _NAMES[type(obj)]
    except KeyError:
        raise TypeError(f"{type(obj).__name__} is not a registered artifact type") from None


def _plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (frozenset, set)):
        return sorted(_plain(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def to_plain(obj: Any) -> Any:
    """JSON-ready nested structure for a dataclass value."""
    return _plain(obj)


def from_plain(cls: type[T], data: Any) -> T:
    try:
        return dacite.from_dict(cls, data, config=_DACITE)
    except InvariantViolation:
        raise
    except (dacite.DaciteError, TypeError, ValueError) as exc:
        raise SchemaError(cls.__name__, str(exc)) from exc


def dumps(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def serialize_artifact(obj: Any) -> str:
    """Deterministic, key-ordered document for a registered artifact."""
    validate = getattr(obj, "validate", None)
    if callable(validate):
        validate()
    else:
        # re-run construction-time checks on objects that may have been mutated
        post = getattr(obj, "__post_init__", None)
        if callable(post):
            post()
    return dumps({"format": FORMAT_VERSION, "kind": kind_of(obj), "body": to_plain(obj)})


def parse_artifact(text: str, expected: type[T] | None = None) -> T:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {exc.lineno}", exc.msg) from exc
    if not isinstance(doc, dict) or "kind" not in doc or "body" not in doc:
        raise SchemaError("document", "expected an object with 'kind' and 'body'")
    cls = _KINDS.get(doc["kind"])
    if cls is None:
        raise SchemaError("kind", f"unknown artifact kind {doc['kind']!r}")
    if expected is not None and cls is not expected:
        raise SchemaError("kind", f"expected {_NAMES.get(expected)}, got {doc['kind']}")
    return from_plain(cls, doc["body"])


def write_artifact(obj: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_artifact(obj), encoding="utf-8")
    return path


def read_artifact(path: Path, expected: type[T] | None = None) -> T:
    return parse_artifact(Path(path).read_text(encoding="utf-8"), expected)


def artifact_filename(stem: str, obj: Any) -> str:
    """``<stem>.<kind>.json`` naming used for files in an artifact tree."""
    return f"{stem}.{kind_of(obj)}.json"
