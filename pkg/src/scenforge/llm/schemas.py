"""Output shapes the pipeline expects back from the model.

Each parser takes the raw response text (plus optional context) and either
returns a parsed value or raises SchemaViolation with a short reason, which
the gateway feeds back to the model on its single corrective retry.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Callable

from ..model import canonical_vp_name


class SchemaViolation(ValueError):
    pass


_REGISTRY: dict[str, Callable[..., Any]] = {}


def register(schema_id: str):
    def wrap(fn: Callable[..., Any]) -> Callable[..., Any]:
        _REGISTRY[schema_id] = fn
        return fn

    return wrap


def get(schema_id: str) -> Callable[..., Any]:
    try:
        return _REGISTRY[schema_id]
    except KeyError:
        raise KeyError(f"schema {schema_id!r} is not registered") from None


def registered() -> list[str]:
    return sorted(_REGISTRY)


_FENCED = re.compile(r"```[\w+-]*\s*\n(.*?)```", re.DOTALL)


def _require_text(text: str) -> str:
    if not text or not text.strip():
        raise SchemaViolation("empty response")
    return text


def extract_json(text: str) -> Any:
    """First JSON value in the text, preferring fenced blocks."""
    _require_text(text)
    for block in _FENCED.findall(text):
        try:
            return json.loads(block)
        except json.JSONDecodeError:
            continue
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "[{":
            try:
                value, _ = decoder.raw_decode(text[i:])
                return value
            except json.JSONDecodeError:
                continue
    raise SchemaViolation("no JSON value found")


def extract_code(text: str) -> str:
    _require_text(text)
    blocks = _FENCED.findall(text)
    if len(blocks) > 1:
        blocks = [max(blocks, key=len)]
    return blocks[0] if blocks else text


# judge verdict ------------------------------------------------------------


@dataclass(frozen=True)
class JudgeVerdict:
    fulfilled: bool
    tests: tuple[str, ...] = ()


_MATCH = re.compile(r"MATCH\s*:\s*(yes|no)\b", re.IGNORECASE)
_TESTS = re.compile(r"tests?\s*:\s*\[([^\]]*)\]", re.IGNORECASE)


@register("judge_verdict")
def judge_verdict(text: str, available: list[str] | None = None) -> JudgeVerdict:
    _require_text(text)
    m = _MATCH.search(text)
    if not m:
        raise SchemaViolation("missing 'MATCH: yes|no'")
    fulfilled = m.group(1).lower() == "yes"
    if not fulfilled:
        return JudgeVerdict(False)
    t = _TESTS.search(text)
    tests = tuple(s.strip().strip("'\"`") for s in t.group(1).split(",")) if t else ()
    tests = tuple(dict.fromkeys(s for s in tests if s))
    if not tests:
        raise SchemaViolation("'MATCH: yes' must list the matching tests as 'tests: [id, ...]'")
    if available is not None:
        unknown = [s for s in tests if s not in available]
        if unknown:
            raise SchemaViolation(f"unknown test ids {unknown}")
    return JudgeVerdict(True, tests)


# stage 1 --------------------------------------------------------------------


@register("wrong_oracles")
def wrong_oracles(text: str, assertions: int = 1) -> dict[int, list[str]]:
    """``{"oracles": [{"assertion": 1, "wrong": ["..."]}]}``, assertion numbers 1-based."""
    doc = extract_json(text)
    if isinstance(doc, dict):
        doc = doc.get("oracles")
    if not isinstance(doc, list):
        raise SchemaViolation("expected an 'oracles' list")
    out: dict[int, list[str]] = {}
    for item in doc:
        if not isinstance(item, dict) or "wrong" not in item:
            raise SchemaViolation("each entry needs 'assertion' and 'wrong'")
        n = item.get("assertion", 1)
        if not isinstance(n, int) or not 1 <= n <= assertions:
            raise SchemaViolation(f"assertion number {n!r} out of range 1..{assertions}")
        wrong = item["wrong"]
        if not isinstance(wrong, list) or not all(isinstance(w, str) for w in wrong):
            raise SchemaViolation("'wrong' must be a list of statements")
        out.setdefault(n, []).extend(wrong)
    return out


@dataclass(frozen=True)
class ExamReply:
    answer: str | None = None
    queries: tuple[str, ...] = ()


@register("exam_answer")
def exam_answer(text: str, letters: str = "AB") -> ExamReply:
    doc = extract_json(text)
    if not isinstance(doc, dict):
        raise SchemaViolation("expected a JSON object")
    answer, queries = doc.get("answer"), doc.get("queries")
    if (answer is None) == (not queries):
        raise SchemaViolation("give either 'answer' or a non-empty 'queries' list, not both")
    if answer is not None:
        answer = str(answer).strip().upper()
        if answer not in letters:
            raise SchemaViolation(f"answer must be one of {', '.join(letters)}")
        return ExamReply(answer=answer)
    if not isinstance(queries, list) or not all(isinstance(q, str) and q.strip() for q in queries):
        raise SchemaViolation("'queries' must be a list of symbol names")
    return ExamReply(queries=tuple(q.strip() for q in queries))


# stage 2 ---------------------------------------------------------------------


@dataclass(frozen=True)
class QuerySpec:
    symbol: str
    kind: str | None = None


_QUERY = re.compile(r"^\s*QUERY\s*:\s*([^\s\[]+)\s*(?:\[KIND:\s*(\w+)\s*\])?\s*$", re.IGNORECASE)
_STEP_LINE = re.compile(r"^\s*STEP\s+\d+\s*[:.]", re.IGNORECASE | re.MULTILINE)
QUERY_KINDS = ("class", "constructor", "method", "field", "family")


@register("template_or_query")
def template_or_query(text: str) -> tuple[str, Any]:
    """``("template", text)`` or ``("query", [QuerySpec, ...])``."""
    _require_text(text)
    if _STEP_LINE.search(text):
        return "template", text
    queries = []
    for line in text.splitlines():
        m = _QUERY.match(line)
        if m:
            kind = m.group(2).lower() if m.group(2) else None
            if kind is not None and kind not in QUERY_KINDS:
                raise SchemaViolation(f"unknown query kind {kind!r}")
            queries.append(QuerySpec(m.group(1), kind))
    if not queries:
        raise SchemaViolation("expected either a template ('STEP 1: ...') or 'QUERY: <symbol>' lines")
    return "query", queries


@register("vp_settings")
def vp_settings(text: str, declared_vps: list[str] | None = None) -> list[dict[str, Any]]:
    """List of settings bundles; keys are canonicalized VP names.

    Only the shape is enforced here. With ``declared_vps`` the response is
    rejected when no bundle at all stays within the declared VPs; individual
    stray bundles are left for the caller to drop.
    """
    doc = extract_json(text)
    if isinstance(doc, dict):
        doc = doc.get("scenarios", doc.get("bundles"))
    if not isinstance(doc, list) or not doc:
        raise SchemaViolation("expected a non-empty list of scenario settings")
    bundles = []
    for i, raw in enumerate(doc):
        if not isinstance(raw, dict) or not isinstance(raw.get("settings"), dict):
            raise SchemaViolation(f"scenario {i + 1}: missing 'settings' object")
        primary = raw.get("primary_oracle")
        if not isinstance(primary, str) or not primary.strip():
            raise SchemaViolation(f"scenario {i + 1}: missing 'primary_oracle'")
        alternatives = raw.get("alternative_oracles", [])
        if not isinstance(alternatives, list) or not all(isinstance(a, str) for a in alternatives):
            raise SchemaViolation(f"scenario {i + 1}: 'alternative_oracles' must be a list of strings")
        deps = []
        for d in raw.get("dependencies", []):
            if not isinstance(d, dict) or not isinstance(d.get("step"), int) or "vp" not in d:
                raise SchemaViolation(f"scenario {i + 1}: dependencies need 'step', 'vp', 'value'")
            deps.append({"step": d["step"], "vp": canonical_vp_name(str(d["vp"])), "value": str(d.get("value", ""))})
        settings = {canonical_vp_name(str(k)): v if isinstance(v, str) else json.dumps(v)
                    for k, v in raw["settings"].items()}
        bundles.append({
            "settings": settings,
            "dependencies": deps,
            "primary_oracle": primary.strip(),
            "alternative_oracles": [a.strip() for a in alternatives if a.strip()],
        })
    if declared_vps is not None:
        declared = set(declared_vps)
        if not any(set(b["settings"]) <= declared for b in bundles):
            stray = sorted({k for b in bundles for k in b["settings"]} - declared)
            raise SchemaViolation(f"settings reference undeclared variation points {stray}")
    return bundles


# prompt tuning ---------------------------------------------------------------


@dataclass(frozen=True)
class Directive:
    op: str  # add | modify | delete
    text: str = ""
    index: int | None = None  # 1-based rule number for modify/delete
    generalized: bool = False


_DIRECTIVE = re.compile(
    r"^\s*[-*]?\s*(ADD|MODIFY|DELETE)\s*(\d+)?\s*(\[generalized\])?\s*(?::\s*(.*))?$", re.IGNORECASE
)
_NO_CHANGE = re.compile(r"^\s*(NONE|NO CHANGE|KEEP)\s*$", re.IGNORECASE)


@register("rule_directives")
def rule_directives(text: str, max_directives: int = 10) -> list[Directive]:
    _require_text(text)
    found: list[Directive] = []
    no_change = False
    for line in text.splitlines():
        if _NO_CHANGE.match(line):
            no_change = True
            continue
        m = _DIRECTIVE.match(line)
        if not m:
            continue
        op = m.group(1).lower()
        index = int(m.group(2)) if m.group(2) else None
        body = (m.group(4) or "").strip()
        if op in ("modify", "delete") and index is None:
            raise SchemaViolation(f"{op.upper()} needs a rule number")
        if op in ("add", "modify") and not body:
            raise SchemaViolation(f"{op.upper()} needs rule text")
        found.append(Directive(op, body, index, bool(m.group(3))))
    if not found and not no_change:
        raise SchemaViolation("expected ADD/MODIFY/DELETE directives or NONE")
    return found[:max_directives]


@register("vp_alignment")
def vp_alignment(text: str, predicted: list[str], truth: list[str]) -> list[tuple[str, str]]:
    """Lines ``<predicted_vp> = <truth_vp>``; ``NONE`` when nothing matches."""
    _require_text(text)
    pairs: list[tuple[str, str]] = []
    seen_p: set[str] = set()
    seen_t: set[str] = set()
    for line in text.splitlines():
        if "=" not in line:
            continue
        left, right = (canonical_vp_name(s) for s in line.split("=", 1))
        if left not in predicted or right not in truth:
            raise SchemaViolation(f"unknown variation point in {line.strip()!r}")
        if left in seen_p or right in seen_t:
            raise SchemaViolation("each variation point may be matched at most once")
        seen_p.add(left)
        seen_t.add(right)
        pairs.append((left, right))
    if not pairs and not any(_NO_CHANGE.match(line) for line in text.splitlines()):
        raise SchemaViolation("expected '<predicted> = <truth>' lines or NONE")
    return pairs


# stage 3 ---------------------------------------------------------------------


@register("test_method")
def single_test_method(text: str, profile: Any) -> tuple[tuple[str, ...], str]:
    """``(imports, method_source)`` for a single-test response."""
    code = extract_code(text)
    try:
        return profile.split_test_response(code)
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from exc

