"""Small rendering helpers shared by the prompt builders."""

from __future__ import annotations

from typing import Iterable

from .model import KnowledgeItem

NONE_PROVIDED = "(none provided)"
MAX_USAGES = 5


def fence(code: str, lang: str = "") -> str:
    body = code.rstrip("\n")
    ticks = "````" if "```" in body else "```"
    return f"{ticks}{lang}\n{body}\n{ticks}"


def render_item(item: KnowledgeItem, lang: str = "") -> str:
    head = f"[{item.kind.value}] {item.symbol}"
    if item.file:
        head += f"  ({item.file}:{item.line})"
    parts = [head]
    if item.definition.strip():
        parts.append(fence(item.definition, lang))
    if item.usages:
        shown = ", ".join(f"{u.file}:{u.line}" for u in item.usages[:MAX_USAGES])
        more = len(item.usages) - MAX_USAGES
        parts.append(f"referenced at: {shown}" + (f" (+{more} more)" if more > 0 else ""))
    return "\n".join(parts)


def render_knowledge(items: Iterable[KnowledgeItem], lang: str = "") -> str:
    rendered = [render_item(k, lang) for k in items]
    return "\n\n".join(rendered) if rendered else NONE_PROVIDED


def section(title: str, body: str) -> str:
    return f"## {title}\n{body.rstrip()}\n"


def estimate_tokens(text: str) -> int:
    # rough, provider-independent: about four characters per token
    return (len(text) + 3) // 4


def merge_knowledge(known: Iterable[KnowledgeItem], new: Iterable[KnowledgeItem]) -> list[KnowledgeItem]:
    """Union by symbol, first occurrence (and its provenance) wins, order kept."""
    out: dict[str, KnowledgeItem] = {}
    for k in list(known) + list(new):
        out.setdefault(k.symbol, k)
    return list(out.values())
