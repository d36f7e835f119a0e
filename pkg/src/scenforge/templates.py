"""Line-oriented text form of scenario templates.

::

    STEP 1: Create a document writing to an output path
    STEP 2: Open a page on the document canvas
      VP canvas_setting: Page layout used by the canvas [CANDIDATES: default A4 | custom size]
    STEP 3: Set the paint
      VP paint_style: Kind of paint passed to the focal method [CANDIDATES: Color | LinearGradientPaint]
      DEP canvas_setting <- STEP 2

An optional ``[KIND: code_element]`` suffix marks a VP that is a concrete code
element; VPs without it are abstract choices.
"""

from __future__ import annotations

import re

from .errors import ParseError
from .model import (
    Dependency,
    ScenarioTemplate,
    TemplateStep,
    VariationPoint,
    VPKind,
    canonical_vp_name,
)

_STEP = re.compile(r"^\s*STEP\s+(\d+)\s*[:.]\s*(.*)$", re.IGNORECASE)
_VP = re.compile(r"^\s*VP\s+([^:]+?)\s*:\s*(.*)$", re.IGNORECASE)
_DEP = re.compile(r"^\s*DEP\s+(.+?)\s*<-\s*STEP\s+(\d+)\s*$", re.IGNORECASE)
_CANDIDATES = re.compile(r"\[CANDIDATES:\s*(.*?)\]\s*(?=\[KIND:|$)", re.IGNORECASE)
_KIND = re.compile(r"\[KIND:\s*(\w+)\s*\]\s*$", re.IGNORECASE)
_BAR = re.compile(r"\s*(?<!\|)\|(?!\|)\s*")
_FENCE = re.compile(r"^\s*```")


def _parse_vp(name_raw: str, rest: str, lineno: int) -> VariationPoint:
    kind = VPKind.ABSTRACT_CHOICE
    m = _KIND.search(rest)
    if m:
        try:
            kind = VPKind(m.group(1).lower())
        except ValueError:
            raise ParseError(lineno, f"unknown VP kind {m.group(1)!r}") from None
        rest = rest[: m.start()].rstrip()
    candidates: tuple[str, ...] = ()
    m = _CANDIDATES.search(rest)
    if m:
        candidates = tuple(c for c in _BAR.split(m.group(1).strip()) if c)
        rest = rest[: m.start()].rstrip()
    name = canonical_vp_name(name_raw)
    if not name:
        raise ParseError(lineno, "empty VP name")
    return VariationPoint(name=name, description=rest.strip(), candidates=candidates, kind=kind)


def parse_template(text: str, focal_id: str, provenance: int = 0) -> ScenarioTemplate:
    """Parse the text form; raises ParseError on grammar violations and
    InvariantViolation when the parsed template breaks a template rule."""
    steps: list[dict] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or _FENCE.match(line):
            continue
        if m := _STEP.match(line):
            action = m.group(2).strip()
            if not action:
                raise ParseError(lineno, "step without action")
            steps.append({"id": int(m.group(1)), "action": action, "vps": [], "deps": []})
            continue
        if not steps:
            raise ParseError(lineno, "expected 'STEP <n>: <action>'")
        if m := _VP.match(line):
            steps[-1]["vps"].append(_parse_vp(m.group(1), m.group(2), lineno))
        elif m := _DEP.match(line):
            steps[-1]["deps"].append(Dependency(canonical_vp_name(m.group(1)), int(m.group(2))))
        else:
            raise ParseError(lineno, f"unrecognized line {line.strip()[:60]!r}")
    built = [TemplateStep(s["id"], s["action"], tuple(s["vps"]), tuple(s["deps"])) for s in steps]
    return ScenarioTemplate(focal_id=focal_id, steps=tuple(built), provenance=provenance)


def render_vp(vp: VariationPoint) -> str:
    line = f"VP {vp.name}: {vp.description}".rstrip()
    if vp.candidates:
        line += f" [CANDIDATES: {' | '.join(vp.candidates)}]"
    if vp.kind is VPKind.CODE_ELEMENT:
        line += " [KIND: code_element]"
    return line


def render_template(template: ScenarioTemplate) -> str:
    blocks = []
    for step in template.steps:
        lines = [f"STEP {step.step_id}: {step.action}"]
        lines += [f"  {render_vp(vp)}" for vp in step.vps]
        lines += [f"  DEP {d.vp_name} <- STEP {d.step_id}" for d in step.deps]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def extract_template_block(response: str) -> str | None:
    """Template text inside an LLM response, from the first STEP line onward."""
    lines = response.splitlines()
    for i, line in enumerate(lines):
        if _STEP.match(line):
            body = []
            for tail in lines[i:]:
                if _FENCE.match(tail):
                    break
                body.append(tail)
            return "\n".join(body)
    return None
