"""Domain types exchanged between pipeline stages.

All types are frozen dataclasses validated on construction, so any instance
that exists satisfies its intrinsic invariants. Cross-object rules (a test's
focal method resolves, instance settings cover a template) live in the
``validate_*`` helpers below.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum

from .errors import InvariantViolation

_CANONICAL_VP = re.compile(r"^[a-z0-9]+(?:_[a-z0-9]+)*$")
_NON_WORD = re.compile(r"[^a-z0-9]+")
_ANNOTATION = re.compile(r"^(?:@[\w.]+(?:\([^)]*\))?\s*)+")


def canonical_vp_name(raw: str) -> str:
    """Normalize an LLM-produced VP name: trimmed, lowercase, snake case."""
    return _NON_WORD.sub("_", raw.strip().lower()).strip("_")


def _ws(text: str) -> str:
    return " ".join(text.split())


class Origin(str, Enum):
    DEVELOPER = "developer"
    GENERATED = "generated"
    REPAIRED = "repaired"


class SymbolKind(str, Enum):
    CLASS = "class"
    CONSTRUCTOR = "constructor"
    METHOD = "method"
    FIELD = "field"


class Provenance(str, Enum):
    INDEXED = "indexed"
    STAGE1_EXAM = "stage1_exam"
    STAGE2_QUERY = "stage2_query"
    STAGE3_ERROR = "stage3_error"


class VPKind(str, Enum):
    CODE_ELEMENT = "code_element"
    ABSTRACT_CHOICE = "abstract_choice"


class OracleKind(str, Enum):
    PRIMARY = "primary"
    ALTERNATIVE = "alternative"


class OracleBasis(str, Enum):
    IMPLEMENTATION_DEDUCED = "implementation_deduced"
    REQUIREMENT_INFERRED = "requirement_inferred"


def method_header(source: str) -> str:
    """Declaration header of a method: text before the body opener, whitespace-collapsed."""
    lines = [ln for ln in source.strip().splitlines() if not ln.strip().startswith("@")]
    header: list[str] = []
    for ln in lines:
        if "{" in ln:
            header.append(ln.split("{", 1)[0])
            break
        header.append(ln)
        if ln.rstrip().endswith(":"):
            break
    text = _ANNOTATION.sub("", _ws(" ".join(header)))
    return text.rstrip(":").rstrip()


@dataclass(frozen=True)
class FocalMethod:
    id: str
    source: str
    file_skeleton: str
    project: str
    commit: str = ""
    file: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise InvariantViolation("focal id non-empty")
        if not self.source.strip():
            raise InvariantViolation("source non-empty", self.id)
        if _ws(self.signature) not in _ws(self.file_skeleton):
            raise InvariantViolation("skeleton contains signature", self.signature)

    @property
    def signature(self) -> str:
        return method_header(self.source)

    @property
    def qualified_name(self) -> str:
        return self.id.split(":", 1)[-1]

    @property
    def method_name(self) -> str:
        return self.qualified_name.split("(", 1)[0].rsplit(".", 1)[-1]

    @property
    def class_name(self) -> str:
        return self.qualified_name.split("(", 1)[0].rsplit(".", 1)[0]


@dataclass(frozen=True)
class AssertionSite:
    statement: str
    offset: int

    def line_in(self, source: str) -> int:
        return source.count("\n", 0, self.offset) + 1


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # keep pytest from collecting this class

    id: str
    name: str
    source: str
    focal_id: str
    assertions: tuple[AssertionSite, ...] = ()
    origin: Origin = Origin.DEVELOPER
    file: str = ""
    container: str = ""
    imports: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.source.strip():
            raise InvariantViolation("source non-empty", self.id)
        for site in self.assertions:
            end = site.offset + len(site.statement)
            if not site.statement or site.offset < 0 or self.source[site.offset:end] != site.statement:
                raise InvariantViolation("assertion positions lie within source", site.statement)


@dataclass(frozen=True)
class Usage:
    file: str
    line: int


@dataclass(frozen=True)
class KnowledgeItem:
    symbol: str
    kind: SymbolKind
    definition: str
    usages: tuple[Usage, ...] = ()
    provenance: Provenance = Provenance.INDEXED
    file: str = ""
    line: int = 0
    end_line: int = 0

    def __post_init__(self) -> None:
        if not self.symbol:
            raise InvariantViolation("symbol non-empty")
        if self.kind is not SymbolKind.FIELD and not self.definition.strip():
            raise InvariantViolation("definition non-empty", self.symbol)

    @property
    def simple_name(self) -> str:
        return simple_name(self.symbol)

    def with_provenance(self, provenance: Provenance) -> KnowledgeItem:
        return replace(self, provenance=provenance)


def simple_name(qualified: str) -> str:
    return qualified.split("(", 1)[0].rsplit(".", 1)[-1]


@dataclass(frozen=True)
class VariationPoint:
    name: str
    description: str = ""
    candidates: tuple[str, ...] = ()
    kind: VPKind = VPKind.ABSTRACT_CHOICE

    def __post_init__(self) -> None:
        if not _CANONICAL_VP.match(self.name):
            raise InvariantViolation("canonical vp name", repr(self.name))


@dataclass(frozen=True)
class Dependency:
    vp_name: str
    step_id: int


@dataclass(frozen=True)
class TemplateStep:
    step_id: int
    action: str
    vps: tuple[VariationPoint, ...] = ()
    deps: tuple[Dependency, ...] = ()

    def __post_init__(self) -> None:
        if not self.action.strip():
            raise InvariantViolation("action non-empty", f"step {self.step_id}")
        names = [vp.name for vp in self.vps]
        if len(set(names)) != len(names):
            raise InvariantViolation("vp names unique", f"step {self.step_id}")


@dataclass(frozen=True)
class ScenarioTemplate:
    focal_id: str
    steps: tuple[TemplateStep, ...]
    provenance: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if [s.step_id for s in self.steps] != list(range(1, len(self.steps) + 1)):
            raise InvariantViolation("step ids contiguous", str([s.step_id for s in self.steps]))
        declared: dict[str, int] = {}
        for step in self.steps:
            for vp in step.vps:
                if vp.name in declared:
                    raise InvariantViolation("vp names unique", vp.name)
                declared[vp.name] = step.step_id
        for step in self.steps:
            for dep in step.deps:
                home = declared.get(dep.vp_name)
                if home is None:
                    raise InvariantViolation("dependency on undeclared vp", dep.vp_name)
                if dep.step_id >= step.step_id or home >= step.step_id:
                    raise InvariantViolation(
                        "forward dependency", f"step {step.step_id} -> {dep.vp_name} (step {home})"
                    )
                if home != dep.step_id:
                    raise InvariantViolation(
                        "dependency step mismatch", f"{dep.vp_name} is declared in step {home}"
                    )
        if not declared:
            raise InvariantViolation("at least one VP", self.focal_id)

    @property
    def vps(self) -> list[VariationPoint]:
        return [vp for step in self.steps for vp in step.vps]

    @property
    def vp_names(self) -> list[str]:
        return [vp.name for vp in self.vps]

    @property
    def ref(self) -> str:
        return f"{self.focal_id}@v{self.provenance}"


@dataclass(frozen=True)
class Oracle:
    kind: OracleKind
    statement: str
    basis: OracleBasis

    def __post_init__(self) -> None:
        if not self.statement.strip():
            raise InvariantViolation("oracle statement non-empty")
        if self.kind is OracleKind.PRIMARY and self.basis is not OracleBasis.IMPLEMENTATION_DEDUCED:
            raise InvariantViolation("primary oracle is implementation deduced")


@dataclass(frozen=True)
class DependencyResolution:
    step_id: int
    vp_name: str
    value: str


@dataclass(frozen=True)
class ScenarioInstance:
    template_ref: str
    settings: dict[str, str]
    oracles: tuple[Oracle, ...]
    narrative: str
    setting_deps: tuple[DependencyResolution, ...] = ()
    active: int = 0

    def __post_init__(self) -> None:
        primaries = [o for o in self.oracles if o.kind is OracleKind.PRIMARY]
        if len(primaries) != 1:
            raise InvariantViolation("exactly one primary oracle", f"found {len(primaries)}")
        if not 0 <= self.active < len(self.oracles):
            raise InvariantViolation("active oracle in range", str(self.active))
        # primary first; `active` keeps pointing at the same oracle
        order = sorted(range(len(self.oracles)), key=lambda i: self.oracles[i].kind is not OracleKind.PRIMARY)
        if order != list(range(len(self.oracles))):
            object.__setattr__(self, "oracles", tuple(self.oracles[i] for i in order))
            object.__setattr__(self, "active", order.index(self.active))

    @property
    def primary(self) -> Oracle:
        return self.oracles[0]

    @property
    def active_oracle(self) -> Oracle:
        return self.oracles[self.active]


@dataclass(frozen=True)
class PromptScaffold:
    """Fixed sections of the template-generation prompt (never edited by tuning)."""

    instruction: str
    definition: str
    analysis_format: str
    query_format: str
    template_format: str


@dataclass(frozen=True)
class RulePrompt:
    scaffold: PromptScaffold
    rules: tuple[str, ...] = ()
    version: int = 0
    lineage: int | None = None

    def __post_init__(self) -> None:
        if self.version < 0:
            raise InvariantViolation("version non-negative")
        if self.lineage is not None and self.lineage >= self.version:
            raise InvariantViolation("version increases along lineage", f"{self.lineage} -> {self.version}")
        if any(not r.strip() for r in self.rules):
            raise InvariantViolation("rules non-empty")

    def revise(self, rules: tuple[str, ...] | list[str]) -> RulePrompt:
        return RulePrompt(self.scaffold, tuple(rules), self.version + 1, self.version)


# cross-object validation


def validate_settings(template: ScenarioTemplate, settings: dict[str, str],
                      deps: tuple[DependencyResolution, ...] = ()) -> list[str]:
    """Return the list of violated rules (empty when the settings are acceptable)."""
    problems: list[str] = []
    declared = template.vp_names
    for key in settings:
        if key not in declared:
            problems.append(f"undeclared vp {key!r}")
    for name in declared:
        if name not in settings:
            problems.append(f"missing setting for vp {name!r}")
        elif not str(settings[name]).strip():
            problems.append(f"empty setting for vp {name!r}")
    step_ids = {s.step_id for s in template.steps}
    for res in deps:
        if res.step_id not in step_ids:
            problems.append(f"invalid template step {res.step_id}")
        if res.vp_name not in declared:
            problems.append(f"dependency on undeclared vp {res.vp_name!r}")
    return problems


def validate_instance(instance: ScenarioInstance, template: ScenarioTemplate) -> None:
    problems = validate_settings(template, instance.settings, instance.setting_deps)
    if instance.template_ref != template.ref:
        problems.append(f"template_ref {instance.template_ref!r} != {template.ref!r}")
    if problems:
        raise InvariantViolation("instance matches template", "; ".join(problems))


def validate_workspace(focals: list[FocalMethod], tests: list[TestCase]) -> None:
    ids = [f.id for f in focals]
    if len(set(ids)) != len(ids):
        raise InvariantViolation("focal id unique within workspace")
    known = set(ids)
    for tc in tests:
        if tc.focal_id not in known:
            raise InvariantViolation("focal_id resolves", tc.focal_id)

