"""Stage 2: scenario templates and their concrete instances."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from . import codec
from .errors import (
    ChoiceOutOfRange,
    ContextOverflow,
    GenerationFailure,
    InvariantViolation,
    NoValidBundles,
    ParseError,
    QueryBudgetExceeded,
)
from .index import SymbolIndex
from .llm import CompletionRequest, Gateway
from .model import (
    DependencyResolution,
    FocalMethod,
    KnowledgeItem,
    Oracle,
    OracleBasis,
    OracleKind,
    PromptScaffold,
    Provenance,
    RulePrompt,
    ScenarioInstance,
    ScenarioTemplate,
    TestCase,
    validate_settings,
)
from .prompting import estimate_tokens, fence, merge_knowledge, render_item, section
from .templates import extract_template_block, parse_template, render_template

log = logging.getLogger(__name__)

DEFAULT_SCAFFOLD = PromptScaffold(
    instruction=(
        "Write a test scenario template for the method under test. The developer test shown below "
        "is your starting example: generalize the way it exercises the method so that the same plan "
        "can drive several different tests."
    ),
    definition=(
        "A test scenario template is a short numbered plan. Each step states one action in plain words. "
        "A step may declare variation points (VPs): factors whose setting changes how the method under "
        "test behaves, so that choosing different settings yields different test scenarios. A VP may be "
        "a concrete code element (a type, constant or argument) or an abstract choice. A step may depend "
        "on a VP declared in an earlier step."
    ),
    analysis_format=(
        "Start with a brief analysis of the example test: what it prepares, what it calls, what it checks, "
        "and which of those choices could be made differently."
    ),
    query_format=(
        "If you need a definition that is not listed, reply with query lines only and no template:\n"
        "QUERY: <symbol name>\n"
        "Append [KIND: family] to a type name to get that type together with its supertypes and subtypes."
    ),
    template_format=(
        "Write the template in this exact line format, one blank line between steps:\n"
        "STEP <n>: <action>\n"
        "  VP <name>: <what varies> [CANDIDATES: <setting> | <setting>]\n"
        "  DEP <vp name> <- STEP <earlier step number>"
    ),
)

DEFAULT_RULES = (
    "Declare a variation point only for a factor whose settings lead the method under test down different paths or to different results.",
    "Prefer settings that are concrete code elements visible in the code knowledge, such as subtypes, constants or argument values.",
    "Do not declare a variation point for values that only change test data without changing behavior.",
    "Give each variation point a short lowercase name made of plain words.",
)


def initial_prompt() -> RulePrompt:
    return RulePrompt(DEFAULT_SCAFFOLD, DEFAULT_RULES, version=0)


# prompt assembly ---------------------------------------------------------------


@dataclass(frozen=True)
class TemplatePrompt:
    request: CompletionRequest
    dropped: tuple[str, ...] = ()  # knowledge symbols left out to respect the budget


def _relevance(items: list[KnowledgeItem], fm: FocalMethod, tc: TestCase | None) -> list[KnowledgeItem]:
    """Items ordered by how often their name occurs in fm and tc; stable for ties."""
    text = fm.source + "\n" + (tc.source if tc else "")
    words = re.findall(r"[A-Za-z_$][\w$]*", text)
    counts: dict[str, int] = {}
    for w in words:
        counts[w] = counts.get(w, 0) + 1
    ranked = sorted(enumerate(items), key=lambda p: (-counts.get(p[1].simple_name, 0), p[0]))
    return [k for _, k in ranked]


def _rules_text(rules: tuple[str, ...]) -> str:
    return "\n".join(f"{i}. {r}" for i, r in enumerate(rules, 1))


def build_template_prompt(fm: FocalMethod, tc: TestCase | None, knowledge: list[KnowledgeItem],
                          prompt: RulePrompt, lang: str = "", budget_tokens: int | None = None,
                          not_found: tuple[str, ...] = (), tag: str = "stage2.template") -> TemplatePrompt:
    sc = prompt.scaffold

    def assemble(items: list[KnowledgeItem], dropped: list[str]) -> str:
        body = "\n\n".join(render_item(k, lang) for k in items) if items else "(none provided)"
        if dropped:
            body += (f"\n\n({len(dropped)} lower-ranked item(s) omitted to fit the context budget: "
                     + ", ".join(dropped) + ")")
        if not_found:
            body += "\n\nQueried but not found in the project: " + ", ".join(not_found)
        return "\n".join([
            section("Task", sc.instruction + "\n\n" + sc.definition),
            section("Method under test", fence(fm.source, lang)),
            section("Skeleton of the file declaring it", fence(fm.file_skeleton, lang)),
            section("Example test", fence(tc.source, lang) if tc else "(none provided)"),
            section("Code knowledge", body),
            section("Rules for choosing variation points", _rules_text(prompt.rules)),
            section("Requirements", "\n\n".join([
                "(1) " + sc.analysis_format,
                "(2) " + sc.query_format,
                "(3) " + sc.template_format,
            ])),
        ])

    items = list(knowledge)
    dropped: list[str] = []
    text = assemble(items, dropped)
    if budget_tokens is not None and estimate_tokens(text) > budget_tokens:
        ranked = _relevance(items, fm, tc)
        while ranked and estimate_tokens(text) > budget_tokens:
            victim = ranked.pop()
            dropped.append(victim.symbol)
            items = [k for k in items if k.symbol != victim.symbol]
            text = assemble(items, dropped)
        if estimate_tokens(text) > budget_tokens:
            raise ContextOverflow(f"template prompt exceeds {budget_tokens} tokens even without knowledge")
        log.info("knowledge truncated for %s: dropped %s", fm.id, dropped)
    system = "You design test scenarios for unit tests of existing code."
    return TemplatePrompt(CompletionRequest.of(system, text, tag=tag), tuple(dropped))


# template generation -------------------------------------------------------------


@dataclass
class TemplateResult:
    template: ScenarioTemplate
    knowledge: list[KnowledgeItem]
    queries: list[str] = field(default_factory=list)
    dropped: tuple[str, ...] = ()
    text: str = ""


def generate_template(fm: FocalMethod, tc: TestCase | None, knowledge: list[KnowledgeItem], prompt: RulePrompt,
                      gateway: Gateway, index: SymbolIndex | None, max_queries: int = 5,
                      budget_tokens: int | None = None, lang: str = "",
                      tag: str = "stage2.template") -> TemplateResult:
    """Ask for a template, answering knowledge queries (unscoped) until one arrives."""
    lang = lang or (index.language if index else "")
    known = list(knowledge)
    asked: list[str] = []
    not_found: list[str] = []
    rounds = 0
    while True:
        built = build_template_prompt(fm, tc, known, prompt, lang, budget_tokens, tuple(not_found), tag)
        kind, payload = gateway.complete_structured(built.request, "template_or_query")
        if kind == "template":
            block = extract_template_block(payload) or payload
            try:
                template = parse_template(block, fm.id, provenance=prompt.version)
            except (ParseError, InvariantViolation) as exc:
                raise GenerationFailure(f"{fm.id}: generated template rejected: {exc}") from exc
            return TemplateResult(template, known, asked, built.dropped, block)
        rounds += 1
        if index is None:
            raise GenerationFailure(f"{fm.id}: model asked for knowledge but no index is available")
        if rounds > max_queries:
            raise QueryBudgetExceeded(f"{fm.id}: more than {max_queries} query rounds without a template")
        for q in payload:
            label = q.symbol + (f" [{q.kind}]" if q.kind else "")
            asked.append(label)
            found = index.query(q.symbol, q.kind)
            if not found:
                not_found.append(label)
            new = [k.with_provenance(Provenance.STAGE2_QUERY) for k in found]
            known = merge_knowledge(known, new)


# crystallization ----------------------------------------------------------------------


@codec.register("settings_bundle")
@dataclass(frozen=True)
class SettingsBundle:
    settings: dict[str, str]
    primary_oracle: str
    dependencies: tuple[DependencyResolution, ...] = ()
    alternative_oracles: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.primary_oracle.strip():
            raise InvariantViolation("exactly one primary oracle")

    @classmethod
    def from_parsed(cls, raw: dict) -> SettingsBundle:
        return cls(
            settings={k: str(v).strip() for k, v in raw["settings"].items()},
            primary_oracle=raw["primary_oracle"],
            dependencies=tuple(DependencyResolution(d["step"], d["vp"], d["value"]) for d in raw["dependencies"]),
            alternative_oracles=tuple(raw["alternative_oracles"]),
        )


def render_narrative(template: ScenarioTemplate, settings: dict[str, str]) -> str:
    lines = []
    for step in template.steps:
        line = f"{step.step_id}. {step.action}"
        if step.vps:
            line += " [with " + ", ".join(f"{vp.name}={settings[vp.name]}" for vp in step.vps) + "]"
        lines.append(line)
    return "\n".join(lines)


def instantiate(template: ScenarioTemplate, bundle: SettingsBundle) -> ScenarioInstance:
    """Deterministic: identical (template, bundle) pairs give identical instances."""
    problems = validate_settings(template, bundle.settings, bundle.dependencies)
    if problems:
        raise InvariantViolation("settings refer to declared variation points and valid steps", "; ".join(problems))
    ordered = {name: bundle.settings[name] for name in template.vp_names}
    oracles = [Oracle(OracleKind.PRIMARY, bundle.primary_oracle, OracleBasis.IMPLEMENTATION_DEDUCED)]
    oracles += [Oracle(OracleKind.ALTERNATIVE, a, OracleBasis.REQUIREMENT_INFERRED)
                for a in bundle.alternative_oracles]
    deps = tuple(sorted(bundle.dependencies, key=lambda d: (d.step_id, d.vp_name, d.value)))
    return ScenarioInstance(template.ref, ordered, tuple(oracles), render_narrative(template, ordered), deps)


def crystallize_request(template: ScenarioTemplate, fm: FocalMethod, tc: TestCase | None,
                        knowledge: list[KnowledgeItem], max_bundles: int, lang: str = "") -> CompletionRequest:
    example = (
        '{"scenarios": [{"settings": {"<vp name>": "<setting>"}, '
        '"dependencies": [{"step": 2, "vp": "<vp name>", "value": "<value taken from that vp>"}], '
        '"primary_oracle": "<expected outcome derived from the implementation>", '
        '"alternative_oracles": ["<other plausible expectation a requirement might impose>"]}]}'
    )
    user = "\n".join([
        section("Method under test", fence(fm.source, lang)),
        section("Example test", fence(tc.source, lang) if tc else "(none provided)"),
        section("Code knowledge", "\n\n".join(render_item(k, lang) for k in knowledge) or "(none provided)"),
        section("Scenario template", fence(render_template(template))),
        section("Task", (
            f"Propose up to {max_bundles} distinct test scenarios by fixing every variation point of the "
            f"template ({', '.join(template.vp_names)}) to one setting. For each scenario state the expected "
            "outcome as the primary oracle, worked out from the implementation. Where the intended behavior "
            "could reasonably differ from what the code does, add alternative oracles.\n"
            f"Use only the variation point names listed above. Reply with JSON only, shaped like:\n{example}"
        )),
    ])
    return CompletionRequest.of("You turn test scenario templates into concrete test scenarios.", user,
                                tag="stage2.crystallize")


@dataclass(frozen=True)
class RejectedBundle:
    position: int
    reasons: tuple[str, ...]


@dataclass
class CrystallizeResult:
    instances: list[ScenarioInstance]
    bundles: list[SettingsBundle]
    rejected: list[RejectedBundle] = field(default_factory=list)


def crystallize(template: ScenarioTemplate, fm: FocalMethod, tc: TestCase | None, knowledge: list[KnowledgeItem],
                gateway: Gateway, max_bundles: int = 8, lang: str = "") -> CrystallizeResult:
    request = crystallize_request(template, fm, tc, knowledge, max_bundles, lang)
    raw = gateway.complete_structured(request, "vp_settings", declared_vps=template.vp_names)
    result = CrystallizeResult([], [])
    for pos, item in enumerate(raw[:max_bundles]):
        bundle = SettingsBundle.from_parsed(item)
        problems = validate_settings(template, bundle.settings, bundle.dependencies)
        if problems:
            result.rejected.append(RejectedBundle(pos, tuple(problems)))
            log.warning("%s: scenario %d rejected: %s", fm.id, pos + 1, "; ".join(problems))
            continue
        result.bundles.append(bundle)
        result.instances.append(instantiate(template, bundle))
    if len(raw) > max_bundles:
        log.info("%s: %d scenarios beyond the ceiling of %d ignored", fm.id, len(raw) - max_bundles, max_bundles)
    if not result.instances:
        raise NoValidBundles(f"{fm.id}: every proposed scenario failed validation")
    return result


def select_oracle(instance: ScenarioInstance, choice: int | None = None) -> ScenarioInstance:
    """Mark oracle ``choice`` (0 = primary) active; no choice means the primary."""
    if choice is None:
        return replace(instance, active=0)
    if not 0 <= choice < len(instance.oracles):
        raise ChoiceOutOfRange(f"oracle choice {choice} outside 0..{len(instance.oracles) - 1}")
    return replace(instance, active=choice)
