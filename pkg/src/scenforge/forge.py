"""Stage 3: write a test for each scenario instance and repair it until it runs."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from . import codec
from .errors import InvariantViolation, MalformedOutput, TimeoutExceeded
from .index import SymbolIndex
from .lang import ErrorElement, LanguageProfile
from .llm import CompletionRequest, Gateway
from .model import (
    FocalMethod,
    KnowledgeItem,
    OracleKind,
    Origin,
    Provenance,
    ScenarioInstance,
    TestCase,
)
from .prompting import fence, render_knowledge, section
from .runner import Runner, RunOutcome, RunStatus

log = logging.getLogger(__name__)

_WRITE_SYSTEM = (
    "You write unit tests for an existing code base. You follow the style of the example test "
    "and use only APIs that exist in the code you are shown."
)
_REPAIR_SYSTEM = (
    "You fix unit tests that do not compile or do not run. Change only what the error messages "
    "point at and keep the scenario the test was written for."
)


# naming -------------------------------------------------------------------------------


def _words_of(value: str) -> list[str]:
    # "org.x.RadialGradientPaint" -> RadialGradientPaint, "new RadialGradientPaint(...)" -> new RadialGradientPaint
    value = re.sub(r"\(.*", "", value.strip())
    value = value.rsplit(".", 1)[-1] if re.fullmatch(r"[\w.]+", value) else value
    words = re.findall(r"[A-Za-z0-9]+", value)
    return words[:4]


def test_name_for(fm: FocalMethod, instance: ScenarioInstance, profile: LanguageProfile,
                  vary: list[str] | None = None) -> str:
    """Method name plus the settings that distinguish this instance (all settings when ``vary`` is None)."""
    names = list(instance.settings) if vary is None else [n for n in instance.settings if n in vary]
    words = [fm.method_name]
    for n in names:
        words.extend(_words_of(instance.settings[n]))
    return profile.test_name(words)


def unique_name(name: str, taken: set[str]) -> str:
    if name not in taken:
        return name
    n = 2
    while f"{name}{n}" in taken:
        n += 1
    return f"{name}{n}"


# generation ----------------------------------------------------------------------------


def _oracle_text(instance: ScenarioInstance) -> str:
    oracle = instance.active_oracle
    label = "expected outcome" if oracle.kind is OracleKind.PRIMARY else "expected outcome (chosen alternative)"
    return f"{label}: {oracle.statement}"


def test_request(instance: ScenarioInstance, fm: FocalMethod, tc: TestCase, knowledge: list[KnowledgeItem],
                 name: str, lang: str, tag: str = "stage3.generate") -> CompletionRequest:
    user = "\n".join([
        section("Method under test", fence(fm.source, lang)),
        section("Skeleton of the file declaring it", fence(fm.file_skeleton, lang)),
        section("Example test", fence(tc.source, lang)),
        section("Code knowledge", render_knowledge(knowledge, lang)),
        section("Scenario to test", instance.narrative),
        section("Oracle", _oracle_text(instance) + "\nThe test must check exactly this outcome."),
        section("Task", (
            f"Write one new test method named {name} that carries out the scenario and checks the oracle. "
            "It will be added next to the example test, so it can use the same imports and fixtures. "
            "Reply with a single code block containing the imports it needs (if any) followed by that one "
            "method. Do not write more than one method."
        )),
    ])
    return CompletionRequest.of(_WRITE_SYSTEM, user, tag=tag)


def _as_test(method: str, imports: tuple[str, ...], name: str, base: TestCase, profile: LanguageProfile,
             origin: Origin) -> TestCase:
    method = profile.rename_method(method, name)
    return TestCase(
        id=f"{base.file}::{base.container}::{name}" if base.container else f"{base.file}::{name}",
        name=name,
        source=method,
        focal_id=base.focal_id,
        assertions=profile.assertion_sites(method),
        origin=origin,
        file=base.file,
        container=base.container,
        imports=tuple(imports),
    )


def generate_test(instance: ScenarioInstance, fm: FocalMethod, tc: TestCase, knowledge: list[KnowledgeItem],
                  gateway: Gateway, profile: LanguageProfile, name: str) -> TestCase:
    """A single generated test method for ``instance`` (raises MalformedOutput otherwise)."""
    request = test_request(instance, fm, tc, knowledge, name, profile.name)
    imports, method = gateway.complete_structured(request, "test_method", profile=profile)
    return _as_test(method, imports, name, tc, profile, Origin.GENERATED)


# error elements -------------------------------------------------------------------------


def extract_error_elements(messages: list[str] | tuple[str, ...], profile: LanguageProfile) -> list[ErrorElement]:
    """Named program elements and positions mentioned by compiler diagnostics or project frames."""
    return profile.error_elements(list(messages))


# repair ----------------------------------------------------------------------------------


class RepairStatus(str, Enum):
    PASSING = "passing"
    FAILING_AFTER_MAX = "failing_after_max"


@dataclass(frozen=True)
class Retrieved:
    element: str  # name of the extracted element that led to this item
    symbol: str


@dataclass(frozen=True)
class RepairAttempt:
    source: str
    status: RunStatus
    messages: tuple[str, ...] = ()
    elements: tuple[ErrorElement, ...] = ()
    retrieved: tuple[Retrieved, ...] = ()


ORACLE_POLICY_PRIMARY = ("assertion failures are repaired without changing the asserted outcome; "
                         "candidates that change it are rejected")
ORACLE_POLICY_ALTERNATIVE = ("the active oracle is an alternative; an assertion failure is escalated "
                             "to the developer instead of repaired")


@codec.register("repair_record")
@dataclass(frozen=True)
class RepairRecord:
    test_id: str
    attempts: tuple[RepairAttempt, ...]
    final_status: RepairStatus
    iterations: int
    max_iter: int
    oracle_policy: str
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.iterations != len(self.attempts):
            raise InvariantViolation("attempt count equals iterations", f"{len(self.attempts)} != {self.iterations}")
        if not 1 <= self.iterations <= self.max_iter:
            raise InvariantViolation("iterations within max", f"{self.iterations} > {self.max_iter}")
        passed = self.attempts[-1].status is RunStatus.PASS
        if passed != (self.final_status is RepairStatus.PASSING):
            raise InvariantViolation("final status matches last attempt", self.final_status.value)
        for a in self.attempts:
            names = {e.name for e in a.elements}
            if any(r.element not in names for r in a.retrieved):
                raise InvariantViolation("retrieved items come from extracted elements", self.test_id)

    @property
    def final_source(self) -> str:
        return self.attempts[-1].source


def _repair_request(fm: FocalMethod, test: TestCase, outcome: RunOutcome, retrieved: list[KnowledgeItem],
                    instance: ScenarioInstance | None, lang: str) -> CompletionRequest:
    kind = {
        RunStatus.COMPILE_ERROR: "does not compile",
        RunStatus.EXECUTION_ERROR: "raises an error before its checks complete",
        RunStatus.ASSERTION_FAILURE: "fails one of its checks",
    }[outcome.status]
    parts = [
        section("Method under test", fence(fm.source, lang)),
        section("Test", fence(test.source, lang)),
        section("Problem", f"The test {kind}. Messages from the build and run:\n"
                + fence("\n".join(outcome.messages) or "(no messages captured)")),
        section("Definitions of the elements named in the messages", render_knowledge(retrieved, lang)),
    ]
    if instance is not None:
        parts.append(section("Scenario the test must keep", instance.narrative + "\n" + _oracle_text(instance)))
    keep = ""
    if outcome.status is RunStatus.ASSERTION_FAILURE:
        keep = " Do not change what the test expects; fix how the scenario is set up or exercised."
    parts.append(section("Task", (
        f"Return the corrected test method, keeping the name {test.name}.{keep} Reply with a single code "
        "block containing any imports it needs followed by the one method."
    )))
    return CompletionRequest.of(_REPAIR_SYSTEM, "\n".join(parts), tag="stage3.repair")


def _norm(text: str) -> str:
    return " ".join(text.split())


def _checks(test: TestCase) -> list[str]:
    return sorted(_norm(a.statement) for a in test.assertions)


class TestFile:
    """Text of the test file a generated method is added to."""

    __test__ = False

    def __init__(self, base_text: str, container: str, profile: LanguageProfile):
        self.base_text = base_text
        self.container = container
        self.profile = profile

    @classmethod
    def of(cls, tc: TestCase, root: Path, profile: LanguageProfile) -> TestFile:
        return cls((Path(root) / tc.file).read_text(encoding="utf-8"), tc.container, profile)

    def with_test(self, test: TestCase) -> str:
        text, _ = self.profile.insert_method(self.base_text, self.container, test.source, test.imports)
        return text


def _run(runner: Runner, test_file: TestFile, test: TestCase) -> RunOutcome:
    try:
        return runner.run_candidate(test.file, test_file.with_test(test), test.name, test.container)
    except TimeoutExceeded as exc:
        return RunOutcome(RunStatus.EXECUTION_ERROR, (str(exc),))


def repair(test: TestCase, fm: FocalMethod, runner: Runner, index: SymbolIndex | None, gateway: Gateway,
           test_file: TestFile, instance: ScenarioInstance | None = None, max_iter: int = 3,
           ) -> tuple[RepairRecord, TestCase]:
    """Run, and on failure feed the filtered messages plus looked-up definitions back for a fix.

    Returns the record and the last test version that was run.
    """
    profile = runner.profile
    alternative = instance is not None and instance.active_oracle.kind is OracleKind.ALTERNATIVE
    policy = ORACLE_POLICY_ALTERNATIVE if alternative else ORACLE_POLICY_PRIMARY
    attempts: list[RepairAttempt] = []
    notes: list[str] = []
    current = test
    status = RepairStatus.FAILING_AFTER_MAX
    for it in range(1, max_iter + 1):
        outcome = _run(runner, test_file, current)
        if outcome.passed:
            again = _run(runner, test_file, current)
            if again.passed:
                attempts.append(RepairAttempt(current.source, RunStatus.PASS))
                status = RepairStatus.PASSING
                break
            notes.append(f"attempt {it}: passed once but failed on the confirmation run")
            outcome = again
        elements = tuple(extract_error_elements(outcome.messages, profile))
        found: list[KnowledgeItem] = []
        retrieved: list[Retrieved] = []
        if index is not None:
            seen: set[str] = set()
            for el in elements:
                hits = index.lookup_element(el.name, el.file, el.line)
                if hits and hits[0].symbol not in seen:
                    seen.add(hits[0].symbol)
                    found.append(hits[0].with_provenance(Provenance.STAGE3_ERROR))
                    retrieved.append(Retrieved(el.name, hits[0].symbol))
        attempts.append(RepairAttempt(current.source, outcome.status, tuple(outcome.messages), elements,
                                      tuple(retrieved)))
        if it == max_iter:
            break
        if outcome.status is RunStatus.ASSERTION_FAILURE and alternative:
            notes.append(f"attempt {it}: assertion failure under an alternative oracle; escalated, not repaired")
            break
        request = _repair_request(fm, current, outcome, found, instance, profile.name)
        try:
            imports, method = gateway.complete_structured(request, "test_method", profile=profile)
        except MalformedOutput as exc:
            notes.append(f"attempt {it}: unusable repair response ({exc.reason})")
            break
        merged = tuple(dict.fromkeys(current.imports + tuple(imports)))
        candidate = _as_test(method, merged, current.name, current, profile, Origin.REPAIRED)
        if _norm(candidate.source) == _norm(current.source):
            notes.append(f"attempt {it}: repair returned the same test; stopping")
            break
        if outcome.status is RunStatus.ASSERTION_FAILURE and _checks(candidate) != _checks(current):
            notes.append(f"attempt {it}: repair changed the asserted outcome; rejected")
            break
        current = candidate
    record = RepairRecord(current.id, tuple(attempts), status, len(attempts), max_iter, policy, tuple(notes))
    return record, current


def finalize(test: TestCase, record: RepairRecord) -> TestCase:
    """The emitted test: origin reflects whether repair changed it."""
    if record.iterations > 1 and test.origin is not Origin.REPAIRED:
        return replace(test, origin=Origin.REPAIRED)
    return test

