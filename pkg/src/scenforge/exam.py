"""Stage 1: masked-oracle exams that make the model earn its understanding of the code.

For each assertion of the initial test the model proposes wrong variants,
which are executed so that only variants failing on the assertion itself
survive. The model then has to pick the original among them, asking for
symbol definitions when unsure; a wrong pick forces a retrieval. Every
definition retrieved along the way becomes Stage 1 knowledge.
"""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from . import codec
from .errors import InvariantViolation, TimeoutExceeded, ZeroCandidates
from .index import Neighborhood, SymbolIndex
from .llm import CompletionRequest, Gateway, Message, Role
from .model import AssertionSite, FocalMethod, KnowledgeItem, Provenance, TestCase, simple_name
from .prompting import fence, render_knowledge, section
from .runner import Runner, RunStatus

log = logging.getLogger(__name__)

MASK = "<<MASKED ORACLE>>"
LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


class OptionStatus(str, Enum):
    ORIGINAL = "original"
    VALID_WRONG = "valid_wrong"
    DISCARDED_COMPILE = "discarded_compile"
    DISCARDED_EXEC = "discarded_exec"
    DISCARDED_PASSES = "discarded_passes"


_RUN_TO_STATUS = {
    RunStatus.COMPILE_ERROR: OptionStatus.DISCARDED_COMPILE,
    RunStatus.EXECUTION_ERROR: OptionStatus.DISCARDED_EXEC,
    RunStatus.PASS: OptionStatus.DISCARDED_PASSES,
    RunStatus.ASSERTION_FAILURE: OptionStatus.VALID_WRONG,
}
PRESENTABLE = (OptionStatus.ORIGINAL, OptionStatus.VALID_WRONG)


@dataclass(frozen=True)
class ExamOption:
    statement: str
    status: OptionStatus


@codec.register("oracle_exam")
@dataclass(frozen=True)
class OracleExam:
    base_test: TestCase
    assertion_index: int  # position in base_test.assertions
    target_assertion: AssertionSite
    options: tuple[ExamOption, ...]  # shuffled; discarded variants kept for inspection
    correct_index: int
    seed: int

    def __post_init__(self) -> None:
        originals = [i for i, o in enumerate(self.options) if o.status is OptionStatus.ORIGINAL]
        if len(originals) != 1:
            raise InvariantViolation("exactly one original option")
        if originals[0] != self.correct_index:
            raise InvariantViolation("correct_index points at the original")
        if self.options[self.correct_index].statement != self.target_assertion.statement:
            raise InvariantViolation("original option equals the masked assertion")
        if len(self.presented) < 2:
            raise InvariantViolation("options length >= 2 after filtering")

    @property
    def presented(self) -> list[int]:
        """Indices into ``options`` shown to the model, in shuffled order."""
        return [i for i, o in enumerate(self.options) if o.status in PRESENTABLE]

    @property
    def letters(self) -> str:
        return LETTERS[: len(self.presented)]

    @property
    def correct_letter(self) -> str:
        return LETTERS[self.presented.index(self.correct_index)]

    def option_for(self, letter: str) -> ExamOption:
        return self.options[self.presented[LETTERS.index(letter)]]

    @property
    def masked_source(self) -> str:
        a = self.target_assertion
        src = self.base_test.source
        return src[: a.offset] + MASK + src[a.offset + len(a.statement):]

    @property
    def ref(self) -> str:
        return f"{self.base_test.id}#{self.assertion_index + 1}"


class ExamVerdict(str, Enum):
    PASSED = "passed"
    FAILED = "failed"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class ExamEvent:
    iteration: int
    kind: str  # answer | query | enforced
    detail: str
    symbols: tuple[str, ...] = ()


@codec.register("exam_outcome")
@dataclass(frozen=True)
class ExamOutcome:
    exam_ref: str
    verdict: ExamVerdict
    iterations_used: int
    knowledge: tuple[KnowledgeItem, ...] = ()
    trace: tuple[ExamEvent, ...] = ()
    final_answer: str | None = None
    correct_answer: str = ""
    max_iter: int = 3

    def __post_init__(self) -> None:
        if self.iterations_used > self.max_iter:
            raise InvariantViolation("iterations_used <= max", f"{self.iterations_used} > {self.max_iter}")
        if self.verdict is ExamVerdict.PASSED and self.final_answer != self.correct_answer:
            raise InvariantViolation("passed implies correct final answer")


# wrong-oracle generation ----------------------------------------------------


_WRONG_SYSTEM = (
    "You help build a quiz about a unit test. You write incorrect variants of its "
    "assertion statements. Each variant must still be well-formed code that a developer "
    "could have written, but it must state an expectation that the code under test does "
    "not meet."
)


def _numbered_assertions(tc: TestCase) -> str:
    return "\n".join(f"{i + 1}. {a.statement}" for i, a in enumerate(tc.assertions))


def wrong_oracle_request(fm: FocalMethod, tc: TestCase, q_max: int, lang: str) -> CompletionRequest:
    user = "\n".join([
        section("Method under test", fence(fm.source, lang)),
        section("Test", fence(tc.source, lang)),
        section("Assertions in the test", _numbered_assertions(tc)),
        section("Task", (
            f"For every numbered assertion, propose up to {q_max} replacement statements that are wrong "
            "for this code. Keep the same subject, change what is expected: the checked value, the kind "
            "of check, or the comparison. Do not repeat the original statement.\n"
            'Reply with JSON only: {"oracles": [{"assertion": 1, "wrong": ["...", "..."]}]}'
        )),
    ])
    return CompletionRequest.of(_WRONG_SYSTEM, user, temperature=0.0, tag="stage1.wrong_oracles")


def _norm(stmt: str) -> str:
    return " ".join(stmt.split())


def _clean(original: str, variants: list[str], q_max: int) -> list[str]:
    seen = {_norm(original)}
    out = []
    for v in variants:
        v = v.strip()
        if not v or _norm(v) in seen:
            continue
        seen.add(_norm(v))
        out.append(v)
    return out[:q_max]


def generate_wrong_oracles(fm: FocalMethod, tc: TestCase, gateway: Gateway, q_max: int = 10,
                           lang: str = "") -> dict[int, list[str]]:
    """Wrong variants per assertion index (0-based); at most ``q_max`` each, originals and duplicates dropped."""
    if not tc.assertions:
        return {}
    n = len(tc.assertions)
    request = wrong_oracle_request(fm, tc, q_max, lang)
    raw = gateway.complete_structured(request, "wrong_oracles", assertions=n)
    result = {i: _clean(a.statement, raw.get(i + 1, []), q_max) for i, a in enumerate(tc.assertions)}
    empty = [i for i, v in result.items() if not v]
    if empty:
        numbers = ", ".join(str(i + 1) for i in empty)
        retry = request.followed_by(
            Message(Role.ASSISTANT, codec.dumps({"oracles": [{"assertion": k, "wrong": v}
                                                             for k, v in sorted(raw.items())]})),
            Message(Role.USER, f"Assertion(s) {numbers} received no usable wrong variant (each was empty or "
                               "identical to the original). Revise and answer again in the same JSON format."),
        )
        raw2 = gateway.complete_structured(replace(retry, tag="stage1.wrong_oracles.revise"),
                                           "wrong_oracles", assertions=n)
        for i in empty:
            result[i] = _clean(tc.assertions[i].statement, raw2.get(i + 1, []), q_max)
        still = [i + 1 for i in empty if not result[i]]
        if still:
            exc = ZeroCandidates(f"no wrong oracle candidates for assertion(s) {still} of {tc.id}")
            exc.partial = {i: v for i, v in result.items() if v}
            raise exc
    return result


# execution filter -------------------------------------------------------------


def substitute(tc: TestCase, site: AssertionSite, statement: str) -> str:
    return tc.source[: site.offset] + statement + tc.source[site.offset + len(site.statement):]


def _test_file_text(tc: TestCase, root: Path) -> str:
    text = (root / tc.file).read_text(encoding="utf-8")
    if tc.source not in text:
        raise InvariantViolation("test source found in its file", tc.file)
    return text


def filter_candidates(tc: TestCase, site: AssertionSite, variants: list[str], runner: Runner,
                      workers: int = 1) -> list[ExamOption]:
    """Execute each variant in place of the assertion and classify it."""
    file_text = _test_file_text(tc, runner.root)

    def one(variant: str) -> ExamOption:
        candidate = file_text.replace(tc.source, substitute(tc, site, variant), 1)
        try:
            outcome = runner.run_candidate(tc.file, candidate, tc.name, tc.container)
        except TimeoutExceeded:
            return ExamOption(variant, OptionStatus.DISCARDED_EXEC)
        return ExamOption(variant, _RUN_TO_STATUS[outcome.status])

    if workers <= 1 or len(variants) <= 1:
        return [one(v) for v in variants]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, variants))


def build_exam(tc: TestCase, index: int, filtered: list[ExamOption], seed: int) -> OracleExam:
    site = tc.assertions[index]
    options = [ExamOption(site.statement, OptionStatus.ORIGINAL)] + list(filtered)
    rng = random.Random(f"{seed}:{tc.id}:{index}")
    rng.shuffle(options)
    correct = next(i for i, o in enumerate(options) if o.status is OptionStatus.ORIGINAL)
    return OracleExam(tc, index, site, tuple(options), correct, seed)


# answering loop -------------------------------------------------------------------


_EXAM_SYSTEM = (
    "You are being quizzed on a unit test. One assertion has been replaced by a placeholder and "
    "you must say which candidate statement the developer originally wrote. Only one candidate "
    "is the original; all others make the test fail. If you cannot tell from what you see, ask "
    "for the definitions you need instead of guessing."
)


def exam_request(exam: OracleExam, fm: FocalMethod, knowledge: list[KnowledgeItem], lang: str,
                 iteration: int) -> CompletionRequest:
    options = "\n".join(f"{LETTERS[k]}. {exam.options[i].statement}" for k, i in enumerate(exam.presented))
    user = "\n".join([
        section("Method under test", fence(fm.source, lang)),
        section("Test with the hidden assertion", fence(exam.masked_source, lang)),
        section(f"Candidates for {MASK}", options),
        section("Code knowledge available so far", render_knowledge(knowledge, lang)),
        section("How to reply", (
            'Reply with JSON only. To choose: {"answer": "<letter>"}. If a definition you need is '
            'missing, do not choose; list the symbols instead: {"queries": ["ClassName", "method_name"]}.'
        )),
    ])
    return CompletionRequest.of(_EXAM_SYSTEM, user, temperature=0.0, tag=f"stage1.exam.{iteration}")


def _enforced_candidates(exam: OracleExam, fm: FocalMethod, index: SymbolIndex, scope: Neighborhood,
                         picked: str | None) -> list[str]:
    """Neighborhood symbols ordered by closeness to the assertion under test."""
    prof = index.profile
    texts = [exam.target_assertion.statement] + ([picked] if picked else [])
    first = {n for t in texts for n, _ in prof.identifiers(t)}
    ordered: list[str] = []
    focal = index.resolve_method(fm.qualified_name)
    for q in sorted(scope.symbols):
        name = simple_name(q)
        owner = index.owner(q)
        if name in first or (owner and simple_name(owner) in first and index.get(q).kind.value == "constructor"):
            ordered.append(q)
    if focal:
        ordered.append(focal)
        if index.owner(focal):
            ordered.append(index.owner(focal))
    ordered += sorted(scope.symbols)
    return list(dict.fromkeys(ordered))


def run_exam(exam: OracleExam, gateway: Gateway, index: SymbolIndex, scope: Neighborhood, fm: FocalMethod,
             max_iter: int = 3, known: list[KnowledgeItem] | None = None,
             enforced_per_miss: int = 3) -> ExamOutcome:
    """Answer / retrieve / re-evaluate until the original is picked or ``max_iter`` rounds pass."""
    lang = index.language
    knowledge = list(known or [])
    have = {k.symbol for k in knowledge}
    gained: list[KnowledgeItem] = []
    trace: list[ExamEvent] = []

    def take(items: list[KnowledgeItem]) -> list[str]:
        added = []
        for item in items:
            if item.symbol not in have:
                have.add(item.symbol)
                item = item.with_provenance(Provenance.STAGE1_EXAM)
                knowledge.append(item)
                gained.append(item)
                added.append(item.symbol)
        return added

    verdict, answer, used = ExamVerdict.EXHAUSTED, None, 0
    for it in range(1, max_iter + 1):
        used = it
        reply = gateway.complete_structured(exam_request(exam, fm, knowledge, lang, it), "exam_answer",
                                            letters=exam.letters)
        if reply.queries:
            found = [k for q in reply.queries for k in index.query(q, scope=scope)]
            added = take(found)
            trace.append(ExamEvent(it, "query", ", ".join(reply.queries), tuple(added)))
            continue
        answer = reply.answer
        correct = answer == exam.correct_letter
        trace.append(ExamEvent(it, "answer", f"{answer} ({'correct' if correct else 'wrong'})"))
        if correct:
            verdict = ExamVerdict.PASSED
            break
        picked = exam.option_for(answer).statement
        pool = [q for q in _enforced_candidates(exam, fm, index, scope, picked) if q not in have]
        added = take([index.get(q) for q in pool[:enforced_per_miss]])
        trace.append(ExamEvent(it, "enforced", "retrieval after a wrong answer", tuple(added)))
        if not added and it < max_iter:
            verdict = ExamVerdict.FAILED
            break
    return ExamOutcome(exam.ref, verdict, used, tuple(gained), tuple(trace), answer,
                       exam.correct_letter, max_iter)


# stage driver ------------------------------------------------------------------------


@dataclass
class Stage1Result:
    skipped: bool
    exams: list[OracleExam] = field(default_factory=list)
    outcomes: list[ExamOutcome] = field(default_factory=list)
    knowledge: list[KnowledgeItem] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return bool(self.outcomes) and all(o.verdict is ExamVerdict.PASSED for o in self.outcomes)


def stage1(fm: FocalMethod, tc: TestCase, gateway: Gateway, index: SymbolIndex, runner: Runner,
           seed: int = 0, q_max: int = 10, max_iter: int = 3, enforced_per_miss: int = 3,
           workers: int = 1) -> Stage1Result:
    """One exam per assertion, run in order; knowledge accumulates across exams."""
    if not tc.assertions:
        return Stage1Result(skipped=True, notes=[f"{tc.id}: no assertions, stage 1 skipped"])
    result = Stage1Result(skipped=False)
    lang = index.language
    try:
        candidates = generate_wrong_oracles(fm, tc, gateway, q_max, lang)
    except ZeroCandidates as exc:
        result.notes.append(str(exc))
        log.warning("%s", exc)
        candidates = exc.partial
    for i, site in enumerate(tc.assertions):
        variants = candidates.get(i, [])
        if not variants:
            continue
        filtered = filter_candidates(tc, site, variants, runner, workers)
        if not any(o.status is OptionStatus.VALID_WRONG for o in filtered):
            note = f"{tc.id} assertion {i + 1}: no variant failed on the assertion; exam dropped"
            result.notes.append(note)
            log.warning("%s", note)
            continue
        result.exams.append(build_exam(tc, i, filtered, seed))
    scope = index.neighborhood(fm, tc)
    for exam in result.exams:
        outcome = run_exam(exam, gateway, index, scope, fm, max_iter, result.knowledge, enforced_per_miss)
        result.outcomes.append(outcome)
        result.knowledge.extend(outcome.knowledge)
        if outcome.verdict is not ExamVerdict.PASSED:
            result.notes.append(f"{exam.ref}: exam {outcome.verdict.value} after {outcome.iterations_used} rounds")
    return result
