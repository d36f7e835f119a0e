"""Rule-set tuning for template generation, and VP-level evaluation against labeled templates."""

from __future__ import annotations

import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import codec
from .config import TuningConfig
from .errors import (
    EmptyTrainSplit,
    GenerationFailure,
    InputError,
    InvariantViolation,
    MalformedOutput,
    QueryBudgetExceeded,
)
from .llm import CompletionRequest, Gateway
from .llm.schemas import Directive
from .model import FocalMethod, KnowledgeItem, RulePrompt, ScenarioTemplate, TestCase
from .prompting import fence, render_knowledge, section
from .scenario import generate_template, initial_prompt
from .templates import extract_template_block, parse_template, render_template

log = logging.getLogger(__name__)


@codec.register("tuning_sample")
@dataclass(frozen=True)
class TuningSample:
    fm: FocalMethod
    tc: TestCase
    knowledge: tuple[KnowledgeItem, ...]
    truth: ScenarioTemplate

    def __post_init__(self) -> None:
        if self.tc.focal_id != self.fm.id:
            raise InvariantViolation("test targets the focal method", f"{self.tc.focal_id} != {self.fm.id}")
        self.truth.validate()

    @property
    def project(self) -> str:
        return self.fm.project

    @property
    def id(self) -> str:
        return self.fm.id


# evaluation ------------------------------------------------------------------------------


@dataclass(frozen=True)
class VPScore:
    precision: float
    recall: float
    f1: float


def prf(matched: int, predicted: int, truth: int) -> VPScore:
    p = matched / predicted if predicted else 0.0
    r = matched / truth if truth else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return VPScore(p, r, f1)


def _alignment_request(predicted: ScenarioTemplate, truth: ScenarioTemplate) -> CompletionRequest:
    user = "\n".join([
        section("Template A", fence(render_template(predicted))),
        section("Template B", fence(render_template(truth))),
        section("Task", (
            "Pair each variation point of template A with the variation point of template B that describes "
            "the same factor, if there is one. Each variation point may be used at most once. Reply with one "
            "line per pair as '<A name> = <B name>', or NONE if nothing pairs up."
        )),
    ])
    return CompletionRequest.of("You compare test scenario templates.", user, temperature=0.0,
                                tag="tune.vp_alignment")


def evaluate_vp(predicted: ScenarioTemplate | None, truth: ScenarioTemplate,
                judge: Gateway | None = None) -> VPScore:
    """Precision, recall and F1 of predicted VPs; names match exactly unless a judge aligns them."""
    truth_names = truth.vp_names
    pred_names = predicted.vp_names if predicted is not None else []
    if not pred_names:
        return VPScore(0.0, 0.0, 0.0)
    if judge is None:
        matched = len(set(pred_names) & set(truth_names))
    else:
        pairs = judge.complete_structured(_alignment_request(predicted, truth), "vp_alignment",
                                          predicted=pred_names, truth=truth_names)
        matched = len(pairs)
    return prf(matched, len(set(pred_names)), len(set(truth_names)))


def mean_score(scores: list[VPScore]) -> VPScore:
    if not scores:
        return VPScore(0.0, 0.0, 0.0)
    n = len(scores)
    return VPScore(sum(s.precision for s in scores) / n, sum(s.recall for s in scores) / n,
                   sum(s.f1 for s in scores) / n)


# feedback and rule edits ----------------------------------------------------------------------

_TUNE_SYSTEM = "You improve the rules a model follows when it picks variation points for test scenario templates."

_DIRECTIVE_FORMAT = (
    "Reply with one directive per line, and nothing else:\n"
    "ADD: <new rule>\n"
    "MODIFY <rule number>: <replacement text>\n"
    "DELETE <rule number>\n"
    "Write NONE if the rules need no change."
)


def _numbered(rules: tuple[str, ...]) -> str:
    return "\n".join(f"{i}. {r}" for i, r in enumerate(rules, 1)) or "(no rules yet)"


def _directive_lines(directives: list[Directive]) -> str:
    lines = []
    for d in directives:
        flag = " [generalized]" if d.generalized else ""
        if d.op == "add":
            lines.append(f"ADD{flag}: {d.text}")
        elif d.op == "modify":
            lines.append(f"MODIFY {d.index}{flag}: {d.text}")
        else:
            lines.append(f"DELETE {d.index}{flag}")
    return "\n".join(lines) or "NONE"


def feedback_request(sample: TuningSample, predicted: ScenarioTemplate | None, rules: tuple[str, ...],
                     lang: str = "") -> CompletionRequest:
    truth = set(sample.truth.vp_names)
    pred = set(predicted.vp_names) if predicted is not None else set()
    diff = (f"Missing (in the reference only): {', '.join(sorted(truth - pred)) or 'none'}\n"
            f"Redundant (generated only): {', '.join(sorted(pred - truth)) or 'none'}")
    generated = fence(render_template(predicted)) if predicted is not None else "(no valid template was produced)"
    user = "\n".join([
        section("Method under test", fence(sample.fm.source, lang)),
        section("Example test", fence(sample.tc.source, lang)),
        section("Current rules", _numbered(rules)),
        section("Template generated under these rules", generated),
        section("Reference template", fence(render_template(sample.truth))),
        section("Differences in variation points", diff),
        section("Task", (
            "Suggest edits to the rules that would lead to the reference variation points for methods like "
            "this one, without naming this particular method. " + _DIRECTIVE_FORMAT
        )),
    ])
    return CompletionRequest.of(_TUNE_SYSTEM, user, temperature=0.0, tag="tune.feedback")


def synthesize_feedback(per_sample: list[list[Directive]], rules: tuple[str, ...], gateway: Gateway,
                        max_directives: int = 10) -> list[Directive]:
    """Merge per-sample suggestions into one bounded batch-level directive list."""
    if not per_sample:
        raise ValueError("no feedback to synthesize")
    if len(per_sample) == 1:
        return list(per_sample[0])[:max_directives]
    blocks = "\n\n".join(f"Suggestion set {i}:\n{_directive_lines(d)}" for i, d in enumerate(per_sample, 1))
    user = "\n".join([
        section("Current rules", _numbered(rules)),
        section("Suggested edits from several examples", blocks),
        section("Task", (
            f"Combine these into at most {max_directives} edits. Keep suggestions that complement each other. "
            "Where suggestions conflict, replace them with one edit that states the more general rule, and "
            "mark it by writing [generalized] right after the directive keyword (or the rule number). "
            + _DIRECTIVE_FORMAT
        )),
    ])
    request = CompletionRequest.of(_TUNE_SYSTEM, user, temperature=0.0, tag="tune.synthesize")
    return gateway.complete_structured(request, "rule_directives", max_directives=max_directives)


def update_request(rules: tuple[str, ...], directives: list[Directive]) -> CompletionRequest:
    user = "\n".join([
        section("Current rules", _numbered(rules)),
        section("Feedback for this batch", _directive_lines(directives)),
        section("Task", (
            "Decide the edits to apply to the current rules based on this feedback. Drop edits the rules "
            "already cover and keep the rule set short. " + _DIRECTIVE_FORMAT
        )),
    ])
    return CompletionRequest.of(_TUNE_SYSTEM, user, temperature=0.0, tag="tune.update")


def apply_directives(rules: tuple[str, ...], directives: list[Directive]) -> tuple[str, ...]:
    """Edits refer to rule numbers of ``rules``; modifications first, then deletions, then additions."""
    out: list[str | None] = list(rules)
    for d in directives:
        if d.op in ("modify", "delete") and not (d.index and 1 <= d.index <= len(rules)):
            log.warning("ignoring %s of unknown rule %s", d.op, d.index)
            continue
        if d.op == "modify":
            out[d.index - 1] = d.text
    for d in directives:
        if d.op == "delete" and d.index and 1 <= d.index <= len(rules):
            out[d.index - 1] = None
    kept = [r for r in out if r is not None]
    for d in directives:
        if d.op == "add" and d.text not in kept:
            kept.append(d.text)
    return tuple(kept)


# tuning loop ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckpointMetrics:
    epoch: int
    precision: float
    recall: float
    f1: float
    samples: int
    failures: int = 0


@codec.register("tuning_run")
@dataclass(frozen=True)
class TuningRun:
    epochs: int
    batch_size: int
    seed: int
    split: str
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    checkpoints: tuple[RulePrompt, ...]
    metrics: tuple[CheckpointMetrics, ...]
    selected: int  # epoch number of the chosen checkpoint, 1-based
    update_calls: int
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.checkpoints) != self.epochs or len(self.metrics) != self.epochs:
            raise InvariantViolation("one checkpoint per epoch", f"{len(self.checkpoints)} for {self.epochs}")
        if self.epochs:
            best = max(m.f1 for m in self.metrics)
            first = next(m.epoch for m in self.metrics if m.f1 == best)
            if self.selected != first:
                raise InvariantViolation("selected checkpoint has the best F1", f"{self.selected} != {first}")

    @property
    def best(self) -> RulePrompt:
        return self.checkpoints[self.selected - 1]


def split_dataset(samples: list[TuningSample], cfg: TuningConfig, seed: int) -> tuple[list[TuningSample], list[TuningSample]]:
    ordered = sorted(samples, key=lambda s: s.id)
    if cfg.split == "leave-one-project-out":
        projects = sorted({s.project for s in ordered})
        holdout = cfg.holdout_project or (projects[-1] if projects else None)
        if holdout not in projects:
            raise InputError(f"hold-out project {holdout!r} not in dataset ({', '.join(projects)})")
        train = [s for s in ordered if s.project != holdout]
        test = [s for s in ordered if s.project == holdout]
    else:
        shuffled = list(ordered)
        random.Random(f"split:{seed}").shuffle(shuffled)
        n_test = round(len(shuffled) * cfg.test_fraction)
        test, train = shuffled[:n_test], shuffled[n_test:]
    if not train:
        raise EmptyTrainSplit("training split is empty")
    return train, test


def _generate(sample: TuningSample, prompt: RulePrompt, gateway: Gateway, max_queries: int,
              budget: int | None) -> ScenarioTemplate | None:
    try:
        return generate_template(sample.fm, sample.tc, list(sample.knowledge), prompt, gateway, None,
                                 max_queries, budget, tag="tune.generate").template
    except (GenerationFailure, MalformedOutput, QueryBudgetExceeded) as exc:
        log.warning("%s: no template (%s)", sample.id, exc)
        return None


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate_prompt(prompt: RulePrompt, samples: list[TuningSample], gateway: Gateway, epoch: int,
                    judge: Gateway | None = None, workers: int = 1, max_queries: int = 5,
                    budget: int | None = None) -> CheckpointMetrics:
    templates = _map(lambda s: _generate(s, prompt, gateway, max_queries, budget), samples, workers)
    scores = [evaluate_vp(t, s.truth, judge) for t, s in zip(templates, samples)]
    m = mean_score(scores)
    return CheckpointMetrics(epoch, m.precision, m.recall, m.f1, len(samples),
                             sum(t is None for t in templates))


def tune(train: list[TuningSample], test: list[TuningSample], gateway: Gateway, cfg: TuningConfig,
         seed: int = 0, prompt: RulePrompt | None = None, judge: Gateway | None = None, workers: int = 1,
         max_queries: int = 5, budget: int | None = None, split: str = "") -> TuningRun:
    """Batch-wise rule updates over ``cfg.epochs`` epochs; the checkpoint with the best held-out F1 wins."""
    if not train:
        raise EmptyTrainSplit("training split is empty")
    prompt = prompt or initial_prompt()
    notes: list[str] = []
    checkpoints: list[RulePrompt] = []
    updates = 0
    for epoch in range(1, cfg.epochs + 1):
        order = list(train)
        random.Random(f"{seed}:epoch:{epoch}").shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            templates = _map(lambda s: _generate(s, prompt, gateway, max_queries, budget), batch, workers)
            feedback: list[list[Directive]] = []
            for sample, template in zip(batch, templates):
                request = feedback_request(sample, template, prompt.rules)
                try:
                    feedback.append(gateway.complete_structured(request, "rule_directives",
                                                                max_directives=cfg.max_directives))
                except MalformedOutput as exc:
                    notes.append(f"epoch {epoch}: feedback for {sample.id} skipped ({exc.reason})")
            merged: list[Directive] = []
            if feedback:
                try:
                    merged = synthesize_feedback(feedback, prompt.rules, gateway, cfg.max_directives)
                except MalformedOutput as exc:
                    notes.append(f"epoch {epoch}: batch feedback unusable ({exc.reason})")
            updates += 1
            try:
                edits = gateway.complete_structured(update_request(prompt.rules, merged), "rule_directives",
                                                    max_directives=cfg.max_directives)
            except MalformedOutput as exc:
                notes.append(f"epoch {epoch}: rule update unusable ({exc.reason}); rules kept")
                edits = []
            prompt = prompt.revise(apply_directives(prompt.rules, edits))
        checkpoints.append(prompt)
    metrics = [evaluate_prompt(p, test, gateway, e, judge, workers, max_queries, budget)
               for e, p in enumerate(checkpoints, 1)]
    best = max(m.f1 for m in metrics)
    selected = next(m.epoch for m in metrics if m.f1 == best)
    return TuningRun(cfg.epochs, cfg.batch_size, seed, split or cfg.split,
                     tuple(s.id for s in train), tuple(s.id for s in test), tuple(checkpoints),
                     tuple(metrics), selected, updates, tuple(notes))


def expected_update_calls(n_train: int, cfg: TuningConfig) -> int:
    return cfg.epochs * math.ceil(n_train / cfg.batch_size)


# dataset files --------------------------------------------------------------------------------


def _sample_from_plain(raw: dict, where: str) -> TuningSample:
    """A sample document; the reference template may be given as template text."""
    truth = raw.get("truth")
    if isinstance(truth, str):
        raw = {**raw, "truth": codec.to_plain(parse_template(truth, raw["fm"]["id"]))}
    try:
        return codec.from_plain(TuningSample, raw)
    except KeyError as exc:
        raise InputError(f"{where}: missing field {exc}") from exc


def load_dataset(path: Path | str) -> list[TuningSample]:
    """Samples from a directory of sample artifacts or from one JSON file holding a list."""
    path = Path(path)
    samples: list[TuningSample] = []
    if path.is_dir():
        for p in sorted(path.glob("*.json")):
            doc = json.loads(p.read_text(encoding="utf-8"))
            body = doc["body"] if isinstance(doc, dict) and "body" in doc else doc
            samples.append(_sample_from_plain(body, p.name))
    elif path.is_file():
        docs = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(docs, list):
            raise InputError(f"{path}: expected a list of samples")
        samples = [_sample_from_plain(d, f"{path.name}[{i}]") for i, d in enumerate(docs)]
    else:
        raise InputError(f"dataset {path} not found")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise InputError("dataset contains duplicate focal methods")
    return samples


def draft_request(fm: FocalMethod, tests: list[TestCase], knowledge: list[KnowledgeItem],
                  lang: str = "") -> CompletionRequest:
    listing = "\n\n".join(fence(t.source, lang) for t in tests)
    user = "\n".join([
        section("Method under test", fence(fm.source, lang)),
        section("All existing tests of this method", listing),
        section("Code knowledge", render_knowledge(knowledge, lang)),
        section("Task", (
            "Write one test scenario template that covers what these tests have in common, with a variation "
            "point for each factor on which they differ. " + initial_prompt().scaffold.template_format
        )),
    ])
    return CompletionRequest.of("You summarize existing unit tests as a test scenario template.", user,
                                temperature=0.0, tag="tune.draft")


def draft_sample(fm: FocalMethod, tests: list[TestCase], knowledge: list[KnowledgeItem],
                 gateway: Gateway, lang: str = "") -> TuningSample:
    """A reference template drafted from a method's full test set, meant for manual review."""
    if not tests:
        raise InputError(f"{fm.id}: no tests to draft from")
    kind, payload = gateway.complete_structured(draft_request(fm, tests, knowledge, lang), "template_or_query")
    if kind != "template":
        raise GenerationFailure(f"{fm.id}: draft request answered with queries")
    try:
        truth = parse_template(extract_template_block(payload) or payload, fm.id)
    except (InvariantViolation, InputError) as exc:
        raise GenerationFailure(f"{fm.id}: drafted template rejected: {exc}") from exc
    return TuningSample(fm, tests[0], tuple(knowledge), truth)

