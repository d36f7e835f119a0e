"""End-to-end generalization of one developer test, with every intermediate artifact persisted."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import codec
from .config import Config
from .errors import ScenforgeError
from .exam import Stage1Result, stage1
from .forge import RepairRecord, RepairStatus, TestFile, finalize, generate_test, repair, test_name_for, unique_name
from .index import SymbolIndex, build_index, extract_focal, extract_test
from .llm import Gateway
from .model import FocalMethod, KnowledgeItem, ScenarioInstance, TestCase
from .runner import Runner
from .scenario import CrystallizeResult, TemplateResult, crystallize, generate_template, initial_prompt, select_oracle

log = logging.getLogger(__name__)

INDEX_PATH = Path(".scenforge") / "index.json"


class StageFailure(ScenforgeError):
    """A module error raised while running ``stage``; the original is kept as ``cause``."""

    def __init__(self, stage: int | str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage}: {type(cause).__name__}: {cause}")


def default_index_path(cfg: Config) -> Path:
    return Path(cfg.project.root) / INDEX_PATH


def open_index(cfg: Config, path: Path | None = None) -> SymbolIndex:
    """The persisted index when present, otherwise a fresh in-memory one."""
    root = Path(cfg.project.root)
    path = path or default_index_path(cfg)
    if path.exists():
        return SymbolIndex.load(path, root)
    log.info("no index at %s; indexing %s", path, root)
    return build_index(root, cfg.project.project_name, list(cfg.project.source_dirs), cfg.project.language)


def write_knowledge(items: list[KnowledgeItem], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(codec.dumps([codec.to_plain(k) for k in items]), encoding="utf-8")


def write_json(data, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(codec.dumps(data), encoding="utf-8")


@dataclass
class Selection:
    fm: FocalMethod
    tc: TestCase


def select(cfg: Config, index: SymbolIndex, focal: str, test: str) -> Selection:
    root = Path(cfg.project.root)
    fm = extract_focal(index, root, focal, cfg.project.commit)
    tc = extract_test(index.profile, root, test, fm.id)
    return Selection(fm, tc)


# stage runners -------------------------------------------------------------------------


def run_stage1(sel: Selection, cfg: Config, gateway: Gateway, index: SymbolIndex, runner_factory: Callable[[], Runner],
               out: Path, seed: int, workers: int) -> Stage1Result:
    p = cfg.pipeline
    if not sel.tc.assertions:
        result = Stage1Result(skipped=True, notes=[f"{sel.tc.id}: no assertions, stage 1 skipped"])
    else:
        try:
            result = stage1(sel.fm, sel.tc, gateway, index, runner_factory(), seed, p.wrong_oracles_per_assertion,
                            p.exam_max_iter, p.enforced_retrievals, workers)
        except ScenforgeError as exc:
            raise StageFailure(1, exc) from exc
    d = out / "stage1"
    for n, exam in enumerate(result.exams, 1):
        codec.write_artifact(exam, d / codec.artifact_filename(f"exam_{n}", exam))
    for n, outcome in enumerate(result.outcomes, 1):
        codec.write_artifact(outcome, d / codec.artifact_filename(f"exam_{n}", outcome))
    write_knowledge(result.knowledge, d / "knowledge.json")
    write_json({"skipped": result.skipped, "exams": len(result.exams),
                "passed": sum(o.verdict.value == "passed" for o in result.outcomes), "notes": result.notes},
               d / "summary.json")
    return result


@dataclass
class Stage2Output:
    template: TemplateResult
    crystal: CrystallizeResult
    instances: list[ScenarioInstance]


def run_stage2(sel: Selection, cfg: Config, gateway: Gateway, index: SymbolIndex, knowledge: list[KnowledgeItem],
               out: Path, choose_oracle: Callable[[ScenarioInstance], int | None] | None = None,
               prompt=None) -> Stage2Output:
    p = cfg.pipeline
    try:
        tres = generate_template(sel.fm, sel.tc, knowledge, prompt or initial_prompt(), gateway, index,
                                 p.max_queries, p.prompt_budget_tokens)
        crystal = crystallize(tres.template, sel.fm, sel.tc, tres.knowledge, gateway, p.max_bundles,
                              index.language)
        instances = [select_oracle(i, choose_oracle(i) if choose_oracle else None) for i in crystal.instances]
    except ScenforgeError as exc:
        raise StageFailure(2, exc) from exc
    d = out / "stage2"
    codec.write_artifact(tres.template, d / codec.artifact_filename("template", tres.template))
    for n, (bundle, inst) in enumerate(zip(crystal.bundles, instances), 1):
        codec.write_artifact(bundle, d / codec.artifact_filename(f"scenario_{n}", bundle))
        codec.write_artifact(inst, d / codec.artifact_filename(f"scenario_{n}", inst))
    write_knowledge(tres.knowledge, d / "knowledge.json")
    write_json({"queries": tres.queries, "dropped_knowledge": list(tres.dropped),
                "rejected": [codec.to_plain(r) for r in crystal.rejected], "instances": len(instances)},
               d / "summary.json")
    return Stage2Output(tres, crystal, instances)


def varying_vps(instances: list[ScenarioInstance]) -> list[str] | None:
    if len(instances) < 2:
        return None
    names = list(instances[0].settings)
    vary = [n for n in names if len({i.settings[n] for i in instances}) > 1]
    return vary or None


@dataclass
class Stage3Item:
    test: TestCase
    record: RepairRecord | None = None
    error: str = ""


def run_stage3(sel: Selection, cfg: Config, gateway: Gateway, index: SymbolIndex, knowledge: list[KnowledgeItem],
               instances: list[ScenarioInstance], runner: Runner, out: Path, workers: int) -> list[Stage3Item]:
    profile = index.profile
    base = TestFile.of(sel.tc, Path(cfg.project.root), profile)
    taken = set(profile.method_names(base.base_text, sel.tc.container))
    vary = varying_vps(instances)
    names = []
    for inst in instances:
        name = unique_name(test_name_for(sel.fm, inst, profile, vary), taken)
        taken.add(name)
        names.append(name)

    def one(pair: tuple[ScenarioInstance, str]) -> Stage3Item:
        inst, name = pair
        test = generate_test(inst, sel.fm, sel.tc, knowledge, gateway, profile, name)
        record, final = repair(test, sel.fm, runner, index, gateway, base, inst, cfg.pipeline.repair_max_iter)
        return Stage3Item(finalize(final, record), record)

    try:
        runner.ensure_pristine()
        if workers > 1 and len(instances) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                items = list(pool.map(one, zip(instances, names)))
        else:
            items = [one(p) for p in zip(instances, names)]
    except ScenforgeError as exc:
        raise StageFailure(3, exc) from exc
    d = out / "stage3"
    text = base.base_text
    for n, item in enumerate(items, 1):
        codec.write_artifact(item.test, d / codec.artifact_filename(f"test_{n}", item.test))
        codec.write_artifact(item.record, d / codec.artifact_filename(f"test_{n}", item.record))
        if item.record.final_status is RepairStatus.PASSING:
            text, _ = profile.insert_method(text, sel.tc.container, item.test.source, item.test.imports)
    (d / "tests" / sel.tc.file).parent.mkdir(parents=True, exist_ok=True)
    (d / "tests" / sel.tc.file).write_text(text, encoding="utf-8")
    write_json({"tests": [{"id": i.test.id, "status": i.record.final_status.value,
                           "iterations": i.record.iterations} for i in items]}, d / "summary.json")
    return items


# whole pipeline ------------------------------------------------------------------------------


@dataclass
class GeneralizeResult:
    selection: Selection
    stage1: Stage1Result
    stage2: Stage2Output | None = None
    stage3: list[Stage3Item] = field(default_factory=list)
    runner_used: bool = False

    def summary(self) -> dict:
        s3 = [{"id": i.test.id, "status": i.record.final_status.value} for i in self.stage3]
        return {
            "focal": self.selection.fm.id,
            "initial_test": self.selection.tc.id,
            "stage1": {"skipped": self.stage1.skipped, "exams": len(self.stage1.exams),
                       "knowledge": len(self.stage1.knowledge)},
            "stage2": None if self.stage2 is None else {
                "vps": self.stage2.template.template.vp_names, "instances": len(self.stage2.instances)},
            "stage3": s3,
        }


def generalize(cfg: Config, index: SymbolIndex, gateway: Gateway, focal: str, test: str, out: Path,
               stage: int = 3, seed: int = 0, workers: int = 1,
               choose_oracle: Callable[[ScenarioInstance], int | None] | None = None) -> GeneralizeResult:
    out = Path(out)
    sel = select(cfg, index, focal, test)
    codec.write_artifact(sel.fm, out / codec.artifact_filename("focal", sel.fm))
    codec.write_artifact(sel.tc, out / codec.artifact_filename("initial", sel.tc))
    runners: list[Runner] = []

    def runner_factory() -> Runner:
        if not runners:
            runners.append(Runner(cfg.project, index, cfg.pipeline.runner_slots))
        return runners[0]

    try:
        s1 = run_stage1(sel, cfg, gateway, index, runner_factory, out, seed, workers)
        result = GeneralizeResult(sel, s1)
        if stage >= 2:
            result.stage2 = run_stage2(sel, cfg, gateway, index, s1.knowledge, out, choose_oracle)
        if stage >= 3:
            knowledge = result.stage2.template.knowledge
            result.stage3 = run_stage3(sel, cfg, gateway, index, knowledge, result.stage2.instances,
                                       runner_factory(), out, workers)
        result.runner_used = bool(runners)
    finally:
        for r in runners:
            r.close()
    write_json(result.summary(), out / "summary.json")
    return result
