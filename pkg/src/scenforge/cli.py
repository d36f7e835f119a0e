"""Command-line entry point: index, exam, generalize, tune, eval."""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__, codec
from .config import Config, config_to_dict, load_config
from .coverage import (
    CoverageReport,
    KillMatrix,
    kill_set_for,
    llm_assessed,
    load_reports,
    match_mutation,
)
from .errors import ConfigError, EmptyProject, InputError, ScenforgeError
from .index import build_index
from .llm import ChatProvider, Gateway, Transcript, TranscriptMode
from .model import ScenarioInstance, TestCase, simple_name
from .pipeline import StageFailure, default_index_path, generalize, open_index, run_stage1, select, write_json
from .runner import Runner
from .tuning import draft_sample, load_dataset, split_dataset, tune

log = logging.getLogger("scenforge")

EXIT_OK, EXIT_PIPELINE, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2, 3


@codec.register("run_manifest")
@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    arguments: dict[str, str]
    config: dict
    seed: int
    transcript_mode: str  # live | record | replay
    transcript_path: str
    artifact_dir: str  # always "." : the manifest sits at the root of its artifact tree
    tool_version: str
    origin_manifest: str = ""  # replay runs: manifest written when the transcript was recorded
    origin_digest: str = ""


# plumbing -------------------------------------------------------------------------------------


def parse_transcript(value: str | None) -> tuple[TranscriptMode, Path] | None:
    if not value:
        return None
    mode, sep, path = value.partition(":")
    if not sep or mode not in ("record", "replay") or not path:
        raise ConfigError(f"--transcript expects record:<path> or replay:<path>, got {value!r}")
    return TranscriptMode(mode), Path(path)


def make_gateway(cfg: Config, transcript: tuple[TranscriptMode, Path] | None) -> Gateway:
    if transcript is not None and transcript[0] is TranscriptMode.REPLAY:
        return Gateway(None, Transcript.load(transcript[1], TranscriptMode.REPLAY))
    provider = ChatProvider.from_settings(config_to_dict(cfg)["llm"])
    if transcript is None:
        return Gateway(provider)
    return Gateway(provider, Transcript.load(transcript[1], TranscriptMode.RECORD))


def _origin_path(transcript_path: Path) -> Path:
    return transcript_path.with_name(transcript_path.name + ".manifest.json")


def write_manifest(args, cfg: Config, out: Path) -> RunManifest:
    transcript = parse_transcript(args.transcript)
    mode = transcript[0].value if transcript else "live"
    tpath = str(transcript[1]) if transcript else ""
    arguments = {k: str(v) for k, v in sorted(vars(args).items())
                 if k not in ("func", "out", "transcript", "seed", "config") and v is not None}
    manifest = RunManifest(args.command, arguments, config_to_dict(cfg), args.seed, mode, tpath, ".", __version__)
    if transcript and transcript[0] is TranscriptMode.REPLAY:
        origin = _origin_path(transcript[1])
        if origin.exists():
            digest = hashlib.sha256(origin.read_bytes()).hexdigest()
            manifest = replace(manifest, origin_manifest=str(origin), origin_digest=digest)
    text = codec.serialize_artifact(manifest)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(text, encoding="utf-8")
    if transcript and transcript[0] is TranscriptMode.RECORD:
        _origin_path(transcript[1]).parent.mkdir(parents=True, exist_ok=True)
        _origin_path(transcript[1]).write_text(text, encoding="utf-8")
    return manifest


def _config(args) -> Config:
    cfg = load_config(args.config)
    root = getattr(args, "root", None)
    if root:
        cfg = cfg.with_root(str(Path(root).resolve()))
    return cfg


def _workers(args, cfg: Config) -> int:
    if args.workers:
        return max(1, args.workers)
    return max(1, min(os.cpu_count() or 1, cfg.pipeline.runner_slots))


def terminal_chooser(instance: ScenarioInstance) -> int | None:
    """Ask on the terminal which oracle to use; enter keeps the primary."""
    print(f"\nScenario:\n{instance.narrative}")
    for n, o in enumerate(instance.oracles):
        tag = "primary" if n == 0 else "alternative"
        print(f"  [{n}] ({tag}) {o.statement}")
    while True:
        raw = input("oracle [0]: ").strip()
        if not raw:
            return None
        if raw.isdigit() and int(raw) < len(instance.oracles):
            return int(raw)
        print(f"enter a number between 0 and {len(instance.oracles) - 1}")


# subcommands ---------------------------------------------------------------------------------


def cmd_index(args) -> int:
    cfg = _config(args)
    p = cfg.project
    index = build_index(Path(p.root), p.project_name, list(p.source_dirs), p.language if args.config else None)
    path = Path(args.index) if args.index else default_index_path(cfg)
    if path.exists() and not args.rebuild:
        print(f"index exists at {path}; use --rebuild to replace it")
    else:
        index.save(path)
        print(f"indexed {len(index.files)} files, {len(index)} symbols -> {path}")
    for w in index.warnings:
        print(f"warning: {w.file}:{w.line}: {w.reason}", file=sys.stderr)
    return EXIT_OK


def cmd_exam(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    write_manifest(args, cfg, out)
    index = open_index(cfg, Path(args.index) if args.index else None)
    sel = select(cfg, index, args.focal, args.test)
    if not sel.tc.assertions:
        print(f"{sel.tc.id}: the test has no assertions; stage skipped")
        run_stage1(sel, cfg, None, index, None, out, args.seed, 1)
        return EXIT_OK
    gateway = make_gateway(cfg, parse_transcript(args.transcript))
    with Runner(cfg.project, index, cfg.pipeline.runner_slots) as runner:
        result = run_stage1(sel, cfg, gateway, index, lambda: runner, out, args.seed, _workers(args, cfg))
    for exam, outcome in zip(result.exams, result.outcomes):
        print(f"{exam.ref}: {outcome.verdict.value} in {outcome.iterations_used} round(s), "
              f"{len(outcome.knowledge)} item(s) retrieved")
    for note in result.notes:
        print(f"note: {note}")
    print(f"knowledge: {len(result.knowledge)} item(s) -> {out / 'stage1'}")
    return EXIT_OK


def cmd_generalize(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    write_manifest(args, cfg, out)
    gateway = make_gateway(cfg, parse_transcript(args.transcript))
    index = open_index(cfg, Path(args.index) if args.index else None)
    chooser = terminal_chooser if args.interactive_oracles else None
    result = generalize(cfg, index, gateway, args.focal, args.test, out, args.stage, args.seed,
                        _workers(args, cfg), chooser)
    s = result.summary()
    print(f"focal method: {s['focal']}")
    print("stage 1: skipped (no assertions)" if result.stage1.skipped
          else f"stage 1: {s['stage1']['exams']} exam(s), {s['stage1']['knowledge']} knowledge item(s)")
    if result.stage2 is not None:
        print(f"stage 2: VPs {', '.join(s['stage2']['vps'])}; {s['stage2']['instances']} scenario instance(s)")
    for item in s["stage3"]:
        print(f"stage 3: {item['id']} {item['status']}")
    print(f"artifacts -> {out}")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _config(args)
    t = cfg.tuning
    t = replace(t, epochs=args.epochs or t.epochs, batch_size=args.batch_size or t.batch_size,
                split=args.split or t.split, holdout_project=args.holdout or t.holdout_project)
    cfg = replace(cfg, tuning=t)
    out = Path(args.out)
    write_manifest(args, cfg, out)
    gateway = make_gateway(cfg, parse_transcript(args.transcript))
    if args.draft_focal:
        index = open_index(cfg, Path(args.index) if args.index else None)
        sels = [select(cfg, index, args.draft_focal, sel) for sel in args.draft_test]
        sample = draft_sample(sels[0].fm, [s.tc for s in sels], [], gateway, index.language)
        path = codec.write_artifact(sample, out / "drafts" / codec.artifact_filename(
            simple_name(sample.fm.qualified_name), sample))
        print(f"draft reference template for review -> {path}")
        return EXIT_OK
    if not args.dataset:
        raise InputError("tune needs --dataset (or --draft-focal to draft a sample)")
    samples = load_dataset(args.dataset)
    train, test = split_dataset(samples, t, args.seed)
    run = tune(train, test, gateway, t, args.seed, workers=_workers(args, cfg),
               max_queries=cfg.pipeline.max_queries, budget=cfg.pipeline.prompt_budget_tokens)
    codec.write_artifact(run, out / codec.artifact_filename("tuning", run))
    codec.write_artifact(run.best, out / codec.artifact_filename("best", run.best))
    print(f"train {len(train)} / test {len(test)} samples, {run.update_calls} rule update(s)")
    print(f"{'epoch':>5}  {'P':>6}  {'R':>6}  {'F1':>6}")
    for m in run.metrics:
        mark = "  *" if m.epoch == run.selected else ""
        print(f"{m.epoch:>5}  {m.precision:6.3f}  {m.recall:6.3f}  {m.f1:6.3f}{mark}")
    print(f"selected epoch {run.selected}; {len(run.best.rules)} rule(s) -> {out}")
    return EXIT_OK


def _load_tests(directory: str) -> dict[str, list[TestCase]]:
    groups: dict[str, list[TestCase]] = {}
    for p in sorted(Path(directory).rglob("*.test_case.json")):
        tc = codec.read_artifact(p, TestCase)
        groups.setdefault(tc.focal_id, []).append(tc)
    return groups


def _focal_class(focal_id: str) -> str:
    qualified = focal_id.split(":", 1)[-1].split("(", 1)[0]
    return qualified.rsplit(".", 1)[0]


def _matrix_for(matrix: KillMatrix, focal_id: str) -> KillMatrix:
    cls = _focal_class(focal_id)
    sub = matrix.for_class(cls)
    if not sub.universe:
        log.warning("no mutants of %s in the reports; using every mutant", cls)
        return matrix
    return sub


def cmd_eval(args) -> int:
    out = Path(args.out)
    cfg = _config(args)
    write_manifest(args, cfg, out)
    gt_groups = _load_tests(args.gt)
    gen_groups = _load_tests(args.gen)
    if not gt_groups:
        raise InputError(f"no ground-truth test artifacts under {args.gt}")
    metrics = ["mutation", "llm"] if args.metric == "both" else [args.metric]
    matrix = None
    if "mutation" in metrics:
        if not args.reports:
            raise InputError("--metric mutation needs --reports")
        matrix = load_reports(args.reports)
    gateway = make_gateway(cfg, parse_transcript(args.transcript)) if "llm" in metrics else None
    rows = []
    for n, focal_id in enumerate(sorted(gt_groups), 1):
        gts, gens = gt_groups[focal_id], gen_groups.get(focal_id, [])
        row = {"focal": focal_id, "gt": len(gts), "gen": len(gens)}
        reports: list[CoverageReport] = []
        if matrix is not None:
            sub = _matrix_for(matrix, focal_id)
            rep = match_mutation([kill_set_for(sub, t) for t in gts], [kill_set_for(sub, t) for t in gens],
                                 focal_id)
            row["mutation"] = rep.aggregate
            reports.append(rep)
        if gateway is not None:
            rep = llm_assessed(gts, gens, gateway, focal_id, cfg.project.language)
            row["llm"] = rep.aggregate
            reports.append(rep)
        for rep in reports:
            codec.write_artifact(rep, out / codec.artifact_filename(f"focal_{n}.{rep.metric.value}", rep))
        rows.append(row)
    cols = [c for c in ("mutation", "llm") if c in metrics]
    mean = {c: sum(r[c] for r in rows) / len(rows) for c in cols}
    write_json({"rows": rows, "mean": mean}, out / "summary.json")
    print(f"{'focal method':<60} {'gt':>3} {'gen':>4} " + " ".join(f"{c:>9}" for c in cols))
    for r in rows:
        print(f"{r['focal']:<60} {r['gt']:>3} {r['gen']:>4} " + " ".join(f"{r[c]:9.4f}" for c in cols))
    print(f"{'mean':<60} {'':>3} {'':>4} " + " ".join(f"{mean[c]:9.4f}" for c in cols))
    return EXIT_OK


# argument parsing --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--transcript", help="record:<path> or replay:<path>")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="scenforge-out", help="artifact output directory")
    common.add_argument("--workers", type=int, default=0, help="parallel workers (default: cores, capped by runner slots)")
    common.add_argument("--interactive-oracles", action="store_true", help="pick oracles on the terminal")
    common.add_argument("--index", help="index file (default: <root>/.scenforge/index.json)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="scenforge", description="Generalize a developer test into scenario tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="index a project's source symbols")
    p.add_argument("root", nargs="?", help="project root (default: config root or current directory)")
    p.add_argument("--rebuild", action="store_true", help="replace an existing index")
    p.set_defaults(func=cmd_index)

    for name, func, help_text in (("exam", cmd_exam, "run the oracle exam (stage 1) only"),
                                  ("generalize", cmd_generalize, "run stages 1 to 3")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--focal", required=True, help="focal method, e.g. Canvas.setPaint")
        p.add_argument("--test", required=True, help="initial test, e.g. tests/test_canvas.py::CanvasTest::test_x")
        p.add_argument("--root", help="project root (overrides the config)")
        if name == "generalize":
            p.add_argument("--stage", type=int, choices=(1, 2, 3), default=3, help="stop after this stage")
        p.set_defaults(func=func)

    p = sub.add_parser("tune", parents=[common], help="tune the template rules on a labeled dataset")
    p.add_argument("--dataset", help="directory of samples or a JSON list")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--split", choices=("random", "leave-one-project-out"))
    p.add_argument("--holdout", help="project held out for testing")
    p.add_argument("--root", help="project root for --draft-focal")
    p.add_argument("--draft-focal", help="draft a reference template for this method instead of tuning")
    p.add_argument("--draft-test", action="append", default=[], help="test selector (repeatable)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", parents=[common], help="scenario coverage of generated tests")
    p.add_argument("--metric", choices=("mutation", "llm", "both"), default="mutation")
    p.add_argument("--reports", help="directory of mutation reports (JSON or XML)")
    p.add_argument("--gt", required=True, help="directory of ground-truth test artifacts")
    p.add_argument("--gen", required=True, help="directory of generated test artifacts")
    p.set_defaults(func=cmd_eval)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageFailure):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (InputError, EmptyProject)):
        return EXIT_INPUT
    return EXIT_PIPELINE


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ScenforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
