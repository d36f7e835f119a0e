import json

from helpers import COVERAGE_DIR, TRANSCRIPTS, TUNING_DIR
from scenforge import cli

SETPAINT = ["--focal", "Canvas.setPaint", "--test", "tests/test_canvas.py::CanvasTest::test_linearGradientPaint"]


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr().out


def test_index_writes_file(paintlib, capsys):
    code, out = _run(capsys, "index", paintlib)
    path = paintlib / ".scenforge" / "index.json"
    assert code == 0 and path.is_file()
    assert "indexed 3 files" in out
    first = path.read_bytes()
    _, out = _run(capsys, "index", paintlib)
    assert "use --rebuild" in out
    assert _run(capsys, "index", paintlib, "--rebuild")[0] == 0
    assert path.read_bytes() == first


def test_index_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert _run(capsys, "index", tmp_path / "empty")[0] == cli.EXIT_INPUT


def test_generalize_replay(paintlib, tmp_path, capsys):
    code, out = _run(capsys, "generalize", "--config", paintlib / "scenforge.json",
                     "--transcript", f"replay:{TRANSCRIPTS / 'setpaint.jsonl'}", *SETPAINT, "--out", tmp_path / "o")
    assert code == 0
    assert "stage 1: skipped" in out
    assert "3 scenario instance(s)" in out
    assert out.count(" passing") == 3


def test_generalize_stops_after_stage2(paintlib, tmp_path, capsys, monkeypatch):
    def no_runner(*a, **k):
        raise AssertionError("runner used")

    monkeypatch.setattr("scenforge.pipeline.Runner", no_runner)
    code, out = _run(capsys, "generalize", "--config", paintlib / "scenforge.json", "--stage", 2,
                     "--transcript", f"replay:{TRANSCRIPTS / 'setpaint.jsonl'}", *SETPAINT, "--out", tmp_path / "o")
    assert code == 0 and "3 scenario instance(s)" in out and "stage 3" not in out


def test_live_mode_without_provider(paintlib, tmp_path, capsys, monkeypatch):
    for var in ("SCENFORGE_LLM_ENDPOINT", "SCENFORGE_LLM_MODEL", "SCENFORGE_LLM_API_KEY"):
        monkeypatch.delenv(var, raising=False)
    code = cli.main(["generalize", "--config", str(paintlib / "scenforge.json"), *SETPAINT,
                     "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG


def test_eval_both_metrics(tmp_path, capsys):
    code, out = _run(capsys, "eval", "--metric", "both", "--reports", COVERAGE_DIR / "reports_canonical",
                     "--gt", COVERAGE_DIR / "gt", "--gen", COVERAGE_DIR / "gen",
                     "--transcript", f"replay:{TRANSCRIPTS / 'eval_judge.jsonl'}", "--out", tmp_path / "o")
    assert code == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert round(summary["mean"]["mutation"], 4) == 0.6667
    assert summary["mean"]["llm"] == 0.5
    assert "0.6667" in out


def test_eval_needs_reports(tmp_path, capsys):
    code, _ = _run(capsys, "eval", "--gt", COVERAGE_DIR / "gt", "--gen", COVERAGE_DIR / "gen",
                   "--out", tmp_path / "o")
    assert code == cli.EXIT_INPUT


def test_tune_replay(tmp_path, capsys):
    code, out = _run(capsys, "tune", "--dataset", TUNING_DIR / "dataset.json", "--epochs", 1, "--batch-size", 4,
                     "--split", "leave-one-project-out", "--transcript", f"replay:{TRANSCRIPTS / 'tune.jsonl'}",
                     "--out", tmp_path / "o")
    assert code == 0
    assert "train 8 / test 4 samples, 2 rule update(s)" in out
    runs = list((tmp_path / "o").glob("tuning*.json"))
    assert len(runs) == 1
    assert len(json.loads(runs[0].read_text())["body"]["checkpoints"]) == 1


def test_exam_without_assertions(paintlib, tmp_path, capsys):
    code, out = _run(capsys, "exam", "--config", paintlib / "scenforge.json", *SETPAINT, "--out", tmp_path / "o")
    assert code == 0 and "stage skipped" in out


def test_missing_transcript_is_config_error(paintlib, tmp_path, capsys):
    code = cli.main(["generalize", "--config", str(paintlib / "scenforge.json"), *SETPAINT,
                     "--transcript", f"replay:{tmp_path / 'none.jsonl'}", "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG

