"""Shared builders for the test suite: synthetic tuning samples and a scripted tuning model."""

from __future__ import annotations

import re
import shutil
from pathlib import Path

from scenforge.llm import CompletionRequest
from scenforge.model import AssertionSite, FocalMethod, TestCase
from scenforge.templates import parse_template
from scenforge.tuning import TuningSample

FIXTURES = Path(__file__).parent / "fixtures"
PROJECTS = FIXTURES / "projects"
TRANSCRIPTS = FIXTURES / "transcripts"
COVERAGE_DIR = FIXTURES / "coverage"
TUNING_DIR = FIXTURES / "tuning"

# acceptance criterion number -> (passed, description), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

_FACTORS = ["shape_kind", "scale_factor", "anchor_point", "fill_style", "border_width", "clip_region"]


def copy_project(name: str, dest: Path) -> Path:
    target = dest / name
    shutil.copytree(PROJECTS / name, target, ignore=shutil.ignore_patterns(".scenforge", "__pycache__"))
    return target


def make_sample(i: int, project: str = "demo") -> TuningSample:
    """A small labeled sample; its reference VPs are listed in a comment of the method source."""
    factors = [_FACTORS[(i + k) % len(_FACTORS)] for k in range(2 + i % 2)]
    cls = f"Shape{i}"
    source = (f"def transform(self, amount):\n"
              f"    # factors: {', '.join(factors)}\n"
              f"    return self.size * amount\n")
    fid = f"{project}:geom.{cls}.transform(amount)"
    fm = FocalMethod(fid, source, f"class {cls}:\n    def transform(self, amount): ...\n", project)
    test_src = (f"def test_transform(self):\n"
                f"    s = {cls}(2)\n"
                f"    self.assertEqual(s.transform(3), 6)\n")
    stmt = "self.assertEqual(s.transform(3), 6)"
    tc = TestCase(f"tests/test_geom.py::{cls}Test::test_transform", "test_transform", test_src, fid,
                  (AssertionSite(stmt, test_src.index(stmt)),), file="tests/test_geom.py",
                  container=f"{cls}Test")
    lines = ["STEP 1: Build the shape"]
    lines += [f"  VP {f}: one factor of the scenario [CANDIDATES: low | high]" for f in factors]
    lines.append("STEP 2: Call transform and check the result")
    truth = parse_template("\n".join(lines), fid)
    return TuningSample(fm, tc, (), truth)


def make_samples(n: int, projects: int = 1) -> list[TuningSample]:
    return [make_sample(i, f"proj{i % projects}") for i in range(n)]


def _section(text: str, title: str) -> str:
    m = re.search(rf"^## {re.escape(title)}\n(.*?)(?=^## |\Z)", text, re.S | re.M)
    return m.group(1) if m else ""


def tuning_responder(request: CompletionRequest) -> str:
    """Cooperative model: the more rules the prompt carries, the closer its templates get to the reference."""
    user = request.messages[-1].content
    if request.tag == "tune.generate":
        factors = re.search(r"# factors: (.*)", user).group(1).split(", ")
        rules = len(re.findall(r"^\d+\. ", _section(user, "Rules for choosing variation points"), re.M))
        keep = factors[: max(1, (rules - 4) // 5)]
        vps = keep + (["noise_factor"] if rules < 15 else [])
        lines = ["STEP 1: Build the shape"]
        lines += [f"  VP {v}: something that varies [CANDIDATES: a | b]" for v in vps]
        lines.append("STEP 2: Call the method and check")
        return "\n".join(lines)
    if request.tag == "tune.feedback":
        missing = re.search(r"Missing \(in the reference only\): (.*)", user).group(1)
        return f"ADD: Treat {missing} as a variation point when the method depends on it"
    if request.tag == "tune.synthesize":
        return "ADD [generalized]: Prefer factors that change the observable result"
    if request.tag == "tune.update":
        feedback = _section(user, "Feedback for this batch").strip().splitlines()
        first = feedback[0] if feedback else "NONE"
        text = first.split(":", 1)[1].strip() if ":" in first else "Keep variation points concrete"
        n = len(re.findall(r"^\d+\. ", _section(user, "Current rules"), re.M))
        return f"ADD: {text} (rule {n + 1})"
    if request.tag == "tune.vp_alignment":
        return "NONE"
    raise AssertionError(f"unexpected request {request.tag}")
