import json
import re

import pytest

from helpers import PROJECTS
from scenforge import codec
from scenforge.config import load_config
from scenforge.errors import ZeroCandidates
from scenforge.exam import (
    ExamOption,
    ExamVerdict,
    OptionStatus,
    build_exam,
    filter_candidates,
    generate_wrong_oracles,
    run_exam,
    stage1,
)
from scenforge.index import build_index, extract_focal, extract_test
from scenforge.llm import Gateway, ScriptedProvider
from scenforge.model import Provenance
from scenforge.runner import Runner

SELECTOR = "tests/test_route.py::RouteEntryTest::test_matchesWildcard"
FIRST = 'self.assertTrue(entry.matches("GET", "/hello/world"))'


def _setup(root):
    idx = build_index(root, "routelib", ["src"], "python")
    fm = extract_focal(idx, root, "RouteEntry.matchPath")
    return idx, fm, extract_test(idx.profile, root, SELECTOR, fm.id)


@pytest.fixture(scope="module")
def route():
    return _setup(PROJECTS / "routelib")


def _oracles(*lists):
    return json.dumps({"oracles": [{"assertion": i, "wrong": w} for i, w in enumerate(lists, 1)]})


def test_wrong_oracles_capped_and_deduplicated(route):
    idx, fm, tc = route
    many = [f"self.assertEqual({k}, 0)" for k in range(12)]
    reply = _oracles([FIRST, FIRST.replace("assertTrue", "assertFalse"), *many], ["x(1)"], ["y(2)"])
    out = generate_wrong_oracles(fm, tc, Gateway(ScriptedProvider([reply])), q_max=10)
    assert len(out[0]) == 10
    assert FIRST not in out[0]
    assert out[0][0] == FIRST.replace("assertTrue", "assertFalse")


def test_zero_candidates_after_revision(route):
    idx, fm, tc = route
    useless = _oracles([FIRST], ["a()"], ["b()"])
    with pytest.raises(ZeroCandidates) as err:
        generate_wrong_oracles(fm, tc, Gateway(ScriptedProvider([useless, useless])))
    assert set(err.value.partial) == {1, 2}


def test_filter_classifies_variants(routelib):
    idx, fm, tc = _setup(routelib)
    cfg = load_config(routelib / "scenforge.json")
    variants = [
        FIRST.replace("assertTrue", "assertFalse"),            # fails on the assertion
        'self.assertTrue(entry.matchesAll("GET", "/x"))',      # no such method
        'self.assertTrue(entry.matches("GET", "/hello/a/b"))',  # wildcard still matches: passes
        'self.assertTrue(entry.params("/nope"))',              # raises before asserting
    ]
    with Runner(cfg.project, idx, 2) as runner:
        got = filter_candidates(tc, tc.assertions[0], variants, runner, workers=2)
    assert [o.status for o in got] == [OptionStatus.VALID_WRONG, OptionStatus.DISCARDED_COMPILE,
                                      OptionStatus.DISCARDED_PASSES, OptionStatus.DISCARDED_EXEC]


def _exam(tc, seed=0):
    wrong = [ExamOption(FIRST.replace("assertTrue", "assertFalse"), OptionStatus.VALID_WRONG),
             ExamOption("self.assertIsNone(x)", OptionStatus.DISCARDED_COMPILE)]
    return build_exam(tc, 0, wrong, seed)


def _answer(correct: bool):
    def reply(request):
        user = request.messages[1].content
        options = dict(re.findall(r"^([A-Z])\. (.*)$", user, re.M))
        letter = next(k for k, v in options.items() if (v == FIRST) == correct)
        return json.dumps({"answer": letter})
    return reply


def test_exam_presents_only_valid_options(route):
    _, _, tc = route
    exam = _exam(tc)
    assert len(exam.presented) == 2
    assert "<<MASKED ORACLE>>" in exam.masked_source and FIRST not in exam.masked_source
    assert _exam(tc) == exam  # shuffling is seeded
    assert codec.parse_artifact(codec.serialize_artifact(exam)) == exam


def test_query_then_correct(route):
    idx, fm, tc = route
    replies = iter([json.dumps({"queries": ["matchPath"]})])
    gateway = Gateway(ScriptedProvider(lambda r: next(replies, None) or _answer(True)(r)))
    out = run_exam(_exam(tc), gateway, idx, idx.neighborhood(fm, tc), fm)
    assert out.verdict is ExamVerdict.PASSED and out.iterations_used == 2
    assert [k.symbol for k in out.knowledge] == ["routelib.route.RouteEntry.matchPath"]
    assert out.knowledge[0].provenance is Provenance.STAGE1_EXAM


def test_immediately_correct(route):
    idx, fm, tc = route
    out = run_exam(_exam(tc), Gateway(ScriptedProvider(_answer(True))), idx, idx.neighborhood(fm, tc), fm)
    assert (out.verdict, out.iterations_used, out.knowledge) == (ExamVerdict.PASSED, 1, ())


def test_wrong_three_times(route):
    idx, fm, tc = route
    out = run_exam(_exam(tc), Gateway(ScriptedProvider(_answer(False))), idx, idx.neighborhood(fm, tc), fm,
                   max_iter=3, enforced_per_miss=1)
    assert out.verdict is ExamVerdict.EXHAUSTED and out.iterations_used == 3
    assert len(out.knowledge) == 3
    assert out.knowledge[0].simple_name == "matches"
    assert sum(e.kind == "enforced" for e in out.trace) == 3


def test_stage1_skips_assertion_free_test():
    root = PROJECTS / "paintlib"
    idx = build_index(root, "paintlib", ["src"], "python")
    fm = extract_focal(idx, root, "Canvas.setPaint")
    tc = extract_test(idx.profile, root, "tests/test_canvas.py::CanvasTest::test_linearGradientPaint", fm.id)

    def never(request):
        raise AssertionError("stage 1 must not call the model")

    result = stage1(fm, tc, Gateway(ScriptedProvider(never)), idx, runner=None)
    assert result.skipped and result.exams == [] and result.knowledge == []
