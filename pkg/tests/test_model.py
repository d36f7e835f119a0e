import json

import pytest

from scenforge import codec
from scenforge.errors import InvariantViolation, SchemaError
from scenforge.model import (
    AssertionSite,
    Dependency,
    FocalMethod,
    Oracle,
    OracleBasis,
    OracleKind,
    RulePrompt,
    ScenarioInstance,
    ScenarioTemplate,
    TemplateStep,
    TestCase,
    VariationPoint,
    canonical_vp_name,
    method_header,
    validate_instance,
    validate_workspace,
)
from scenforge.scenario import DEFAULT_SCAFFOLD
from scenforge.templates import parse_template, render_template

SETPAINT = """\
STEP 1: Create a document and a canvas on a fresh page
STEP 2: Construct the paint object
  VP paint_type: which paint implementation is used [CANDIDATES: Color | LinearGradientPaint | RadialGradientPaint]
STEP 3: Install the paint on the canvas with setPaint
  VP paint_parameters: stops and colors of the paint [CANDIDATES: two stops | three stops]
  DEP paint_type <- STEP 2
STEP 4: Fill a shape
  VP shape: the fill call [CANDIDATES: fillRect | fillOval] [KIND: code_element]
STEP 5: Check what the page recorded
"""


def _vp(name):
    return VariationPoint(name)


def test_minimal_template_round_trips():
    t = ScenarioTemplate("p:C.m()", (TemplateStep(1, "do it", (_vp("x"),)),))
    assert codec.parse_artifact(codec.serialize_artifact(t)) == t


def test_instance_lists_primary_first():
    alt = Oracle(OracleKind.ALTERNATIVE, "raises", OracleBasis.REQUIREMENT_INFERRED)
    primary = Oracle(OracleKind.PRIMARY, "returns 3", OracleBasis.IMPLEMENTATION_DEDUCED)
    inst = ScenarioInstance("p:C.m()@v0", {"x": "1"}, (alt, primary), "1. do it", active=0)
    doc = json.loads(codec.serialize_artifact(inst))
    assert [o["kind"] for o in doc["body"]["oracles"]] == ["primary", "alternative"]
    # the chosen oracle follows the reordering
    assert inst.active_oracle == alt


def test_forward_dependency_rejected():
    steps = (TemplateStep(1, "a"), TemplateStep(2, "b", deps=(Dependency("v", 3),)), TemplateStep(3, "c", (_vp("v"),)))
    with pytest.raises(InvariantViolation, match="forward dependency"):
        ScenarioTemplate("p:C.m()", steps)


def test_setpaint_transcription():
    t = parse_template(SETPAINT, "ofdrw:org.ofdrw.Canvas.setPaint(Paint)")
    assert len(t.steps) == 5
    assert [s.step_id for s in t.steps if s.vps] == [2, 3, 4]
    assert t.vps[2].kind.value == "code_element"
    assert parse_template(render_template(t), t.focal_id) == t


def test_template_needs_a_vp():
    with pytest.raises(InvariantViolation, match="at least one VP"):
        ScenarioTemplate("p:C.m()", ())


def test_duplicate_vp_across_steps():
    with pytest.raises(InvariantViolation, match="vp names unique"):
        ScenarioTemplate("p:C.m()", (TemplateStep(1, "a", (_vp("x"),)), TemplateStep(2, "b", (_vp("x"),))))


def test_step_ids_must_be_contiguous():
    with pytest.raises(InvariantViolation, match="contiguous"):
        ScenarioTemplate("p:C.m()", (TemplateStep(2, "a", (_vp("x"),)),))


@pytest.mark.parametrize("raw,expected", [("Paint Style", "paint_style"), ("  drawing-shape ", "drawing_shape"),
                                          ("VP#1", "vp_1")])
def test_canonical_vp_names(raw, expected):
    assert canonical_vp_name(raw) == expected


def test_non_canonical_vp_rejected():
    with pytest.raises(InvariantViolation):
        VariationPoint("Paint Style")


def test_method_header_java_and_python():
    assert method_header("@Override\npublic void setPaint(Paint p) {\n  x();\n}") == "public void setPaint(Paint p)"
    assert method_header("def setPaint(self, paint):\n    pass") == "def setPaint(self, paint)"


def test_focal_skeleton_must_contain_signature():
    with pytest.raises(InvariantViolation, match="skeleton"):
        FocalMethod("p:C.m()", "def m(self):\n    pass\n", "class C:\n    def other(self): ...\n", "p")


def test_assertion_positions_checked():
    with pytest.raises(InvariantViolation, match="assertion positions"):
        TestCase("t", "t", "def t(self):\n    self.assertTrue(x)\n", "f", (AssertionSite("self.assertTrue(x)", 0),))


def test_exactly_one_primary():
    p = Oracle(OracleKind.PRIMARY, "a", OracleBasis.IMPLEMENTATION_DEDUCED)
    with pytest.raises(InvariantViolation, match="exactly one primary"):
        ScenarioInstance("r", {}, (p, p), "")
    with pytest.raises(InvariantViolation):
        Oracle(OracleKind.PRIMARY, "a", OracleBasis.REQUIREMENT_INFERRED)


def test_instance_must_match_template():
    t = ScenarioTemplate("f", (TemplateStep(1, "a", (_vp("x"), _vp("y"))),))
    p = Oracle(OracleKind.PRIMARY, "a", OracleBasis.IMPLEMENTATION_DEDUCED)
    validate_instance(ScenarioInstance(t.ref, {"x": "1", "y": "2"}, (p,), ""), t)
    with pytest.raises(InvariantViolation, match="missing setting"):
        validate_instance(ScenarioInstance(t.ref, {"x": "1"}, (p,), ""), t)


def test_prompt_versions_increase():
    p = RulePrompt(DEFAULT_SCAFFOLD, ("r1",))
    q = p.revise(("r1", "r2"))
    assert (q.version, q.lineage) == (1, 0)
    with pytest.raises(InvariantViolation):
        RulePrompt(DEFAULT_SCAFFOLD, (), 1, 1)


def test_workspace_focal_ids():
    fm = FocalMethod("p:C.m()", "def m(self):\n    pass\n", "class C:\n    def m(self): ...\n", "p")
    tc = TestCase("t", "t", "def t(self):\n    pass\n", "p:C.other()")
    with pytest.raises(InvariantViolation, match="focal_id resolves"):
        validate_workspace([fm], [tc])
    with pytest.raises(InvariantViolation, match="unique"):
        validate_workspace([fm, fm], [])


def test_parse_rejects_wrong_kind_and_bad_json():
    t = ScenarioTemplate("f", (TemplateStep(1, "a", (_vp("x"),)),))
    with pytest.raises(SchemaError):
        codec.parse_artifact(codec.serialize_artifact(t), TestCase)
    with pytest.raises(SchemaError):
        codec.parse_artifact("{not json")
    with pytest.raises(SchemaError):
        codec.parse_artifact(json.dumps({"kind": "scenario_template", "body": {"focal_id": "f"}}))


def test_parse_rechecks_invariants():
    doc = json.loads(codec.serialize_artifact(ScenarioTemplate("f", (TemplateStep(1, "a", (_vp("x"),)),))))
    doc["body"]["steps"][0]["step_id"] = 4
    with pytest.raises(InvariantViolation):
        codec.parse_artifact(json.dumps(doc))
