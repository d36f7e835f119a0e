import json
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import PROJECTS
from strategies import scenario_templates
from scenforge.errors import (
    ChoiceOutOfRange,
    ContextOverflow,
    GenerationFailure,
    InvariantViolation,
    NoValidBundles,
    QueryBudgetExceeded,
)
from scenforge.index import build_index, extract_focal, extract_test
from scenforge.llm import Gateway, ScriptedProvider
from scenforge.model import KnowledgeItem, OracleKind, Provenance, SymbolKind
from scenforge.scenario import (
    SettingsBundle,
    build_template_prompt,
    crystallize,
    generate_template,
    initial_prompt,
    instantiate,
    select_oracle,
)
from scenforge.templates import parse_template

TEMPLATE = """Analysis: paint kind and shape vary.

STEP 1: Create a document and a canvas
STEP 2: Build a paint object
  VP paint style: the kind of paint [CANDIDATES: Color | LinearGradientPaint | RadialGradientPaint]
STEP 3: Set the paint on the canvas
  DEP paint style <- STEP 2
STEP 4: Fill a shape
  VP drawing shape: the fill operation [CANDIDATES: fillRect | fillOval]
STEP 5: Check the recorded operation
"""


def _bundle(paint, shape, **extra):
    b = {"settings": {"paint style": paint, "drawing shape": shape}, "primary_oracle": f"{paint} {shape} recorded",
         "dependencies": [{"step": 3, "vp": "paint style", "value": paint}], "alternative_oracles": []}
    b["settings"].update(extra)
    return b


@pytest.fixture(scope="module")
def paint():
    root = PROJECTS / "paintlib"
    idx = build_index(root, "paintlib", ["src"], "python")
    fm = extract_focal(idx, root, "Canvas.setPaint")
    tc = extract_test(idx.profile, root, "tests/test_canvas.py::CanvasTest::test_linearGradientPaint", fm.id)
    return idx, fm, tc


def _section(text, title):
    m = re.search(rf"^## {re.escape(title)}\n(.*?)(?=^## |\Z)", text, re.S | re.M)
    return m.group(1).strip()


def test_prompt_sections(paint):
    _, fm, tc = paint
    user = build_template_prompt(fm, tc, [], initial_prompt()).request.messages[1].content
    assert _section(user, "Code knowledge") == "(none provided)"
    rules = _section(user, "Rules for choosing variation points").splitlines()
    assert [r.split(".")[0] for r in rules] == ["1", "2", "3", "4"]


def test_budget_drops_lowest_ranked(paint):
    _, fm, tc = paint
    relevant = KnowledgeItem("paintlib.paint.LinearGradientPaint", SymbolKind.CLASS, "class LinearGradientPaint: ...")
    filler = [KnowledgeItem(f"pkg.Unrelated{i}", SymbolKind.CLASS, "class X:\n" + "    pass\n" * 200)
              for i in range(3)]
    full = build_template_prompt(fm, tc, [relevant, *filler], initial_prompt())
    budget = len(full.request.messages[1].content) // 4 - 300
    cut = build_template_prompt(fm, tc, [relevant, *filler], initial_prompt(), budget_tokens=budget)
    assert cut.dropped and "paintlib.paint.LinearGradientPaint" not in cut.dropped
    assert cut.dropped[0] == "pkg.Unrelated2"
    assert "omitted to fit the context budget" in cut.request.messages[1].content
    with pytest.raises(ContextOverflow):
        build_template_prompt(fm, tc, filler, initial_prompt(), budget_tokens=50)


def test_family_query_then_template(paint):
    idx, fm, tc = paint
    replies = iter(["QUERY: Paint [KIND: family]", TEMPLATE])
    g = Gateway(ScriptedProvider(lambda r: next(replies)))
    res = generate_template(fm, tc, [], initial_prompt(), g, idx)
    names = {k.simple_name for k in res.knowledge}
    assert {"Color", "LinearGradientPaint", "RadialGradientPaint"} <= names
    assert all(k.provenance is Provenance.STAGE2_QUERY for k in res.knowledge)
    assert res.template.vp_names == ["paint_style", "drawing_shape"]
    assert res.queries == ["Paint [family]"]


def test_forward_dep_is_generation_failure(paint):
    idx, fm, tc = paint
    bad = "STEP 1: a\n  DEP x <- STEP 2\nSTEP 2: b\n  VP x: y"
    with pytest.raises(GenerationFailure):
        generate_template(fm, tc, [], initial_prompt(), Gateway(ScriptedProvider([bad])), idx)


def test_query_budget(paint):
    idx, fm, tc = paint
    g = Gateway(ScriptedProvider(lambda r: "QUERY: Canvas"))
    with pytest.raises(QueryBudgetExceeded):
        generate_template(fm, tc, [], initial_prompt(), g, idx, max_queries=2)
    with pytest.raises(GenerationFailure):
        generate_template(fm, tc, [], initial_prompt(), Gateway(ScriptedProvider(["QUERY: Canvas"])), None)


def _crystal(paint, bundles):
    _, fm, tc = paint
    template = parse_template(TEMPLATE[TEMPLATE.index("STEP 1"):], fm.id)
    g = Gateway(ScriptedProvider([json.dumps({"scenarios": bundles})]))
    return crystallize(template, fm, tc, [], g)


def test_three_setpaint_instances(paint):
    res = _crystal(paint, [_bundle("LinearGradientPaint", "fillRect"), _bundle("RadialGradientPaint", "fillOval"),
                           _bundle("Color", "fillOval")])
    assert len(res.instances) == 3 and not res.rejected
    assert res.instances[1].settings == {"paint_style": "RadialGradientPaint", "drawing_shape": "fillOval"}
    assert "4. Fill a shape [with drawing_shape=fillOval]" in res.instances[1].narrative


def test_bundle_with_undeclared_vp_rejected(paint):
    res = _crystal(paint, [_bundle("Color", "fillOval"), _bundle("Color", "fillRect", timeout="5")])
    assert len(res.instances) == 1
    assert res.rejected[0].position == 1 and "timeout" in res.rejected[0].reasons[0]


def test_bundle_missing_vp_rejected(paint):
    partial = _bundle("Color", "fillOval")
    del partial["settings"]["drawing shape"]
    res = _crystal(paint, [partial, _bundle("Color", "fillRect")])
    assert len(res.instances) == 1 and "missing setting" in res.rejected[0].reasons[0]
    with pytest.raises(NoValidBundles):
        _crystal(paint, [partial])


def test_oracle_selection(paint):
    b = _bundle("Color", "fillOval")
    b["alternative_oracles"] = ["setPaint rejects solid colors"]
    inst = _crystal(paint, [b]).instances[0]
    assert select_oracle(inst).active_oracle.kind is OracleKind.PRIMARY
    alt = select_oracle(inst, 1)
    assert alt.active_oracle.statement == "setPaint rejects solid colors"
    assert alt.primary.kind is OracleKind.PRIMARY
    with pytest.raises(ChoiceOutOfRange):
        select_oracle(inst, 2)


@given(scenario_templates(), st.data())
def test_instantiation_is_deterministic(template, data):
    settings = {n: data.draw(st.sampled_from(["a", "b"])) for n in reversed(template.vp_names)}
    bundle = SettingsBundle(settings, "expected")
    assert instantiate(template, bundle) == instantiate(template, bundle)
    assert list(instantiate(template, bundle).settings) == template.vp_names


def test_instantiate_rejects_unknown_step():
    from scenforge.model import DependencyResolution

    t = parse_template("STEP 1: go\n  VP x: y", "f")
    with pytest.raises(InvariantViolation):
        instantiate(t, SettingsBundle({"x": "1"}, "ok", (DependencyResolution(7, "x", "1"),)))
