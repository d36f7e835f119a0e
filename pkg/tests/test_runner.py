import pytest

from helpers import FIXTURES
from scenforge.config import load_config
from scenforge.errors import RunnerUnavailable
from scenforge.index import build_index
from scenforge.lang import get_profile
from scenforge.runner import Runner, RunStatus, classify, filter_messages

ROUTE_TEST = "tests/test_route.py"


def _with_body(text: str, body: str) -> str:
    old = text[text.index("    def test_matchesWildcard"):text.index("    def test_paramsSingleSegment")]
    return text.replace(old, "    def test_matchesWildcard(self):\n" + body + "\n")


@pytest.fixture
def route_runner(routelib):
    cfg = load_config(routelib / "scenforge.json")
    idx = build_index(routelib, "routelib", ["src"], "python")
    with Runner(cfg.project, idx, 2) as runner:
        yield runner, (routelib / ROUTE_TEST).read_text()


def _run(runner, text):
    return runner.run_candidate(ROUTE_TEST, text, "test_matchesWildcard", "RouteEntryTest")


def test_pass(route_runner):
    runner, text = route_runner
    out = _run(runner, text)
    assert out.status is RunStatus.PASS and out.messages == ()


def test_syntax_error_is_compile_error(route_runner):
    runner, text = route_runner
    out = _run(runner, _with_body(text, "        self.assertTrue((1)\n"))
    assert out.status is RunStatus.COMPILE_ERROR
    assert any("test_route.py" in m for m in out.messages)


def test_unknown_attribute_is_compile_error(route_runner):
    runner, text = route_runner
    body = '        entry = RouteEntry("GET", "/a", "t")\n        self.assertTrue(entry.matchesAny("GET", "/a"))\n'
    assert _run(runner, _with_body(text, body)).status is RunStatus.COMPILE_ERROR


def test_exception_before_assertion(route_runner):
    runner, text = route_runner
    body = '        entry = RouteEntry("GET", "/a", "t")\n        entry.params("/b")\n        self.assertTrue(True)\n'
    out = _run(runner, _with_body(text, body))
    assert out.status is RunStatus.EXECUTION_ERROR
    assert any("ValueError" in m for m in out.messages)


def test_false_assertion(route_runner):
    runner, text = route_runner
    body = '        entry = RouteEntry("GET", "/a", "t")\n        self.assertEqual(entry.params("/a"), {"x": "1"})\n'
    out = _run(runner, _with_body(text, body))
    assert out.status is RunStatus.ASSERTION_FAILURE
    assert any("AssertionError" in m for m in out.messages)


def test_original_file_restored(route_runner, routelib):
    runner, text = route_runner
    _run(runner, _with_body(text, "        pass\n"))
    assert _run(runner, text).status is RunStatus.PASS
    assert (routelib / ROUTE_TEST).read_text() == text


def test_broken_project_is_unavailable(routelib):
    (routelib / "src" / "routelib" / "route.py").write_text("def broken(:\n")
    cfg = load_config(routelib / "scenforge.json")
    with Runner(cfg.project, None, 1) as runner, pytest.raises(RunnerUnavailable):
        runner.ensure_pristine()


PY = get_profile("python")
JAVA = get_profile("java")


def test_python_trace_keeps_project_frames():
    log = "\n".join([
        "Traceback (most recent call last):",
        '  File "/usr/lib/python3.10/unittest/case.py", line 59, in testPartExecutor',
        "    yield",
        '  File "/usr/lib/python3.10/unittest/case.py", line 591, in run',
        "    self._callTestMethod(testMethod)",
        '  File "tests/test_route.py", line 9, in test_matchesWildcard',
        "    entry.params('/b')",
        '  File "/usr/lib/python3.10/unittest/case.py", line 549, in _callTestMethod',
        "    method()",
        '  File "src/routelib/route.py", line 40, in params',
        "    raise ValueError(f'{path} does not match {self.path}')",
        "ValueError: /b does not match /a",
    ])
    kept = filter_messages(log, None, PY)
    frames = [m for m in kept if m.lstrip().startswith("File ")]
    assert len(frames) == 2
    assert kept[-1] == "ValueError: /b does not match /a"


def test_java_framework_only_trace_keeps_headline():
    log = "\n".join([
        "java.lang.NullPointerException: paint is null",
        "\tat org.junit.runners.ParentRunner.run(ParentRunner.java:413)",
        "\tat org.apache.maven.surefire.Booter.main(Booter.java:10)",
    ])
    idx = build_index(FIXTURES / "java" / "paint", "ofdrw", None, "java")
    kept = filter_messages(log, idx, JAVA)
    assert kept == ["java.lang.NullPointerException: paint is null"]


def test_java_diagnostic_retained_verbatim():
    idx = build_index(FIXTURES / "java" / "paint", "ofdrw", None, "java")
    line = "[ERROR] /w/src/main/java/org/ofdrw/Canvas.java:[41,9] cannot find symbol"
    kept = filter_messages(line + "\n[ERROR] /opt/lib/Other.java:[1,1] noise\n", idx, JAVA)
    assert kept[0] == line


@pytest.mark.parametrize("log,code,expected", [
    ("", 0, RunStatus.PASS),
    ("Canvas.java:[41,9] error: cannot find symbol", 1, RunStatus.COMPILE_ERROR),
    ("java.lang.AssertionError: expected:<1> but was:<2>", 1, RunStatus.ASSERTION_FAILURE),
    ("java.lang.IllegalStateException: boom", 1, RunStatus.EXECUTION_ERROR),
])
def test_classify_java_logs(log, code, expected):
    assert classify(JAVA, log, code) is expected
