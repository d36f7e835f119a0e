"""Scenario coverage: mutation-based matching and judge-assessed fulfilment."""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import codec
from .errors import EmptyGroundTruthKillSet, InvariantViolation, SchemaError
from .llm import CompletionRequest, Gateway
from .model import TestCase
from .prompting import fence, section

log = logging.getLogger(__name__)

MUTANT_STATUSES = ("KILLED", "SURVIVED", "NO_COVERAGE", "TIMED_OUT")


@dataclass(frozen=True)
class MutantKillSet:
    test_id: str
    killed: frozenset[str]
    universe: frozenset[str]

    def __post_init__(self) -> None:
        if not self.killed <= self.universe:
            raise InvariantViolation("killed mutants lie in the universe", self.test_id)


def pairwise_score(gt: MutantKillSet, gen: MutantKillSet) -> float:
    """Share of the ground-truth test's killed mutants that the generated test also kills."""
    return float(_score(gt, gen))


def _score(gt: MutantKillSet, gen: MutantKillSet) -> Fraction:
    if not gt.killed:
        raise EmptyGroundTruthKillSet(f"{gt.test_id} kills no mutants")
    return Fraction(len(gt.killed & gen.killed), len(gt.killed))


# assignment --------------------------------------------------------------------------


def _min_cost_assignment(cost: list[list[Fraction]]) -> tuple[Fraction, list[int]]:
    """Square min-cost assignment with potentials and augmenting paths, O(n^3), exact arithmetic."""
    n = len(cost)
    if n == 0:
        return Fraction(0), []
    inf = None  # stands for +infinity
    u = [Fraction(0)] * (n + 1)
    v = [Fraction(0)] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = none)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv: list[Fraction | None] = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta, j1 = inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if minv[j] is None or cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if delta is None or minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = [0] * n
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    total = sum((cost[i][row_to_col[i]] for i in range(n)), Fraction(0))
    return total, row_to_col


def _best_total(weights: list[list[Fraction]], rows: list[int], cols: list[int]) -> Fraction:
    size = max(len(rows), len(cols))
    if size == 0:
        return Fraction(0)
    cost = [[-(weights[rows[a]][cols[b]]) if a < len(rows) and b < len(cols) else Fraction(0)
             for b in range(size)] for a in range(size)]
    total, _ = _min_cost_assignment(cost)
    return -total


def max_weight_matching(weights: Sequence[Sequence[float | Fraction]]) -> tuple[list[tuple[int, int]], Fraction]:
    """Maximum-weight matching of rows to columns, covering min(rows, cols) pairs.

    Among optimal matchings the one whose sorted pair list is lexicographically
    smallest is returned. Weights are handled as exact fractions.
    """
    # floats go through their shortest repr so 0.1 means one tenth
    w = [[Fraction(repr(x)) if isinstance(x, float) else Fraction(x) for x in row] for row in weights]
    n = len(w)
    m = len(w[0]) if n else 0
    if n == 0 or m == 0:
        return [], Fraction(0)
    best = _best_total(w, list(range(n)), list(range(m)))
    pairs: list[tuple[int, int]] = []
    free_cols = list(range(m))
    fixed = Fraction(0)
    slots = min(n, m)
    for i in range(n):
        if len(pairs) == slots:
            break
        rest_rows = list(range(i + 1, n))
        for j in free_cols:
            cols = [c for c in free_cols if c != j]
            # the remaining rows must still be able to fill every remaining slot
            if min(len(rest_rows), len(cols)) < slots - len(pairs) - 1:
                continue
            if fixed + w[i][j] + _best_total(w, rest_rows, cols) == best:
                pairs.append((i, j))
                fixed += w[i][j]
                free_cols = cols
                break
        # otherwise row i stays unmatched
    return pairs, best


# reports -----------------------------------------------------------------------------------


class Metric(str, Enum):
    MUTATION_BASED = "mutation_based"
    LLM_ASSESSED = "llm_assessed"


@dataclass(frozen=True)
class GtScore:
    gt_id: str
    score: float


@dataclass(frozen=True)
class MatchedPair:
    gt_id: str
    gen_id: str
    score: float


@codec.register("coverage_report")
@dataclass(frozen=True)
class CoverageReport:
    focal_id: str
    metric: Metric
    scores: tuple[GtScore, ...]
    aggregate: float
    matching: tuple[MatchedPair, ...] = ()
    excluded: tuple[str, ...] = ()  # ground-truth tests left out of the mean (empty kill sets)

    def __post_init__(self) -> None:
        expected = float(sum(Fraction(s.score) for s in self.scores) / len(self.scores)) if self.scores else 0.0
        if abs(expected - self.aggregate) > 1e-12:
            raise InvariantViolation("aggregate is the mean of per-test scores", f"{self.aggregate} != {expected}")
        gts = [p.gt_id for p in self.matching]
        gens = [p.gen_id for p in self.matching]
        if len(set(gens)) != len(gens):
            raise InvariantViolation("each generated test is credited once")
        # a judge may credit several generated tests to one ground-truth test
        if self.metric is Metric.MUTATION_BASED and len(set(gts)) != len(gts):
            raise InvariantViolation("mutation matching is one-to-one")


def _mean(scores: list[Fraction]) -> float:
    return float(sum(scores, Fraction(0)) / len(scores)) if scores else 0.0


def match_mutation(gt_sets: list[MutantKillSet], gen_sets: list[MutantKillSet],
                   focal_id: str = "") -> CoverageReport:
    """Mutation-based coverage; ground-truth tests that kill nothing are excluded and listed."""
    excluded = [g.test_id for g in gt_sets if not g.killed]
    for t in excluded:
        log.warning("%s: ground-truth test %s kills no mutant; excluded from the coverage mean", focal_id, t)
    gts = [g for g in gt_sets if g.killed]
    weights = [[_score(g, h) for h in gen_sets] for g in gts]
    pairs, _ = max_weight_matching(weights)
    per_gt = [Fraction(0)] * len(gts)
    matching = []
    for i, j in pairs:
        per_gt[i] = weights[i][j]
        matching.append(MatchedPair(gts[i].test_id, gen_sets[j].test_id, float(weights[i][j])))
    scores = tuple(GtScore(g.test_id, float(s)) for g, s in zip(gts, per_gt))
    return CoverageReport(focal_id, Metric.MUTATION_BASED, scores, _mean(per_gt), tuple(matching), tuple(excluded))


# judge-assessed coverage ------------------------------------------------------------------

_JUDGE_SYSTEM = (
    "You compare unit tests by the behavior they check. You decide whether a reference test's "
    "scenario is already exercised by some of the candidate tests, alone or together."
)


def judge_request(gt: TestCase, candidates: list[TestCase], lang: str = "") -> CompletionRequest:
    listing = "\n\n".join(f"id: {c.id}\n{fence(c.source, lang)}" for c in candidates)
    user = "\n".join([
        section("Reference test", fence(gt.source, lang)),
        section("Candidate tests", listing),
        section("Task", (
            "Does the scenario of the reference test (its setup, the call it exercises and the outcome it "
            "checks) get covered by one or more candidate tests taken together? Reply with 'MATCH: yes' "
            "and the ids of the candidates that cover it as 'tests: [id, ...]', or with 'MATCH: no'."
        )),
    ])
    return CompletionRequest.of(_JUDGE_SYSTEM, user, temperature=0.0, tag="eval.judge")


def llm_assessed(gt_tests: list[TestCase], gen_tests: list[TestCase], gateway: Gateway,
                 focal_id: str = "", lang: str = "") -> CoverageReport:
    """Ground-truth tests judged in the given order; credited generated tests are removed."""
    remaining = list(gen_tests)
    scores: list[Fraction] = []
    matching: list[MatchedPair] = []
    for gt in gt_tests:
        if not remaining:
            scores.append(Fraction(0))
            continue
        verdict = gateway.complete_structured(judge_request(gt, remaining, lang), "judge_verdict",
                                              available=[t.id for t in remaining])
        if verdict.fulfilled:
            scores.append(Fraction(1))
            matching.extend(MatchedPair(gt.id, t, 1.0) for t in verdict.tests)
            remaining = [t for t in remaining if t.id not in verdict.tests]
        else:
            scores.append(Fraction(0))
    per = tuple(GtScore(t.id, float(s)) for t, s in zip(gt_tests, scores))
    return CoverageReport(focal_id, Metric.LLM_ASSESSED, per, _mean(scores), tuple(matching))


# mutation report ingestion ------------------------------------------------------------------


@dataclass
class KillMatrix:
    universe: frozenset[str] = frozenset()
    kill_sets: dict[str, MutantKillSet] = field(default_factory=dict)
    classes: dict[str, str] = field(default_factory=dict)  # mutant id -> mutated class

    def for_class(self, cls: str) -> KillMatrix:
        keep = frozenset(m for m in self.universe if self.classes.get(m) == cls)
        sets = {t: MutantKillSet(t, k.killed & keep, keep) for t, k in self.kill_sets.items()}
        return KillMatrix(keep, sets, {m: c for m, c in self.classes.items() if m in keep})

    def kill_set(self, test_id: str) -> MutantKillSet:
        """Kill set of a test; tests the report never mentions killed nothing."""
        return self.kill_sets.get(test_id) or MutantKillSet(test_id, frozenset(), self.universe)

    def merge(self, other: KillMatrix) -> KillMatrix:
        universe = self.universe | other.universe
        tests = set(self.kill_sets) | set(other.kill_sets)
        sets = {t: MutantKillSet(t, self.kill_set(t).killed | other.kill_set(t).killed, universe) for t in tests}
        return KillMatrix(universe, sets, {**self.classes, **other.classes})


def _matrix(mutants: list[dict]) -> KillMatrix:
    universe = frozenset(m["id"] for m in mutants)
    killed: dict[str, set[str]] = {}
    for m in mutants:
        if m["status"] == "KILLED":
            for t in m["killing_tests"]:
                killed.setdefault(t, set()).add(m["id"])
    sets = {t: MutantKillSet(t, frozenset(k), universe) for t, k in sorted(killed.items())}
    return KillMatrix(universe, sets, {m["id"]: m["class"] for m in mutants})


def parse_canonical(doc: object) -> list[dict]:
    if not isinstance(doc, dict) or not isinstance(doc.get("mutants"), list):
        raise SchemaError("report", "expected an object with a 'mutants' list")
    seen: set[str] = set()
    out = []
    for n, m in enumerate(doc["mutants"]):
        pos = f"mutants[{n}]"
        if not isinstance(m, dict):
            raise SchemaError(pos, "expected an object")
        for key, typ in (("id", str), ("class", str), ("line", int), ("mutator", str), ("status", str)):
            if not isinstance(m.get(key), typ):
                raise SchemaError(f"{pos}.{key}", f"missing or not a {typ.__name__}")
        if m["status"] not in MUTANT_STATUSES:
            raise SchemaError(f"{pos}.status", f"unknown status {m['status']!r}")
        if m["id"] in seen:
            raise SchemaError(f"{pos}.id", f"duplicate mutant id {m['id']!r}")
        seen.add(m["id"])
        tests = m.get("killing_tests", [])
        if not isinstance(tests, list) or not all(isinstance(t, str) and t for t in tests):
            raise SchemaError(f"{pos}.killing_tests", "expected a list of test ids")
        if m["status"] == "KILLED" and not tests:
            raise SchemaError(f"{pos}.killing_tests", "killed mutant names no killing test")
        out.append({**m, "killing_tests": list(dict.fromkeys(tests))})
    return out


# PIT-style XML: <mutations><mutation status=".."><mutatedClass/>...<killingTest/></mutation></mutations>
_XML_STATUS = {"KILLED": "KILLED", "SURVIVED": "SURVIVED", "NO_COVERAGE": "NO_COVERAGE", "TIMED_OUT": "TIMED_OUT",
               "MEMORY_ERROR": "TIMED_OUT", "RUN_ERROR": "TIMED_OUT"}
_JUNIT4 = re.compile(r"^([\w.$]+)\.(\w+)\(([\w.$]+)\)$")
_JUNIT5 = re.compile(r"\[(?:class|nested-class):([\w.$]+)\].*\[(?:method|test-template):(\w+)\(")


def normalize_test_name(raw: str) -> str:
    """Tool-specific killing-test names reduced to ``pkg.Class.method``."""
    raw = raw.strip()
    m = _JUNIT5.search(raw)
    if m:
        return f"{m.group(1)}.{m.group(2)}"
    m = _JUNIT4.match(raw)
    if m:
        return f"{m.group(1)}.{m.group(2)}"
    return raw


def mutant_id(cls: str, line: int, mutator: str) -> str:
    return f"{cls}:{line}:{mutator.rsplit('.', 1)[-1]}"


def xml_to_canonical(text: str) -> dict:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise SchemaError(f"line {exc.position[0]}", "malformed XML") from exc
    mutants = []
    counts: dict[str, int] = {}
    for n, el in enumerate(root.iter("mutation")):
        pos = f"mutation[{n}]"
        status = el.get("status", "")
        if status == "NON_VIABLE":
            continue
        if status not in _XML_STATUS:
            raise SchemaError(f"{pos}@status", f"unknown status {status!r}")
        cls = (el.findtext("mutatedClass") or "").strip()
        line = (el.findtext("lineNumber") or "").strip()
        mutator = (el.findtext("mutator") or "").strip()
        if not cls or not line.isdigit() or not mutator:
            raise SchemaError(pos, "needs mutatedClass, lineNumber and mutator")
        tests: list[str] = []
        for t in el.findall("killingTest") + el.findall("killingTests"):
            tests.extend(normalize_test_name(x) for x in (t.text or "").split("|") if x.strip())
        base = mutant_id(cls, int(line), mutator)
        counts[base] = counts.get(base, 0) + 1
        mid = base if counts[base] == 1 else f"{base}#{counts[base]}"
        mutants.append({"id": mid, "class": cls, "line": int(line), "mutator": mutator,
                        "status": _XML_STATUS[status], "killing_tests": tests})
    return {"mutants": mutants}


def ingest_mutation_report(path: Path | str, profile: str = "auto") -> KillMatrix:
    """Kill sets per test from a canonical JSON report or a mutation-tool XML report."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if profile == "auto":
        profile = "xml" if text.lstrip().startswith("<") else "canonical"
    if profile == "xml":
        doc = xml_to_canonical(text)
    elif profile == "canonical":
        try:
            doc = json.loads(text) if text.strip() else {"mutants": []}
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {exc.lineno}", exc.msg) from exc
    else:
        raise SchemaError("profile", f"unknown report profile {profile!r}")
    return _matrix(parse_canonical(doc))


def load_reports(directory: Path | str) -> KillMatrix:
    matrix = KillMatrix()
    for p in sorted(Path(directory).iterdir()):
        if p.suffix in (".json", ".xml") and p.is_file():
            matrix = matrix.merge(ingest_mutation_report(p))
    return matrix


def test_keys(tc: TestCase) -> list[str]:
    """Names under which a mutation report may refer to this test."""
    keys = [tc.id]
    if tc.container:
        keys.append(f"{tc.container}.{tc.name}")
    keys.append(tc.name)
    return keys


def kill_set_for(matrix: KillMatrix, tc: TestCase) -> MutantKillSet:
    for key in test_keys(tc)[:-1]:
        if key in matrix.kill_sets:
            return MutantKillSet(tc.id, matrix.kill_sets[key].killed, matrix.universe)
        hits = [t for t in matrix.kill_sets if t.endswith("." + key)]
        if len(hits) == 1:
            return MutantKillSet(tc.id, matrix.kill_sets[hits[0]].killed, matrix.universe)
    return MutantKillSet(tc.id, frozenset(), matrix.universe)
