"""Offline symbol index over a project tree and the retrieval API built on it."""

from __future__ import annotations

import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .codec import dumps, from_plain, to_plain
from .errors import EmptyProject, InputError, NotFound, SchemaError
from .lang import LanguageProfile, SourceSyntaxError, all_profiles, profile_for
from .model import FocalMethod, KnowledgeItem, SymbolKind, TestCase, Usage, simple_name

log = logging.getLogger(__name__)

SKIP_DIRS = {".git", ".hg", ".svn", "__pycache__", "node_modules", "target", "build", "out",
             ".venv", "venv", ".tox", ".mypy_cache", ".pytest_cache"}
INDEX_FORMAT = 1
FAMILY = "family"


@dataclass(frozen=True)
class Hierarchy:
    parents: tuple[str, ...] = ()
    # method qualified name -> overridden ancestor methods
    overrides: dict[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class IndexWarning:
    file: str
    line: int
    reason: str


@dataclass(frozen=True)
class Neighborhood:
    symbols: frozenset[str]
    referenced: tuple[str, ...]  # identifiers that resolved
    unresolved: int  # identifiers with no matching symbol

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.symbols

    def __len__(self) -> int:
        return len(self.symbols)


def _strip_params(qualified: str) -> str:
    return qualified.split("(", 1)[0]


class SymbolIndex:
    """Read-only view of one project's declarations, usages and type hierarchy."""

    def __init__(self, project: str, language: str, symbols: dict[str, KnowledgeItem],
                 owners: dict[str, str], hierarchy: dict[str, Hierarchy],
                 warnings: list[IndexWarning], files: list[str], root: Path | None = None):
        self.project = project
        self.root = root
        self.language = language
        self.symbols = dict(sorted(symbols.items()))
        self.owners = owners
        self.hierarchy = hierarchy
        self.warnings = warnings
        self.files = sorted(files)
        by_file: dict[str, list[str]] = defaultdict(list)
        by_simple: dict[str, list[str]] = defaultdict(list)
        children: dict[str, list[str]] = defaultdict(list)
        for q, item in self.symbols.items():
            by_file[item.file].append(q)
            by_simple[item.simple_name].append(q)
            if item.kind is SymbolKind.CONSTRUCTOR and q in owners:
                # constructors are referenced by their class name
                alias = simple_name(owners[q])
                if alias != item.simple_name:
                    by_simple[alias].append(q)
        for cls, h in hierarchy.items():
            for p in h.parents:
                children[p].append(cls)
        self.by_file = {k: tuple(v) for k, v in sorted(by_file.items())}
        self._by_simple = {k: tuple(sorted(v)) for k, v in by_simple.items()}
        self._children = {k: tuple(sorted(v)) for k, v in children.items()}
        self._members: dict[str, list[str]] = defaultdict(list)
        for q, o in sorted(owners.items()):
            self._members[o].append(q)

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.symbols

    @property
    def profile(self) -> LanguageProfile:
        from .lang import get_profile

        return get_profile(self.language)

    def get(self, qualified: str) -> KnowledgeItem:
        return self.symbols[qualified]

    def members(self, cls: str) -> tuple[str, ...]:
        return tuple(self._members.get(cls, ()))

    def owner(self, qualified: str) -> str | None:
        return self.owners.get(qualified)

    def by_simple_name(self, name: str) -> tuple[str, ...]:
        return self._by_simple.get(name, ())

    def subtypes(self, cls: str) -> tuple[str, ...]:
        """All project types below ``cls`` (transitive), sorted."""
        out: set[str] = set()
        todo = [cls]
        while todo:
            for c in self._children.get(todo.pop(), ()):
                if c not in out:
                    out.add(c)
                    todo.append(c)
        return tuple(sorted(out))

    def ancestors(self, cls: str) -> tuple[str, ...]:
        out: list[str] = []
        todo = [cls]
        while todo:
            h = self.hierarchy.get(todo.pop(0))
            for p in h.parents if h else ():
                if p not in out and p != cls:
                    out.append(p)
                    todo.append(p)
        return tuple(out)

    def family(self, cls: str) -> tuple[str, ...]:
        """The type, its ancestors and every project subtype of those roots."""
        members = {cls, *self.ancestors(cls)}
        for t in list(members):
            members.update(self.subtypes(t))
        return tuple(sorted(members))

    def resolve_file(self, path: str) -> str | None:
        """Map a path as printed by tools (absolute, relative or bare name) to an indexed file."""
        p = path.replace("\\", "/")
        if p in self.by_file or p in self.files:
            return p
        hits = [f for f in self.files if p.endswith("/" + f) or f.endswith("/" + p) or f == p]
        return min(hits, key=len) if hits else None

    # retrieval

    def query(self, symbol: str, kind: str | SymbolKind | None = None,
              scope: frozenset[str] | set[str] | Neighborhood | None = None,
              required: bool = False) -> list[KnowledgeItem]:
        """Exact matches first, then suffix matches on qualified names."""
        name = symbol.strip()
        kind = kind.value if isinstance(kind, SymbolKind) else (kind.lower() if kind else None)
        has_params = "(" in name
        exact, suffix = [], []
        for q in self.symbols:
            bare = q if has_params else _strip_params(q)
            if bare == name:
                exact.append(q)
            elif bare.endswith("." + name):
                suffix.append(q)
        hits = exact + suffix
        if kind == FAMILY:
            types = [q for q in hits if self.symbols[q].kind is SymbolKind.CLASS]
            hits = list(dict.fromkeys(t for q in types for t in [q, *self.family(q)]))
        elif kind is not None:
            hits = [q for q in hits if self.symbols[q].kind.value == kind]
        if scope is not None:
            allowed = scope.symbols if isinstance(scope, Neighborhood) else scope
            hits = [q for q in hits if q in allowed]
        if required and not hits:
            raise NotFound(f"no symbol matches {symbol!r}" + (f" (kind {kind})" if kind else ""))
        return [self.symbols[q] for q in hits]

    def enclosing(self, file: str, line: int) -> list[str]:
        """Declarations in ``file`` whose line range contains ``line``, innermost first."""
        rel = self.resolve_file(file)
        if rel is None:
            return []
        hits = [q for q in self.by_file.get(rel, ())
                if self.symbols[q].line <= line <= self.symbols[q].end_line]
        return sorted(hits, key=lambda q: (self.symbols[q].end_line - self.symbols[q].line, q))

    def lookup_element(self, name: str, file: str = "", line: int = 0) -> list[KnowledgeItem]:
        """Definitions for an element reported at (file, line).

        The position wins when it falls inside a declaration with that name;
        otherwise candidates by name are ranked by proximity to the file.
        """
        if file and line:
            for q in self.enclosing(file, line):
                if self.symbols[q].simple_name == name or simple_name(self.owners.get(q, "")) == name:
                    return [self.symbols[q]]
        cands = list(self.by_simple_name(name))
        if not cands:
            return []
        rel = self.resolve_file(file) if file else None
        referenced: set[str] = set()
        if rel:
            referenced = {n for n, _ in self._file_identifiers(rel)}

        def rank(q: str):
            item = self.symbols[q]
            owner = self.owners.get(q, "")
            home = simple_name(owner) if owner else item.simple_name
            return (item.file != rel, home not in referenced, item.kind is SymbolKind.CONSTRUCTOR, q)

        return [self.symbols[q] for q in sorted(cands, key=rank)]

    def _file_identifiers(self, rel: str) -> list[tuple[str, int]]:
        if self.root is None:
            return []
        try:
            return self.profile.identifiers((Path(self.root) / rel).read_text(encoding="utf-8"))
        except OSError:
            return []

    def neighborhood(self, fm: FocalMethod, tc: TestCase | None) -> Neighborhood:
        """Symbols directly referenced by fm or tc plus fm's own class, closed one hop up the hierarchy."""
        idents: list[str] = []
        for src in (fm.source, tc.source if tc is not None else ""):
            idents.extend(n for n, _ in self.profile.identifiers(src))
        names = list(dict.fromkeys(idents))
        direct: set[str] = set()
        resolved, unresolved = [], 0
        for n in names:
            qs = self.by_simple_name(n)
            if qs:
                resolved.append(n)
                direct.update(qs)
            else:
                unresolved += 1
        focal_q = self.resolve_method(fm.qualified_name)
        if focal_q:
            direct.add(focal_q)
            cls = self.owners.get(focal_q)
            if cls:
                direct.add(cls)
                direct.update(self.members(cls))
        closed = set(direct)
        for q in direct:
            item = self.symbols[q]
            if item.kind is SymbolKind.CLASS:
                h = self.hierarchy.get(q)
                closed.update(h.parents if h else ())
            else:
                owner = self.owners.get(q)
                h = self.hierarchy.get(owner) if owner else None
                if h:
                    closed.update(h.overrides.get(q, ()))
        return Neighborhood(frozenset(closed), tuple(resolved), unresolved)

    def resolve_method(self, qualified: str) -> str | None:
        if qualified in self.symbols:
            return qualified
        hits = [k for k in self.symbols if _strip_params(k) == _strip_params(qualified)
                and self.symbols[k].kind in (SymbolKind.METHOD, SymbolKind.CONSTRUCTOR)]
        return hits[0] if len(hits) == 1 else None

    # persistence

    def to_document(self) -> dict:
        return {
            "format": INDEX_FORMAT,
            "project": self.project,
            "language": self.language,
            "files": self.files,
            "symbols": [to_plain(v) for v in self.symbols.values()],
            "owners": dict(sorted(self.owners.items())),
            "hierarchy": {k: {"parents": list(h.parents),
                              "overrides": {m: list(o) for m, o in sorted(h.overrides.items())}}
                          for k, h in sorted(self.hierarchy.items())},
            "warnings": [to_plain(w) for w in self.warnings],
        }

    @classmethod
    def from_document(cls, doc: dict) -> SymbolIndex:
        if not isinstance(doc, dict) or doc.get("format") != INDEX_FORMAT:
            raise SchemaError("index", "unsupported index document")
        try:
            symbols = {d["symbol"]: from_plain(KnowledgeItem, d) for d in doc["symbols"]}
            hierarchy = {k: Hierarchy(tuple(v["parents"]), {m: tuple(o) for m, o in v["overrides"].items()})
                         for k, v in doc["hierarchy"].items()}
            warnings = [IndexWarning(**w) for w in doc["warnings"]]
            return cls(doc["project"], doc["language"], symbols, dict(doc["owners"]),
                       hierarchy, warnings, list(doc["files"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError("index", f"malformed index document: {exc}") from exc

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(self.to_document()), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path, root: Path | None = None) -> SymbolIndex:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read index {path}: {exc}") from exc
        idx = cls.from_document(doc)
        idx.root = root
        return idx


def _source_files(root: Path, source_dirs: list[str] | None, language: str | None):
    bases = [root / d for d in source_dirs] if source_dirs else [root]
    for base in bases:
        if base.is_file():
            yield base
            continue
        for dirpath, dirnames, filenames in os.walk(base):
            dirnames[:] = sorted(d for d in dirnames if d not in SKIP_DIRS and not d.startswith("."))
            for fn in sorted(filenames):
                prof = profile_for(fn)
                if prof is not None and (language is None or prof.name == language):
                    yield Path(dirpath) / fn


def _resolve_parent(written: str, namespace: str, imports: tuple[str, ...],
                    classes_by_simple: dict[str, list[str]], classes: set[str]) -> str | None:
    if written in classes:
        return written
    if namespace and f"{namespace}.{written}" in classes:
        return f"{namespace}.{written}"
    cands = classes_by_simple.get(written.rsplit(".", 1)[-1], [])
    if len(cands) <= 1:
        return cands[0] if cands else None
    for imp in imports:
        for c in cands:
            if c in imp or c.rsplit(".", 1)[0] in imp:
                return c
    same = [c for c in cands if c.startswith(namespace + ".")]
    return (same or cands)[0]


def build_index(root: Path | str, project: str | None = None, source_dirs: list[str] | None = None,
                language: str | None = None) -> SymbolIndex:
    """Parse every supported source file under ``root`` into a SymbolIndex.

    Files that fail to parse are skipped and reported in ``warnings``.
    """
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"project root {root} is not a directory")
    files = list(_source_files(root, source_dirs, language))
    if not files:
        raise EmptyProject(f"no supported source files under {root}")
    counts: dict[str, int] = defaultdict(int)
    for f in files:
        counts[profile_for(f.name).name] += 1
    lang = language or max(sorted(counts), key=lambda k: counts[k])
    files = [f for f in files if profile_for(f.name).name == lang]
    prof = next(p for p in all_profiles() if p.name == lang)

    facts, warnings, rels = [], [], []
    for f in files:
        rel = f.relative_to(root).as_posix()
        rels.append(rel)
        try:
            facts.append(prof.parse_file(rel, f.read_text(encoding="utf-8")))
        except SourceSyntaxError as exc:
            warnings.append(IndexWarning(rel, exc.line, str(exc)))
            log.warning("skipping %s: %s", rel, exc)
        except UnicodeDecodeError as exc:
            warnings.append(IndexWarning(rel, 0, f"not utf-8: {exc.reason}"))

    decls = {}
    decl_file = {}
    for ff in facts:
        for d in ff.decls:
            if d.qualified not in decls:
                decls[d.qualified] = d
                decl_file[d.qualified] = ff
    classes = {q for q, d in decls.items() if d.kind is SymbolKind.CLASS}
    classes_by_simple: dict[str, list[str]] = defaultdict(list)
    for q in sorted(classes):
        classes_by_simple[simple_name(q)].append(q)

    # usages: identifier occurrences outside the declaration's own line
    wanted = {d.name for d in decls.values()} | {simple_name(d.owner) for d in decls.values()
                                                 if d.kind is SymbolKind.CONSTRUCTOR and d.owner}
    occurrences: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for ff in facts:
        for name, line in ff.identifiers:
            if name in wanted:
                occurrences[name].append((ff.path, line))
    symbols: dict[str, KnowledgeItem] = {}
    owners: dict[str, str] = {}
    for q, d in decls.items():
        ff = decl_file[q]
        name = simple_name(d.owner) if d.kind is SymbolKind.CONSTRUCTOR and d.owner else d.name
        uses = sorted({Usage(f, l) for f, l in occurrences.get(name, ())
                       if not (f == ff.path and l == d.line)}, key=lambda u: (u.file, u.line))
        symbols[q] = KnowledgeItem(q, d.kind, d.definition, tuple(uses), file=ff.path,
                                   line=d.line, end_line=d.end_line)
        if d.owner:
            owners[q] = d.owner

    parents: dict[str, tuple[str, ...]] = {}
    for q in sorted(classes):
        d, ff = decls[q], decl_file[q]
        resolved = [_resolve_parent(p, ff.namespace, ff.imports, classes_by_simple, classes) for p in d.parents]
        parents[q] = tuple(dict.fromkeys(r for r in resolved if r and r != q))

    def ancestors(cls: str) -> list[str]:
        out, todo = [], list(parents.get(cls, ()))
        while todo:
            p = todo.pop(0)
            if p not in out and p != cls:
                out.append(p)
                todo.extend(parents.get(p, ()))
        return out

    members: dict[str, list[str]] = defaultdict(list)
    for q, o in owners.items():
        if decls[q].kind is SymbolKind.METHOD:
            members[o].append(q)
    hierarchy: dict[str, Hierarchy] = {}
    for cls in sorted(classes):
        overrides: dict[str, tuple[str, ...]] = {}
        anc = ancestors(cls)
        for m in members.get(cls, ()):
            key = (decls[m].name, decls[m].params)
            for a in anc:
                hit = [pm for pm in members.get(a, ()) if (decls[pm].name, decls[pm].params) == key]
                if hit:
                    overrides[m] = tuple(sorted(hit))
                    break
        hierarchy[cls] = Hierarchy(parents[cls], dict(sorted(overrides.items())))

    return SymbolIndex(project or root.name, lang, symbols, owners, hierarchy, warnings, rels, root)


# selecting focal methods and tests


def extract_focal(index: SymbolIndex, root: Path, selector: str, commit: str = "") -> FocalMethod:
    """Build a FocalMethod from a qualified or suffix method selector."""
    hits = [k for k in index.query(selector) if k.kind in (SymbolKind.METHOD, SymbolKind.CONSTRUCTOR)]
    if not hits:
        raise InputError(f"no method matches {selector!r}")
    if len(hits) > 1:
        exact = [h for h in hits if _strip_params(h.symbol) == selector or h.symbol == selector]
        if len(exact) != 1:
            raise InputError(f"ambiguous method selector {selector!r}: {[h.symbol for h in hits]}")
        hits = exact
    item = hits[0]
    text = (Path(root) / item.file).read_text(encoding="utf-8")
    return FocalMethod(
        id=f"{index.project}:{item.symbol}",
        source=item.definition,
        file_skeleton=index.profile.skeleton(text),
        project=index.project,
        commit=commit,
        file=item.file,
    )


def parse_test_selector(selector: str) -> tuple[str, str | None, str]:
    """``path::Container::name`` or ``path::name`` -> (path, container, name)."""
    parts = selector.split("::")
    if len(parts) == 3:
        return parts[0], parts[1], parts[2]
    if len(parts) == 2:
        return parts[0], None, parts[1]
    raise InputError(f"test selector must look like path::Class::method, got {selector!r}")


def extract_test(profile: LanguageProfile, root: Path, selector: str, focal_id: str) -> TestCase:
    path, container, name = parse_test_selector(selector)
    file = Path(root) / path
    try:
        text = file.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read test file {path}: {exc}") from exc
    try:
        loc = profile.locate_test(text, name, container)
    except LookupError as exc:
        raise InputError(str(exc)) from exc
    imports = profile.parse_file(path, text).imports
    return TestCase(
        id=f"{path}::{loc.container}::{name}" if loc.container else f"{path}::{name}",
        name=name,
        source=loc.source,
        focal_id=focal_id,
        assertions=loc.assertions,
        file=path,
        container=loc.container,
        imports=imports,
    )
