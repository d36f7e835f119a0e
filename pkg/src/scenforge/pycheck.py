"""Static "compile" step for Python test files.

Python has no compiler that rejects a call to a missing method, so this
check stands in for one: syntax errors, undefined names, unresolvable
``from x import y`` and attribute access on project classes that do not
define the attribute are reported as ``file:line:col: error: message`` and
make the process exit with status 1.

Usage: ``python -m scenforge.pycheck [--path DIR ...] FILE_OR_DIR ...``
"""

from __future__ import annotations

import argparse
import ast
import importlib
import inspect
import os
import sys
import textwrap
from pathlib import Path

from pyflakes import messages as flake_messages
from pyflakes.checker import Checker

_FATAL_FLAKES = (flake_messages.UndefinedName, flake_messages.UndefinedLocal,
                 flake_messages.UndefinedExport)


def _instance_attrs(cls: type) -> set[str]:
    names: set[str] = set()
    for klass in inspect.getmro(cls):
        if klass is object:
            continue
        try:
            tree = ast.parse(textwrap.dedent(inspect.getsource(klass)))
        except (OSError, TypeError, SyntaxError):
            continue
        for node in ast.walk(tree):
            if isinstance(node, ast.Attribute) and isinstance(node.ctx, ast.Store):
                names.add(node.attr)
    return names


def _has_attr(cls: type, attr: str) -> bool:
    if hasattr(cls, attr) or hasattr(cls, "__getattr__"):
        return True
    return attr in _instance_attrs(cls)


class _AttrChecker(ast.NodeVisitor):
    """Flags ``obj.attr`` where obj is a project class or a local bound to ``ProjectClass(...)``."""

    def __init__(self, classes: dict[str, type]):
        self.classes = classes
        self.errors: list[tuple[int, int, str]] = []
        self.scopes: list[dict[str, type]] = [{}]

    def _bound(self, name: str) -> type | None:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def visit_FunctionDef(self, node):
        self.scopes.append({})
        self.generic_visit(node)
        self.scopes.pop()

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_Assign(self, node):
        self.visit(node.value)
        cls = None
        if isinstance(node.value, ast.Call) and isinstance(node.value.func, ast.Name):
            cls = self.classes.get(node.value.func.id)
        for t in node.targets:
            if isinstance(t, ast.Name):
                if cls is not None:
                    self.scopes[-1][t.id] = cls
                else:
                    self.scopes[-1].pop(t.id, None)
            else:
                self.visit(t)

    def visit_Attribute(self, node):
        if isinstance(node.value, ast.Name) and isinstance(node.ctx, ast.Load):
            name = node.value.id
            cls = self.classes.get(name)
            instance = False
            if cls is None:
                cls = self._bound(name)
                instance = cls is not None
            if cls is not None and not _has_attr(cls, node.attr):
                what = f"'{cls.__name__}' object" if instance else f"type object '{cls.__name__}'"
                self.errors.append((node.lineno, node.col_offset + 1, f"{what} has no attribute '{node.attr}'"))
        self.generic_visit(node)


def _project_classes(tree: ast.Module, roots: list[Path]) -> tuple[dict[str, type], list[tuple[int, int, str]]]:
    classes: dict[str, type] = {}
    errors: list[tuple[int, int, str]] = []
    for node in tree.body:
        if not isinstance(node, ast.ImportFrom) or node.level or not node.module:
            continue
        try:
            mod = importlib.import_module(node.module)
        except ImportError as exc:
            errors.append((node.lineno, node.col_offset + 1, f"cannot import module '{node.module}': {exc}"))
            continue
        in_project = any(Path(getattr(mod, "__file__", "") or "/").resolve().is_relative_to(r) for r in roots)
        for alias in node.names:
            if alias.name == "*":
                continue
            if not hasattr(mod, alias.name):
                try:
                    importlib.import_module(f"{node.module}.{alias.name}")
                    continue
                except ImportError:
                    errors.append((node.lineno, node.col_offset + 1,
                                   f"cannot import name '{alias.name}' from '{node.module}'"))
                    continue
            value = getattr(mod, alias.name)
            if in_project and inspect.isclass(value):
                classes[alias.asname or alias.name] = value
    return classes, errors


def check_source(text: str, filename: str, roots: list[Path]) -> list[str]:
    try:
        tree = ast.parse(text, filename=filename)
    except SyntaxError as exc:
        return [f"{filename}:{exc.lineno or 0}:{exc.offset or 0}: error: SyntaxError: {exc.msg}"]
    found: list[tuple[int, int, str]] = []
    for msg in Checker(tree, filename=filename).messages:
        if isinstance(msg, _FATAL_FLAKES):
            found.append((msg.lineno, msg.col + 1, msg.message % msg.message_args))
    classes, import_errors = _project_classes(tree, roots)
    found += import_errors
    attrs = _AttrChecker(classes)
    attrs.visit(tree)
    found += attrs.errors
    return [f"{filename}:{line}:{col}: error: {msg}" for line, col, msg in sorted(set(found))]


def _targets(paths: list[str]) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        out.extend(sorted(p.rglob("*.py")) if p.is_dir() else [p])
    return out


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m scenforge.pycheck")
    ap.add_argument("--path", action="append", default=[],
                    help="project import roots, os.pathsep separated (repeatable)")
    ap.add_argument("files", nargs="+")
    args = ap.parse_args(argv)
    roots = [Path(p).resolve() for arg in args.path for p in arg.split(os.pathsep) if p]
    sys.path[:0] = [str(r) for r in roots] + [str(Path.cwd())]
    errors: list[str] = []
    for f in _targets(args.files):
        errors += check_source(f.read_text(encoding="utf-8"), f.as_posix(), roots)
    for e in errors:
        print(e)
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
