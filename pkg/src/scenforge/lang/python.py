"""Python profile: stdlib ast/tokenize based indexing, unittest-style tests."""

from __future__ import annotations

import ast
import io
import keyword
import re
import textwrap
import tokenize

from ..model import AssertionSite, SymbolKind
from . import (
    Decl,
    ErrorElement,
    FileFacts,
    Frame,
    LanguageProfile,
    SourceSyntaxError,
    TestLocation,
    camel_words,
    register,
)

_FRAME = re.compile(r'^\s*File "(?P<file>.+?)", line (?P<line>\d+), in (?P<sym>\S+)')
_DIAG = re.compile(r"^(?P<file>[^\s:]+\.py):(?P<line>\d+)(?::\d+)?: (?:error: )?(?P<msg>.*)$")
_UNDEFINED = re.compile(r"undefined name '(\w+)'")
_CANNOT_IMPORT = re.compile(r"cannot import name '(\w+)'")
_NAME_ERROR = re.compile(r"NameError: name '(\w+)' is not defined")
_ATTR_ERROR = re.compile(r"AttributeError: (?:'(\w+)' object|type object '(\w+)'|module '[\w.]+') has no attribute '(\w+)'")
_NO_ATTR = re.compile(r"(?:'(\w+)' object|type object '(\w+)') has no attribute '(\w+)'")
_CALL_ERROR = re.compile(r"TypeError: (?:[\w.]+\.)?(\w+)\(\) (?:takes|missing|got)")


def module_name(rel: str) -> str:
    parts = rel[:-3].split("/") if rel.endswith(".py") else rel.split("/")
    if parts and parts[0] == "src":
        parts = parts[1:]
    if parts and parts[-1] == "__init__":
        parts = parts[:-1]
    return ".".join(parts)


def _lines(text: str, start: int, end: int) -> str:
    return "\n".join(text.splitlines()[start - 1:end])


def _start_line(node: ast.AST) -> int:
    decos = getattr(node, "decorator_list", None) or []
    return min([node.lineno] + [d.lineno for d in decos])


def _base_name(expr: ast.expr) -> str:
    if isinstance(expr, ast.Subscript):
        expr = expr.value
    return ast.unparse(expr)


def _header(text: str, node: ast.AST) -> str:
    lines = text.splitlines()
    first = node.body[0]
    start = _start_line(node)
    if first.lineno == node.lineno:
        head = lines[node.lineno - 1][: first.col_offset].rstrip()
        return "\n".join(lines[start - 1: node.lineno - 1] + [head])
    return "\n".join(lines[start - 1: first.lineno - 1]).rstrip()


def _offset(text: str, line: int, col: int) -> int:
    """Character offset for a 1-based line and a utf-8 byte column."""
    lines = text.splitlines(keepends=True)
    before = sum(len(l) for l in lines[: line - 1])
    return before + len(lines[line - 1].encode("utf-8")[:col].decode("utf-8", "replace"))


class PythonProfile(LanguageProfile):
    name = "python"
    extensions = (".py",)
    compile_markers = (
        re.compile(r"^\S+\.py:\d+(?::\d+)?: error:", re.M),
        re.compile(r"^(?:SyntaxError|IndentationError|TabError)\b", re.M),
    )
    assertion_markers = (
        re.compile(r"^FAIL: ", re.M),
        re.compile(r"^(?:E\s+)?AssertionError\b", re.M),
    )
    execution_markers = (re.compile(r"^ERROR: ", re.M),)

    # indexing

    def parse_file(self, rel: str, text: str) -> FileFacts:
        try:
            tree = ast.parse(text, filename=rel)
        except SyntaxError as exc:
            raise SourceSyntaxError(exc.lineno or 0, exc.msg) from exc
        mod = module_name(rel)
        imports = tuple(ast.get_source_segment(text, n) or "" for n in tree.body
                        if isinstance(n, (ast.Import, ast.ImportFrom)))
        facts = FileFacts(rel, mod, imports)
        seen: set[str] = set()

        def add(decl: Decl) -> None:
            if decl.qualified not in seen:
                seen.add(decl.qualified)
                facts.decls.append(decl)

        def assigns(body, prefix: str, owner: str | None) -> None:
            for node in body:
                targets = []
                if isinstance(node, ast.Assign):
                    targets = [t for t in node.targets if isinstance(t, ast.Name)]
                elif isinstance(node, ast.AnnAssign) and isinstance(node.target, ast.Name):
                    targets = [node.target]
                for t in targets:
                    add(Decl(f"{prefix}.{t.id}" if prefix else t.id, SymbolKind.FIELD,
                             _lines(text, node.lineno, node.end_lineno).strip(),
                             node.lineno, node.end_lineno, owner))

        def visit_class(node: ast.ClassDef, prefix: str, owner: str | None) -> None:
            qual = f"{prefix}.{node.name}" if prefix else node.name
            start = _start_line(node)
            add(Decl(qual, SymbolKind.CLASS, textwrap.dedent(_lines(text, start, node.end_lineno)),
                     start, node.end_lineno, owner, tuple(_base_name(b) for b in node.bases)))
            assigns(node.body, qual, qual)
            for item in node.body:
                if isinstance(item, ast.ClassDef):
                    visit_class(item, qual, qual)
                elif isinstance(item, (ast.FunctionDef, ast.AsyncFunctionDef)):
                    kind = SymbolKind.CONSTRUCTOR if item.name == "__init__" else SymbolKind.METHOD
                    s = _start_line(item)
                    add(Decl(f"{qual}.{item.name}", kind, textwrap.dedent(_lines(text, s, item.end_lineno)),
                             s, item.end_lineno, qual))
            for item in node.body:
                if not isinstance(item, (ast.FunctionDef, ast.AsyncFunctionDef)) or not item.args.args:
                    continue
                self_name = item.args.args[0].arg
                for sub in ast.walk(item):
                    if isinstance(sub, (ast.Assign, ast.AnnAssign)):
                        tgts = sub.targets if isinstance(sub, ast.Assign) else [sub.target]
                        for t in tgts:
                            if (isinstance(t, ast.Attribute) and isinstance(t.value, ast.Name)
                                    and t.value.id == self_name):
                                add(Decl(f"{qual}.{t.attr}", SymbolKind.FIELD,
                                         _lines(text, sub.lineno, sub.end_lineno).strip(),
                                         sub.lineno, sub.end_lineno, qual))

        assigns(tree.body, mod, None)
        for node in tree.body:
            if isinstance(node, ast.ClassDef):
                visit_class(node, mod, None)
            elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                s = _start_line(node)
                add(Decl(f"{mod}.{node.name}" if mod else node.name, SymbolKind.METHOD,
                         textwrap.dedent(_lines(text, s, node.end_lineno)), s, node.end_lineno))
        facts.identifiers = self.identifiers(text)
        return facts

    def identifiers(self, text: str) -> list[tuple[str, int]]:
        out = []
        try:
            for tok in tokenize.generate_tokens(io.StringIO(textwrap.dedent(text)).readline):
                if tok.type == tokenize.NAME and not keyword.iskeyword(tok.string):
                    out.append((tok.string, tok.start[0]))
        except (tokenize.TokenError, IndentationError, SyntaxError):
            pass
        return out

    def skeleton(self, text: str) -> str:
        tree = ast.parse(text)
        out: list[str] = []
        for n in tree.body:
            if isinstance(n, (ast.Import, ast.ImportFrom)):
                out.append(ast.get_source_segment(text, n))
        if out:
            out.append("")

        def emit(node, depth: int) -> None:
            pad = "    " * depth
            if isinstance(node, ast.ClassDef):
                out.append(textwrap.indent(textwrap.dedent(_header(text, node)), pad))
                for item in node.body:
                    if isinstance(item, (ast.Assign, ast.AnnAssign)):
                        out.append(pad + "    " + _lines(text, item.lineno, item.end_lineno).strip())
                for item in node.body:
                    if isinstance(item, (ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
                        emit(item, depth + 1)
            else:
                head = textwrap.indent(textwrap.dedent(_header(text, node)), pad)
                out.append(head + " ...")

        for n in tree.body:
            if isinstance(n, (ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
                emit(n, 0)
        return "\n".join(out) + "\n"

    # tests

    def _find_def(self, tree: ast.Module, name: str, container: str | None):
        for node in ast.walk(tree):
            if isinstance(node, ast.ClassDef) and (container is None or node.name == container):
                for item in node.body:
                    if isinstance(item, (ast.FunctionDef, ast.AsyncFunctionDef)) and item.name == name:
                        return item, node.name
        if container is None:
            for item in tree.body:
                if isinstance(item, (ast.FunctionDef, ast.AsyncFunctionDef)) and item.name == name:
                    return item, ""
        return None, None

    def locate_test(self, text: str, name: str, container: str | None = None) -> TestLocation:
        tree = ast.parse(text)
        node, owner = self._find_def(tree, name, container)
        if node is None:
            raise LookupError(f"test {name!r} not found")
        source = _lines(text, _start_line(node), node.end_lineno)
        return TestLocation(source, owner, self.assertion_sites(source))

    def assertion_sites(self, method_source: str) -> tuple[AssertionSite, ...]:
        indented = method_source[:1].isspace()
        wrapped = "class _W:\n" + method_source if indented else method_source
        shift = 1 if indented else 0
        try:
            tree = ast.parse(wrapped)
        except SyntaxError:
            return ()
        sites = []
        for node in ast.walk(tree):
            is_assert = isinstance(node, ast.Assert)
            if isinstance(node, ast.Expr) and isinstance(node.value, ast.Call):
                fn = node.value.func
                name = fn.attr if isinstance(fn, ast.Attribute) else getattr(fn, "id", "")
                is_assert = name.startswith("assert") or name.startswith("fail")
            if is_assert:
                start = _offset(method_source, node.lineno - shift, node.col_offset)
                end = _offset(method_source, node.end_lineno - shift, node.end_col_offset)
                sites.append(AssertionSite(method_source[start:end], start))
        return tuple(sorted(sites, key=lambda s: s.offset))

    def split_test_response(self, code: str) -> tuple[tuple[str, ...], str]:
        code = textwrap.dedent(code).strip("\n")
        try:
            tree = ast.parse(code)
        except SyntaxError as exc:
            raise ValueError(f"reply is not valid Python (line {exc.lineno}: {exc.msg})") from exc
        imports = tuple(ast.get_source_segment(code, n) for n in tree.body
                        if isinstance(n, (ast.Import, ast.ImportFrom)))
        funcs = [n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
        for cls in (n for n in tree.body if isinstance(n, ast.ClassDef)):
            funcs += [n for n in cls.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
        if len(funcs) != 1:
            raise ValueError(f"expected exactly one test method, found {len(funcs)}")
        fn = funcs[0]
        return imports, textwrap.dedent(_lines(code, _start_line(fn), fn.end_lineno))

    def rename_method(self, method_source: str, new_name: str) -> str:
        return re.sub(r"(\bdef\s+)\w+", lambda m: m.group(1) + new_name, method_source, count=1)

    def method_names(self, text: str, container: str) -> set[str]:
        tree = ast.parse(text)
        for node in ast.walk(tree):
            if isinstance(node, ast.ClassDef) and node.name == container:
                return {n.name for n in node.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))}
        return set()

    def insert_method(self, file_text, container, method_source, imports=()):
        tree = ast.parse(file_text)
        cls = next((n for n in ast.walk(tree) if isinstance(n, ast.ClassDef) and n.name == container), None)
        if cls is None:
            raise LookupError(f"class {container!r} not found")
        indent = " " * (cls.body[0].col_offset if cls.body else cls.col_offset + 4)
        method = textwrap.indent(textwrap.dedent(method_source).strip("\n"), indent)
        lines = file_text.splitlines()
        lines[cls.end_lineno:cls.end_lineno] = ["", method]
        existing = {ast.get_source_segment(file_text, n).strip() for n in tree.body
                    if isinstance(n, (ast.Import, ast.ImportFrom))}
        new_imports = [i.strip() for i in imports if i.strip() and i.strip() not in existing]
        if new_imports:
            import_nodes = [n for n in tree.body if isinstance(n, (ast.Import, ast.ImportFrom))]
            at = import_nodes[-1].end_lineno if import_nodes else 0
            lines[at:at] = list(dict.fromkeys(new_imports))
        return "\n".join(lines) + "\n", method

    def test_name(self, words: list[str]) -> str:
        body = camel_words(words)
        return "test_" + (body[:1].lower() + body[1:] if body else "generated")

    # runner output

    def parse_frame(self, line: str) -> Frame | None:
        m = _FRAME.match(line)
        if not m:
            return None
        return Frame(m.group("file"), int(m.group("line")), m.group("sym"))

    def diagnostic_file(self, line: str) -> tuple[str, int] | None:
        m = _DIAG.match(line.strip())
        return (m.group("file"), int(m.group("line"))) if m else None

    def error_elements(self, messages: list[str]) -> list[ErrorElement]:
        text = "\n".join(messages)
        if any(p.search(text) for p in self.assertion_markers) and not any(
            p.search(text) for p in self.compile_markers + self.execution_markers
        ):
            return []
        found: list[ErrorElement] = []
        frames: list[Frame] = []
        for line in messages:
            diag = self.diagnostic_file(line)
            if diag:
                for pat in (_UNDEFINED, _CANNOT_IMPORT):
                    m = pat.search(line)
                    if m:
                        found.append(ErrorElement(m.group(1), diag[0], diag[1]))
                if m := _NO_ATTR.search(line):
                    found.append(ErrorElement(m.group(3), diag[0], diag[1]))
                    found.append(ErrorElement(m.group(1) or m.group(2), diag[0], diag[1]))
                continue
            fr = self.parse_frame(line)
            if fr:
                frames.append(fr)
        where = frames[-1] if frames else Frame("", 0, "")
        for line in messages:
            if m := _NAME_ERROR.search(line):
                found.append(ErrorElement(m.group(1), where.file, where.line))
            elif m := _ATTR_ERROR.search(line):
                owner = m.group(1) or m.group(2)
                found.append(ErrorElement(m.group(3), where.file, where.line))
                if owner:
                    found.append(ErrorElement(owner, where.file, where.line))
            elif m := _CALL_ERROR.search(line):
                found.append(ErrorElement(m.group(1), where.file, where.line))
        # innermost frames first
        for fr in reversed(frames[-3:]):
            found.append(ErrorElement(fr.symbol, fr.file, fr.line))
        return list(dict.fromkeys(found))


register(PythonProfile())
