"""Java profile backed by tree-sitter-java."""

from __future__ import annotations

import re
import textwrap

import tree_sitter_java
from tree_sitter import Language, Node, Parser

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
    strip_generics,
)

_LANG = Language(tree_sitter_java.language())
_TYPE_DECLS = {"class_declaration", "interface_declaration", "enum_declaration", "record_declaration",
               "annotation_type_declaration"}

_FRAME = re.compile(r"^\s*at\s+(?P<owner>(?:[\w$]+\.)*[\w$]+)\.(?P<sym>[\w$<>]+)\((?P<file>[\w$]+\.java):(?P<line>\d+)\)")
_JAVAC = re.compile(r"^(?:\[ERROR\]\s*)?(?P<file>[^\s:\[]+\.java):(?:\[(?P<l1>\d+),\d+\]|(?P<l2>\d+):)")
_SYMBOL_AT = re.compile(r"cannot find symbol:?\s*(?:symbol:\s*)?(?:method|variable|class|constructor)?\s*(\w+)"
                        r"(?:\([^)]*\))?\s+at\s+([\w/.$-]+\.java):(\d+)")
_SYMBOL_LINE = re.compile(r"^\s*symbol:\s*(?:method|variable|class|constructor)\s+(\w+)")
_INLINE_SYMBOL = re.compile(r"cannot find symbol:?\s*(?:method|variable|class|constructor)\s+(\w+)")
_NOT_APPLICABLE = re.compile(r"(?:method|constructor) (\w+) in (?:class|interface) \S+ cannot be applied")


def _parse(data: bytes):
    return Parser(_LANG).parse(data)


def _text(node: Node | None) -> str:
    return node.text.decode("utf-8") if node is not None else ""


def _walk(node: Node):
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def _char_offset(data: bytes, byte_offset: int) -> int:
    return len(data[:byte_offset].decode("utf-8", "replace"))


def _param_types(node: Node) -> str:
    params = node.child_by_field_name("parameters")
    out = []
    for p in params.named_children if params else ():
        if p.type == "formal_parameter":
            out.append(strip_generics(_text(p.child_by_field_name("type"))))
        elif p.type == "spread_parameter":
            ty = next((c for c in p.named_children if c.type not in ("modifiers", "variable_declarator")), None)
            out.append(strip_generics(_text(ty)) + "...")
    return ",".join(out)


def _indent_of(data: bytes, node: Node) -> str:
    line_start = data.rfind(b"\n", 0, node.start_byte) + 1
    prefix = data[line_start:node.start_byte].decode("utf-8", "replace")
    return prefix if not prefix.strip() else ""


def _definition(data: bytes, node: Node) -> str:
    # keep the original indentation of the first line so dedent works uniformly
    return textwrap.dedent(_indent_of(data, node) + _text(node))


def _is_assertion(stmt: Node) -> bool:
    if stmt.type == "assert_statement":
        return True
    if stmt.type != "expression_statement" or not stmt.named_children:
        return False
    expr = stmt.named_children[0]
    while expr is not None and expr.type == "method_invocation":
        name = _text(expr.child_by_field_name("name"))
        if name.startswith(("assert", "verify", "fail")):
            return True
        expr = expr.child_by_field_name("object")
    return False


class JavaProfile(LanguageProfile):
    name = "java"
    extensions = (".java",)
    compile_markers = (
        re.compile(r"\.java:\d+: error:"),
        re.compile(r"\[ERROR\].*\.java:\[\d+,\d+\]"),
        re.compile(r"COMPILATION ERROR"),
        re.compile(r"cannot find symbol"),
    )
    assertion_markers = (
        re.compile(r"AssertionFailedError"),
        re.compile(r"java\.lang\.AssertionError"),
        re.compile(r"ComparisonFailure"),
        re.compile(r"org\.opentest4j\."),
    )
    execution_markers = ()

    # indexing

    def parse_file(self, rel: str, text: str) -> FileFacts:
        data = text.encode("utf-8")
        tree = _parse(data)
        root = tree.root_node
        if root.has_error:
            bad = next((n for n in _walk(root) if n.is_error or n.is_missing), root)
            raise SourceSyntaxError(bad.start_point[0] + 1, "syntax error")
        package = ""
        imports = []
        for child in root.named_children:
            if child.type == "package_declaration":
                package = _text(child.named_children[0]) if child.named_children else ""
            elif child.type == "import_declaration":
                imports.append(_text(child))
        facts = FileFacts(rel, package, tuple(imports))
        seen: set[str] = set()

        def add(decl: Decl) -> None:
            if decl.qualified not in seen:
                seen.add(decl.qualified)
                facts.decls.append(decl)

        def visit_type(node: Node, prefix: str, owner: str | None) -> None:
            name = _text(node.child_by_field_name("name"))
            qual = f"{prefix}.{name}" if prefix else name
            parents: list[str] = []
            sup = node.child_by_field_name("superclass")
            if sup is not None:
                parents += [strip_generics(_text(c)) for c in sup.named_children]
            for field_name in ("interfaces",):
                ifs = node.child_by_field_name(field_name)
                if ifs is not None:
                    parents += [strip_generics(_text(t)) for lst in ifs.named_children for t in lst.named_children]
            for c in node.children:
                if c.type == "extends_interfaces":
                    parents += [strip_generics(_text(t)) for lst in c.named_children for t in lst.named_children]
            add(Decl(qual, SymbolKind.CLASS, _definition(data, node), node.start_point[0] + 1,
                     node.end_point[0] + 1, owner, tuple(parents)))
            body = node.child_by_field_name("body")
            has_ctor = False
            for member in body.named_children if body else ():
                if member.type in _TYPE_DECLS:
                    visit_type(member, qual, qual)
                elif member.type in ("method_declaration", "constructor_declaration"):
                    ctor = member.type == "constructor_declaration"
                    has_ctor |= ctor
                    mname = _text(member.child_by_field_name("name"))
                    params = _param_types(member)
                    add(Decl(f"{qual}.{mname}({params})", SymbolKind.CONSTRUCTOR if ctor else SymbolKind.METHOD,
                             _definition(data, member), member.start_point[0] + 1, member.end_point[0] + 1,
                             qual, (), params))
                elif member.type in ("field_declaration", "constant_declaration"):
                    for d in member.children_by_field_name("declarator"):
                        add(Decl(f"{qual}.{_text(d.child_by_field_name('name'))}", SymbolKind.FIELD,
                                 " ".join(_text(member).split()), member.start_point[0] + 1,
                                 member.end_point[0] + 1, qual))
            if node.type == "class_declaration" and not has_ctor:
                # implicit default constructor
                visibility = "public " if b"public" in data[node.start_byte:body.start_byte] else ""
                add(Decl(f"{qual}.{name}()", SymbolKind.CONSTRUCTOR, f"{visibility}{name}() {{}}",
                         node.start_point[0] + 1, node.start_point[0] + 1, qual))

        for child in root.named_children:
            if child.type in _TYPE_DECLS:
                visit_type(child, package, None)
        facts.identifiers = self._identifiers(root, 0)
        return facts

    def _identifiers(self, root: Node, line_shift: int) -> list[tuple[str, int]]:
        return [(_text(n), n.start_point[0] + 1 - line_shift) for n in _walk(root)
                if n.type in ("identifier", "type_identifier")]

    def identifiers(self, text: str) -> list[tuple[str, int]]:
        root = _parse(text.encode("utf-8")).root_node
        if root.has_error:
            # snippets (a lone method) parse cleanly once wrapped in a class
            wrapped = _parse(b"class _W {\n" + text.encode("utf-8") + b"\n}").root_node
            return [(n, l) for n, l in self._identifiers(wrapped, 1) if n != "_W"]
        return self._identifiers(root, 0)

    def skeleton(self, text: str) -> str:
        data = text.encode("utf-8")
        root = _parse(data).root_node
        out: list[str] = []
        for child in root.named_children:
            if child.type in ("package_declaration", "import_declaration"):
                out.append(_text(child))
        if out:
            out.append("")

        def emit(node: Node, depth: int) -> None:
            pad = "    " * depth
            body = node.child_by_field_name("body")
            header = " ".join(data[node.start_byte:body.start_byte].decode("utf-8").split())
            out.append(f"{pad}{header} {{")
            for member in body.named_children if body else ():
                if member.type in _TYPE_DECLS:
                    emit(member, depth + 1)
                elif member.type in ("field_declaration", "constant_declaration"):
                    out.append(pad + "    " + " ".join(_text(member).split()))
                elif member.type in ("method_declaration", "constructor_declaration"):
                    mbody = member.child_by_field_name("body")
                    end = mbody.start_byte if mbody is not None else member.end_byte
                    sig = " ".join(data[member.start_byte:end].decode("utf-8").split()).rstrip(";")
                    out.append(f"{pad}    {sig};")
            out.append(pad + "}")

        for child in root.named_children:
            if child.type in _TYPE_DECLS:
                emit(child, 0)
        return "\n".join(out) + "\n"

    # tests

    def _methods(self, root: Node, container: str | None):
        for n in _walk(root):
            if n.type in _TYPE_DECLS and (container is None or _text(n.child_by_field_name("name")) == container):
                body = n.child_by_field_name("body")
                for m in body.named_children if body else ():
                    if m.type == "method_declaration":
                        yield n, m

    def locate_test(self, text: str, name: str, container: str | None = None) -> TestLocation:
        data = text.encode("utf-8")
        for cls, m in self._methods(_parse(data).root_node, container):
            if _text(m.child_by_field_name("name")) == name:
                source = _text(m)
                return TestLocation(source, _text(cls.child_by_field_name("name")), self.assertion_sites(source))
        raise LookupError(f"test {name!r} not found")

    def assertion_sites(self, method_source: str) -> tuple[AssertionSite, ...]:
        prefix = b"class _W {\n"
        data = prefix + method_source.encode("utf-8") + b"\n}"
        sites = []
        for n in _walk(_parse(data).root_node):
            if _is_assertion(n):
                start = _char_offset(data, n.start_byte) - len(prefix)
                end = _char_offset(data, n.end_byte) - len(prefix)
                sites.append(AssertionSite(method_source[start:end], start))
        return tuple(sorted(sites, key=lambda s: s.offset))

    def split_test_response(self, code: str) -> tuple[tuple[str, ...], str]:
        imports, rest = [], []
        for line in code.strip("\n").splitlines():
            s = line.strip()
            if s.startswith("import "):
                imports.append(s)
            elif s.startswith("package "):
                continue
            else:
                rest.append(line)
        body = "\n".join(rest)
        has_class = re.search(r"^\s*(?:public\s+|final\s+|abstract\s+)*class\s+\w+", body, re.M)
        wrapped = body if has_class else "class _W {\n" + body + "\n}"
        data = wrapped.encode("utf-8")
        root = _parse(data).root_node
        if root.has_error:
            raise ValueError("reply is not a well-formed Java method")
        methods = [m for _, m in self._methods(root, None)]
        if len(methods) != 1:
            raise ValueError(f"expected exactly one test method, found {len(methods)}")
        return tuple(imports), _definition(data, methods[0])

    def rename_method(self, method_source: str, new_name: str) -> str:
        prefix = b"class _W {\n"
        data = prefix + method_source.encode("utf-8") + b"\n}"
        for _, m in self._methods(_parse(data).root_node, None):
            n = m.child_by_field_name("name")
            s = _char_offset(data, n.start_byte) - len(prefix)
            e = _char_offset(data, n.end_byte) - len(prefix)
            return method_source[:s] + new_name + method_source[e:]
        return method_source

    def method_names(self, text: str, container: str) -> set[str]:
        root = _parse(text.encode("utf-8")).root_node
        return {_text(m.child_by_field_name("name")) for _, m in self._methods(root, container)}

    def insert_method(self, file_text, container, method_source, imports=()):
        data = file_text.encode("utf-8")
        root = _parse(data).root_node
        cls = next((n for n in _walk(root) if n.type in _TYPE_DECLS
                    and _text(n.child_by_field_name("name")) == container), None)
        if cls is None:
            raise LookupError(f"class {container!r} not found")
        body = cls.child_by_field_name("body")
        indent = _indent_of(data, cls) + "    "
        method = textwrap.indent(textwrap.dedent(method_source).strip("\n"), indent)
        close = body.end_byte - 1
        head = data[:close].rstrip(b" \t")
        new = head + b"\n" + method.encode("utf-8") + b"\n" + _indent_of(data, cls).encode() + data[close:]
        existing = {" ".join(_text(c).split()) for c in root.named_children if c.type == "import_declaration"}
        extra = [i.strip() for i in imports if i.strip() and " ".join(i.split()) not in existing]
        if extra:
            anchors = [c for c in root.named_children if c.type in ("import_declaration", "package_declaration")]
            at = anchors[-1].end_byte if anchors else 0
            block = ("\n" if at else "") + "\n".join(dict.fromkeys(extra)) + ("" if at else "\n")
            new = new[:at] + block.encode("utf-8") + new[at:]
        return new.decode("utf-8"), method

    def test_name(self, words: list[str]) -> str:
        body = camel_words(words)
        return body[:1].lower() + body[1:] if body else "generatedTest"

    # runner output

    def parse_frame(self, line: str) -> Frame | None:
        m = _FRAME.match(line)
        if not m:
            return None
        return Frame(m.group("file"), int(m.group("line")), m.group("sym"), m.group("owner"))

    def diagnostic_file(self, line: str) -> tuple[str, int] | None:
        m = _JAVAC.match(line.strip())
        if not m:
            return None
        return m.group("file"), int(m.group("l1") or m.group("l2"))

    def error_elements(self, messages: list[str]) -> list[ErrorElement]:
        text = "\n".join(messages)
        if any(p.search(text) for p in self.assertion_markers) and not any(
            p.search(text) for p in self.compile_markers
        ):
            return []
        found: list[ErrorElement] = []
        last_diag: tuple[str, int] | None = None
        for line in messages:
            if m := _SYMBOL_AT.search(line):
                found.append(ErrorElement(m.group(1), m.group(2), int(m.group(3))))
                continue
            diag = self.diagnostic_file(line)
            if diag:
                last_diag = diag
                for pat in (_INLINE_SYMBOL, _NOT_APPLICABLE):
                    if m := pat.search(line):
                        found.append(ErrorElement(m.group(1), *diag))
                continue
            if (m := _SYMBOL_LINE.match(line)) and last_diag:
                found.append(ErrorElement(m.group(1), *last_diag))
        frames = [f for f in map(self.parse_frame, messages) if f]
        for fr in frames[:3]:
            found.append(ErrorElement(fr.symbol, fr.file, fr.line))
        return list(dict.fromkeys(found))


register(JavaProfile())
