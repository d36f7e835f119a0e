"""Language profiles: everything the pipeline needs to know about one source language."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import PurePosixPath

from ..model import AssertionSite, SymbolKind


class SourceSyntaxError(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


@dataclass
class Decl:
    qualified: str
    kind: SymbolKind
    definition: str
    line: int
    end_line: int
    owner: str | None = None  # qualified name of the enclosing type
    parents: tuple[str, ...] = ()  # declared supertypes, as written
    params: str = ""  # normalized parameter types, methods only

    @property
    def name(self) -> str:
        return self.qualified.split("(", 1)[0].rsplit(".", 1)[-1]


@dataclass
class FileFacts:
    path: str
    namespace: str  # java package / python module
    imports: tuple[str, ...]
    decls: list[Decl] = field(default_factory=list)
    identifiers: list[tuple[str, int]] = field(default_factory=list)


@dataclass(frozen=True)
class TestLocation:
    """A test method located inside a test file."""

    source: str  # exact method text as it appears in the file
    container: str
    assertions: tuple[AssertionSite, ...]


@dataclass(frozen=True)
class Frame:
    file: str
    line: int
    symbol: str  # method / function name
    owner: str = ""  # declaring class when known


@dataclass(frozen=True)
class ErrorElement:
    name: str
    file: str
    line: int


class LanguageProfile:
    name = ""
    extensions: tuple[str, ...] = ()
    # regexes over runner output
    compile_markers: tuple[re.Pattern, ...] = ()
    assertion_markers: tuple[re.Pattern, ...] = ()
    headline: re.Pattern = re.compile(r"^\S+(?:Error|Exception|Failure)\b.*")

    def handles(self, path: str) -> bool:
        return PurePosixPath(path).suffix in self.extensions

    # indexing
    def parse_file(self, rel: str, text: str) -> FileFacts:
        raise NotImplementedError

    def skeleton(self, text: str) -> str:
        raise NotImplementedError

    def identifiers(self, text: str) -> list[tuple[str, int]]:
        """(name, line) for identifier tokens in a file or snippet."""
        raise NotImplementedError

    # tests
    def locate_test(self, text: str, name: str, container: str | None = None) -> TestLocation:
        raise NotImplementedError

    def assertion_sites(self, method_source: str) -> tuple[AssertionSite, ...]:
        raise NotImplementedError

    def split_test_response(self, code: str) -> tuple[tuple[str, ...], str]:
        """Split a model reply into (import lines, single method source)."""
        raise NotImplementedError

    def rename_method(self, method_source: str, new_name: str) -> str:
        raise NotImplementedError

    def method_names(self, text: str, container: str) -> set[str]:
        raise NotImplementedError

    def insert_method(self, file_text: str, container: str, method_source: str,
                      imports: tuple[str, ...] = ()) -> tuple[str, str]:
        """Insert a method into ``container``; returns (new file text, method text as inserted)."""
        raise NotImplementedError

    def test_name(self, words: list[str]) -> str:
        raise NotImplementedError

    # runner output
    def parse_frame(self, line: str) -> Frame | None:
        raise NotImplementedError

    def diagnostic_file(self, line: str) -> tuple[str, int] | None:
        """(file, line) for a compiler diagnostic line, else None."""
        raise NotImplementedError

    def error_elements(self, messages: list[str]) -> list[ErrorElement]:
        raise NotImplementedError


def camel_words(words: list[str]) -> str:
    parts = []
    for w in words:
        for tok in re.split(r"[^A-Za-z0-9]+", w):
            if tok:
                parts.append(tok[0].upper() + tok[1:])
    return "".join(parts)


def strip_generics(type_text: str) -> str:
    prev = None
    while prev != type_text:
        prev = type_text
        type_text = re.sub(r"<[^<>]*>", "", type_text)
    return " ".join(type_text.split()).replace(" ", "")


_PROFILES: dict[str, LanguageProfile] = {}


def register(profile: LanguageProfile) -> LanguageProfile:
    _PROFILES[profile.name] = profile
    return profile


def get_profile(name: str) -> LanguageProfile:
    _load()
    try:
        return _PROFILES[name]
    except KeyError:
        raise KeyError(f"unsupported language profile {name!r}") from None


def all_profiles() -> list[LanguageProfile]:
    _load()
    return [_PROFILES[k] for k in sorted(_PROFILES)]


def profile_for(path: str) -> LanguageProfile | None:
    for p in all_profiles():
        if p.handles(path):
            return p
    return None


def _load() -> None:
    from . import java, python  # noqa: F401  (registration side effect)
