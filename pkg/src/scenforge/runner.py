"""Compile and run one candidate test inside a scratch copy of the project."""

from __future__ import annotations

import hashlib
import logging
import os
import queue
import shlex
import shutil
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path, PurePosixPath

from .config import ProjectConfig
from .errors import RunnerUnavailable, TimeoutExceeded
from .index import SKIP_DIRS, SymbolIndex
from .lang import LanguageProfile, get_profile

log = logging.getLogger(__name__)


class RunStatus(str, Enum):
    PASS = "pass"
    COMPILE_ERROR = "compile_error"
    EXECUTION_ERROR = "execution_error"
    ASSERTION_FAILURE = "assertion_failure"


@dataclass(frozen=True)
class RunOutcome:
    status: RunStatus
    messages: tuple[str, ...]
    duration: float = 0.0
    raw_log: str | None = None

    @property
    def passed(self) -> bool:
        return self.status is RunStatus.PASS


def classify(profile: LanguageProfile, log_text: str, exit_code: int, compile_failed: bool = False) -> RunStatus:
    """Outcome class from the exit channel and the shape of the output."""
    if compile_failed:
        return RunStatus.COMPILE_ERROR
    if exit_code == 0:
        return RunStatus.PASS
    if any(p.search(log_text) for p in profile.compile_markers):
        return RunStatus.COMPILE_ERROR
    execution = any(p.search(log_text) for p in getattr(profile, "execution_markers", ()))
    if not execution and any(p.search(log_text) for p in profile.assertion_markers):
        return RunStatus.ASSERTION_FAILURE
    return RunStatus.EXECUTION_ERROR


_HEADLINE_EXTRA = ("FAIL: ", "ERROR: ", "Caused by: ")


def filter_messages(raw_log: str, index: SymbolIndex | None, profile: LanguageProfile,
                    extra_files: tuple[str, ...] = ()) -> list[str]:
    """Diagnostics and frames that point into the project, plus headline lines, in original order."""

    def in_project(file: str, owner: str = "") -> bool:
        f = file.replace("\\", "/")
        if any(f == e or f.endswith("/" + e) or e.endswith("/" + f) for e in extra_files):
            return True
        if index is None:
            return not os.path.isabs(f) and "site-packages" not in f
        if index.resolve_file(f) is not None:
            return True
        return bool(owner) and owner in index.symbols

    kept: list[str] = []
    follow = False  # keep indented continuation lines of a kept entry
    for line in raw_log.splitlines():
        if not line.strip():
            follow = False
            continue
        frame = profile.parse_frame(line)
        if frame is not None:
            follow = in_project(frame.file, frame.owner)
            if follow:
                kept.append(line)
            continue
        diag = profile.diagnostic_file(line)
        if diag is not None:
            follow = in_project(diag[0])
            if follow:
                kept.append(line)
            continue
        stripped = line.strip()
        if profile.headline.match(stripped) or stripped.startswith(_HEADLINE_EXTRA):
            kept.append(line)
            follow = True
            continue
        if follow and line[:1].isspace() and not set(stripped) <= set("-=^~"):
            kept.append(line)
            continue
        follow = False
    return kept


def _module_of(test_rel: str) -> str:
    p = PurePosixPath(test_rel)
    return ".".join(p.with_suffix("").parts)


class Runner:
    """Runs candidate tests with at most ``slots`` concurrent builds.

    Each slot owns a private copy of the project, created on first use.
    Before every run the slot's test file is overwritten and afterwards
    restored, so no candidate ever sees another candidate's code.
    """

    def __init__(self, project: ProjectConfig, index: SymbolIndex | None = None, slots: int = 2,
                 log_dir: Path | None = None):
        self.project = project
        self.root = Path(project.root).resolve()
        self.profile = get_profile(project.language)
        self.index = index
        self.log_dir = Path(log_dir) if log_dir else None
        self.compile_cmd, self.run_cmd = project.commands()
        self._slots: queue.Queue[int] = queue.Queue()
        for i in range(max(1, slots)):
            self._slots.put(i)
        self._scratch: dict[int, Path] = {}
        self._tmp = tempfile.TemporaryDirectory(prefix="scenforge-run-")
        self._pristine: bool | None = None
        self._lock = threading.Lock()
        self.runs = 0

    def close(self) -> None:
        self._tmp.cleanup()

    def __enter__(self) -> Runner:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # setup

    def _copy(self, slot: int) -> Path:
        dest = self._scratch.get(slot)
        if dest is None:
            dest = Path(self._tmp.name) / f"slot{slot}" / self.root.name
            ignore = shutil.ignore_patterns(*SKIP_DIRS, "*.pyc")
            shutil.copytree(self.root, dest, ignore=ignore)
            self._scratch[slot] = dest
        return dest

    def _variables(self, scratch: Path, test_rel: str, test_class: str, test_name: str) -> dict[str, str]:
        return {
            "python": sys.executable,
            "root": str(scratch),
            "source_path": os.pathsep.join(str(scratch / d) for d in self.project.source_dirs),
            "test_file": test_rel,
            "test_module": _module_of(test_rel),
            "test_class": test_class,
            "test_name": test_name,
        }

    def _env(self, variables: dict[str, str]) -> dict[str, str]:
        env = {k: os.environ[k] for k in self.project.env_passthrough if k in os.environ}
        for k, v in self.project.run_env().items():
            env[k] = v.format(**variables)
        env.setdefault("PYTHONDONTWRITEBYTECODE", "1")
        return env

    def _exec(self, template: str, scratch: Path, variables: dict[str, str]) -> tuple[int, str]:
        argv = [a.format(**variables) for a in shlex.split(template)]
        if shutil.which(argv[0]) is None and not Path(argv[0]).exists():
            raise RunnerUnavailable(f"build command not found: {argv[0]}")
        try:
            proc = subprocess.run(argv, cwd=scratch, env=self._env(variables), capture_output=True,
                                  text=True, timeout=self.project.timeout)
        except FileNotFoundError as exc:
            raise RunnerUnavailable(f"build command not runnable: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise TimeoutExceeded(f"{argv[0]} exceeded {self.project.timeout:g}s") from exc
        return proc.returncode, (proc.stdout or "") + (proc.stderr or "")

    def _normalize(self, text: str, scratch: Path) -> str:
        for prefix in (str(scratch) + os.sep, str(scratch.resolve()) + os.sep):
            text = text.replace(prefix, "")
        return text

    def ensure_pristine(self) -> None:
        """Verify once per session that the unmodified project compiles."""
        with self._lock:
            if self._pristine is not None:
                if not self._pristine:
                    raise RunnerUnavailable("project does not build in its pristine state")
                return
            if self.compile_cmd is None:
                self._pristine = True
                return
            slot = self._slots.get()
            try:
                scratch = self._copy(slot)
                test_target = " ".join(self.project.test_dirs) or "."
                variables = self._variables(scratch, test_target, "", "")
                code, out = self._exec(self.compile_cmd, scratch, variables)
            finally:
                self._slots.put(slot)
            self._pristine = code == 0
            if not self._pristine:
                log.error("pristine build failed:\n%s", out)
                raise RunnerUnavailable("project does not build in its pristine state")

    # running

    def run_candidate(self, test_rel: str, file_text: str, test_name: str, test_class: str = "") -> RunOutcome:
        """Write ``file_text`` to ``test_rel`` in a scratch copy, then compile and run one test."""
        self.ensure_pristine()
        slot = self._slots.get()
        try:
            scratch = self._copy(slot)
            target = scratch / test_rel
            original = target.read_bytes() if target.exists() else None
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(file_text, encoding="utf-8")
            started = time.monotonic()
            try:
                variables = self._variables(scratch, test_rel, test_class, test_name)
                compile_failed, chunks, code = False, [], 0
                if self.compile_cmd:
                    code, out = self._exec(self.compile_cmd, scratch, variables)
                    chunks.append(out)
                    compile_failed = code != 0
                if not compile_failed:
                    code, out = self._exec(self.run_cmd, scratch, variables)
                    chunks.append(out)
            finally:
                if original is None:
                    target.unlink(missing_ok=True)
                else:
                    target.write_bytes(original)
            raw = self._normalize("\n".join(chunks), scratch)
        finally:
            self._slots.put(slot)
        duration = time.monotonic() - started
        with self._lock:
            self.runs += 1
        status = classify(self.profile, raw, code, compile_failed)
        messages = () if status is RunStatus.PASS else tuple(
            filter_messages(raw, self.index, self.profile, (test_rel,)))
        return RunOutcome(status, messages, duration, self._save_log(raw, test_rel, test_name))

    def _save_log(self, raw: str, test_rel: str, test_name: str) -> str | None:
        if self.log_dir is None:
            return None
        self.log_dir.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256(f"{test_rel}:{test_name}:{raw}".encode()).hexdigest()[:16]
        path = self.log_dir / f"{PurePosixPath(test_rel).stem}.{test_name}.{digest}.log"
        path.write_text(raw, encoding="utf-8")
        return str(path)
