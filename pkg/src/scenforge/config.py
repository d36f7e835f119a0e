"""Run configuration loaded from a JSON file; every field has a default."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import dacite

from .errors import ConfigError

PYTHON_COMMANDS = {
    "compile_cmd": "{python} -m scenforge.pycheck --path {source_path} {test_file}",
    "run_cmd": "{python} -m unittest {test_module}.{test_class}.{test_name}",
}
JAVA_COMMANDS = {
    "compile_cmd": "mvn -q -o test-compile",
    "run_cmd": "mvn -q -o test -Dtest={test_class}#{test_name} -DfailIfNoTests=false",
}


@dataclass(frozen=True)
class ProjectConfig:
    root: str = "."
    name: str = ""
    language: str = "python"
    source_dirs: tuple[str, ...] = ("src",)
    test_dirs: tuple[str, ...] = ("tests",)
    compile_cmd: str | None = None
    run_cmd: str | None = None
    timeout: float = 120.0
    env: dict[str, str] = field(default_factory=dict)
    env_passthrough: tuple[str, ...] = ("PATH", "HOME", "LANG", "JAVA_HOME", "MAVEN_OPTS")
    mutation_reports: str = ""
    commit: str = ""

    def commands(self) -> tuple[str | None, str]:
        defaults = JAVA_COMMANDS if self.language == "java" else PYTHON_COMMANDS
        compile_cmd = self.compile_cmd if self.compile_cmd is not None else defaults["compile_cmd"]
        return compile_cmd or None, self.run_cmd or defaults["run_cmd"]

    def run_env(self) -> dict[str, str]:
        env = dict(self.env)
        if self.language == "python" and "PYTHONPATH" not in env:
            env["PYTHONPATH"] = "{source_path}"
        return env

    @property
    def project_name(self) -> str:
        return self.name or Path(self.root).resolve().name


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "SCENFORGE_LLM_API_KEY"
    timeout: float = 300.0
    generation_temperature: float | None = None
    judge_temperature: float = 0.0
    max_output: int = 4096


@dataclass(frozen=True)
class PipelineConfig:
    wrong_oracles_per_assertion: int = 10
    exam_max_iter: int = 3
    enforced_retrievals: int = 3
    max_queries: int = 5
    max_bundles: int = 8
    repair_max_iter: int = 3
    prompt_budget_tokens: int = 12000
    runner_slots: int = 2


@dataclass(frozen=True)
class TuningConfig:
    epochs: int = 3
    batch_size: int = 5
    split: str = "random"  # random | leave-one-project-out
    test_fraction: float = 0.2
    holdout_project: str | None = None
    max_directives: int = 10


@dataclass(frozen=True)
class Config:
    project: ProjectConfig = field(default_factory=ProjectConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)

    def with_root(self, root: str) -> Config:
        return replace(self, project=replace(self.project, root=root))


_DACITE = dacite.Config(cast=[tuple], strict=True)


def config_from_dict(data: dict, base_dir: Path | None = None) -> Config:
    try:
        cfg = dacite.from_dict(Config, data, config=_DACITE)
    except dacite.DaciteError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if base_dir is not None and not Path(cfg.project.root).is_absolute():
        cfg = cfg.with_root(str((base_dir / cfg.project.root).resolve()))
    if cfg.project.language not in ("python", "java"):
        raise ConfigError(f"unsupported language {cfg.project.language!r}")
    if cfg.tuning.split not in ("random", "leave-one-project-out"):
        raise ConfigError(f"unknown split mode {cfg.tuning.split!r}")
    return cfg


def load_config(path: Path | str | None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path}: expected a JSON object")
    return config_from_dict(data, path.parent.resolve())


def config_to_dict(cfg: Config) -> dict:
    from .codec import to_plain

    return to_plain(cfg)
