"""Run configuration: one YAML document with a section per module.

Every key is checked against the dataclass it feeds, so a typo fails the
run up front with the file name and line of the offending key instead of
being silently ignored.  :meth:`RunConfig.to_yaml` writes back every
effective value, which makes the snapshot a complete recipe for the run.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .ppo_agent import PpoConfig
from .tabletop_env import CLASS_CATALOG, EnvConfig, ScenarioSpec, Workspace

OUTPUT_ENV_VAR = "TABLETOP_GRASP_OUT"
# list-valued keys whose length is free
VARIABLE_LENGTH = {"eval.class_pool"}
# keys whose default is None, with the type a set value must have
OPTIONAL_TYPES = {"env.eps_act_angle": 0.0, "eval.n_trials": 0, "eval.perception": "", "eval.target_class": 0}
TASKS = ("static", "multi", "clutter", "semantic", "moving", "perturbed")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: Optional[int] = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line


@dataclass
class TrainSettings:
    scenario: str = "static"
    object_count: int = 1
    # ending the episode on a failed grasp teaches the agent to fail fast; keep going instead
    terminate_on_failed_grasp: bool = False
    checkpoint_every: int = 500


@dataclass
class EvalSettings:
    n_trials: Optional[int] = None  # None picks the task's own default
    perception: Optional[str] = None
    object_count: int = 10
    overlap_density: float = 0.5
    target_class: Optional[int] = None
    class_pool: Tuple[int, ...] = tuple(range(len(CLASS_CATALOG)))
    speed: float = 0.005
    displacement_scale: float = 0.3


@dataclass
class GateSettings:
    static_success: float = 0.90
    multi_completion: float = 0.90
    clutter_completion: float = 0.70
    clutter_success: float = 0.85
    semantic_success: float = 0.90
    moving_margin: float = 0.10
    perturbed_success: float = 0.80


@dataclass
class WorkspaceSettings:
    bounds: Tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
    pixel_grid: Tuple[int, int] = (200, 200)

    def build(self) -> Workspace:
        return Workspace(tuple(float(b) for b in self.bounds), tuple(int(p) for p in self.pixel_grid))


@dataclass
class OutputSettings:
    dir: str = "runs/default"


SECTIONS = {
    "ppo": PpoConfig,
    "env": EnvConfig,
    "train": TrainSettings,
    "eval": EvalSettings,
    "gates": GateSettings,
    "workspace": WorkspaceSettings,
    "output": OutputSettings,
}


@dataclass
class RunConfig:
    seed: int = 0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    gates: GateSettings = field(default_factory=GateSettings)
    workspace: WorkspaceSettings = field(default_factory=WorkspaceSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def __post_init__(self):
        # one master seed drives training; the ppo section never carries its own
        self.ppo = replace(self.ppo, seed=int(self.seed))

    def validate(self) -> None:
        self.ppo.validate()
        self.env.validate()
        self.workspace.build()
        ScenarioSpec(self.train.scenario, object_count=self.train.object_count)
        if self.train.checkpoint_every < 0:
            raise ValueError("train.checkpoint_every must be >= 0")
        if self.eval.n_trials is not None and self.eval.n_trials < 1:
            raise ValueError("eval.n_trials must be >= 1")
        ScenarioSpec("semantic", object_count=self.eval.object_count, target_class=self.eval.target_class,
                     class_pool=self.eval.class_pool, overlap_density=self.eval.overlap_density,
                     velocity=self.eval.speed)
        if self.eval.perception not in (None, "once", "every_step", "ground_truth"):
            raise ValueError(f"eval.perception {self.eval.perception!r} is not a perception mode")
        for name, value in asdict(self.gates).items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"gates.{name} must lie in [0, 1]")

    def train_env_config(self) -> EnvConfig:
        return replace(self.env, terminate_on_failed_grasp=self.train.terminate_on_failed_grasp)

    def train_scenario(self) -> ScenarioSpec:
        return ScenarioSpec(self.train.scenario, object_count=self.train.object_count, seed=self.seed)

    def output_dir(self, override: Optional[str] = None) -> Path:
        """Flag beats environment variable beats config file."""
        if override:
            return Path(override)
        if os.environ.get(OUTPUT_ENV_VAR):
            return Path(os.environ[OUTPUT_ENV_VAR])
        return Path(self.output.dir)

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {"seed": int(self.seed)}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            if name == "ppo":
                section.pop("seed")
            doc[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return doc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# -- loading -----------------------------------------------------------------

def _key_lines(node) -> Dict[Tuple[str, ...], int]:
    """Map every key path in a YAML mapping tree to its 1-based line."""
    lines: Dict[Tuple[str, ...], int] = {}

    def walk(n, prefix):
        if not isinstance(n, yaml.MappingNode):
            return
        for k, v in n.value:
            path = prefix + (str(k.value),)
            lines[path] = k.start_mark.line + 1
            walk(v, path)

    walk(node, ())
    return lines


def _coerce(cls, name: str, raw: dict, source: str, lines) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping", source, lines.get((name,)))
    known = {f.name for f in fields(cls)}
    if cls is PpoConfig:
        known.discard("seed")
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'", source, lines.get((name, str(key))))
    defaults = cls() if cls is not PpoConfig else PpoConfig()
    values = {}
    for key, value in raw.items():
        default = getattr(defaults, key)
        line = lines.get((name, key))
        values[key] = _check_type(f"{name}.{key}", value, default, source, line)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        # point at the key the message names, else at the section header
        culprit = next((k for k in raw if str(exc).startswith(str(k))), None)
        line = lines.get((name, culprit)) if culprit is not None else lines.get((name,))
        raise ConfigError(f"section '{name}': {exc}", source, line) from exc


def _check_type(path: str, value, default, source: str, line: Optional[int]):
    def bad(expected):
        return ConfigError(f"'{path}' must be {expected}, got {value!r}", source, line)

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if isinstance(default, tuple):
        if path in VARIABLE_LENGTH:
            if not isinstance(value, (list, tuple)) or not all(
                    isinstance(v, int) and not isinstance(v, bool) for v in value):
                raise bad("a list of integers")
            return tuple(value)
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise bad(f"a list of {len(default)} numbers")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise bad(f"a list of {len(default)} numbers")
        return tuple(value)
    if default is None and value is not None and path in OPTIONAL_TYPES:
        return _check_type(path, value, OPTIONAL_TYPES[path], source, line)
    return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"not valid YAML ({getattr(exc, 'problem', exc)})", source, line) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping of sections", source, 1)
    lines = _key_lines(root)
    kwargs: Dict[str, Any] = {}
    for key, value in doc.items():
        if key == "seed":
            kwargs["seed"] = _check_type("seed", value, 0, source, lines.get(("seed",)))
        elif key in SECTIONS:
            kwargs[key] = _coerce(SECTIONS[key], key, value or {}, source, lines)
        else:
            raise ConfigError(f"unknown section '{key}'", source, lines.get((str(key),)))
    cfg = RunConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc), source) from exc
    return cfg


def load_config(path=None) -> RunConfig:
    """Read a config file; ``None`` gives the built-in defaults."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", str(path)) from exc
    return parse_config(text, str(path))
