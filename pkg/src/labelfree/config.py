"""Pipeline configuration: JSON schema, dotted overrides, hashing and seeds.

A config file is a JSON object whose top-level keys mirror
:class:`PipelineConfig`; nested sections (``selection``, ``strategy``,
``filter``, ``train``, ``simulator``, ``live``, ``annotation``) take the
fields of the matching dataclass. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .annotator import BackendConfig, PromptStrategy
from .filtering import FilterConfig
from .gcn import TrainConfig
from .selection import SelectionConfig


class ConfigError(ValueError):
    pass


@dataclass
class SimulatorConfig:
    # when set, base_accuracy is solved so the mean correctness over all nodes hits it
    target_quality: float | None = None
    base_accuracy: float = 0.4
    density_slope: float = 0.5
    transition: str = "confusable"
    transition_focus: float = 0.6
    confidence_calibration: float = 1.0
    malformed_rate: float = 0.0
    difficulty_noise: float = 0.0
    clusters: int | None = None

    def validate(self):
        if self.transition not in ("uniform", "confusable"):
            raise ConfigError("simulator.transition must be 'uniform' or 'confusable'")
        if self.target_quality is not None and not 0.0 < self.target_quality <= 1.0:
            raise ConfigError("simulator.target_quality must lie in (0, 1]")
        if not 0.0 <= self.confidence_calibration <= 1.0:
            raise ConfigError("simulator.confidence_calibration must lie in [0, 1]")
        if not 0.0 <= self.malformed_rate <= 1.0:
            raise ConfigError("simulator.malformed_rate must lie in [0, 1]")
        if self.difficulty_noise < 0:
            raise ConfigError("simulator.difficulty_noise must be non-negative")


@dataclass
class AnnotationConfig:
    max_retries: int = 3
    concurrency_limit: int = 4
    allow_spend: bool = False
    max_dollars: float | None = None

    def validate(self):
        if self.max_retries < 0:
            raise ConfigError("annotation.max_retries must be non-negative")
        if self.concurrency_limit < 1:
            raise ConfigError("annotation.concurrency_limit must be positive")
        if self.max_dollars is not None and self.max_dollars <= 0:
            raise ConfigError("annotation.max_dollars must be positive")


_SECTIONS = {
    "selection": SelectionConfig,
    "strategy": PromptStrategy,
    "filter": FilterConfig,
    "train": TrainConfig,
    "simulator": SimulatorConfig,
    "live": BackendConfig,
    "annotation": AnnotationConfig,
}

# fields that change where or whether results are produced, not what they are
_UNHASHED = ("out", "annotation.allow_spend", "annotation.max_dollars", "annotation.concurrency_limit")


@dataclass
class PipelineConfig:
    bundle: str | None = None
    # keyword arguments for synthetic.make_synthetic_tag, used when no bundle is given
    synthetic: dict | None = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    strategy: PromptStrategy = field(default_factory=PromptStrategy)
    filter_enabled: bool = True
    filter: FilterConfig = field(default_factory=FilterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: str = "sim"
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    live: BackendConfig = field(default_factory=BackendConfig)
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    out: str = "runs/default"
    seed: int = 0
    repeats: int = 3

    def validate(self, check_paths: bool = True):
        if (self.bundle is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of 'bundle' and 'synthetic'")
        if check_paths and self.bundle is not None and not Path(self.bundle).is_dir():
            raise ConfigError(f"bundle directory {self.bundle!r} does not exist")
        if self.backend not in ("sim", "live"):
            raise ConfigError("backend must be 'live' or 'sim'")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if self.backend == "live":
            if not self.annotation.allow_spend:
                raise ConfigError("the live backend needs --allow-spend")
            if self.annotation.max_dollars is None:
                raise ConfigError("the live backend needs a --max-dollars cap")
        try:
            self.selection.validate()
            self.filter.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.simulator.validate()
        self.annotation.validate()
        return self

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def hash_payload(self) -> dict:
        d = self.to_dict()
        for dotted in _UNHASHED:
            node = d
            *head, leaf = dotted.split(".")
            for h in head:
                node = node[h]
            node.pop(leaf, None)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.hash_payload(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = dict(data)
    for k, v in kwargs.items():
        if isinstance(v, list) and k in ("adam_betas",):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = {}
    for k, v in data.items():
        if k in _SECTIONS:
            if not isinstance(v, dict):
                raise ConfigError(f"section {k!r} must be an object")
            top[k] = _build(_SECTIONS[k], v, k)
        else:
            top[k] = v
    return _build(PipelineConfig, top, "config")


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Read a JSON config (or start from defaults) and apply dotted overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    for dotted, value in (overrides or {}).items():
        set_dotted(data, dotted, value)
    return config_from_dict(data)


def set_dotted(data: dict, dotted: str, value):
    *head, leaf = dotted.split(".")
    node = data
    for h in head:
        nxt = node.setdefault(h, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted}: {h!r} is not a section")
        node = nxt
    node[leaf] = value


def parse_value(text: str):
    """JSON literal when it parses (numbers, true/false/null, lists), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def derive_seed(root: int, stage: str) -> int:
    """Per-stage seed: the first 4 bytes (little-endian) of sha256("<root>:<stage>")."""
    digest = hashlib.sha256(f"{int(root)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
