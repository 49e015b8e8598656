from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..corpus import DomainMode, GeneratorConfig, Obfuscation, ObfuscationType, parse_scenario
from ..errors import ConfigError
from ..graph import PruningConfig
from ..inference import InferenceParams
from ..pairwise import MatcherConfig
from ..unary import TrainConfig

MODES = ("unary_only", "joint_tree", "joint_maxproduct", "joint_oracle")


@dataclass(frozen=True)
class Seeds:
    corpus: int = 42
    splits: int = 0
    tags: int = 0
    training: int = 0


def _build(cls, data, where):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """One privacy-scenario experiment.

    ``tau`` only matters for S1; S2/S3/S3p/S3pp tag every split0 instance and S0
    tags everything. S0/S1 always run with visible heads.
    """

    scenario: str = "S1"
    tau: float = 10.0
    obfuscation: str = "black"
    blur_strength: float = 0.6
    blur_sigma: float = 0.2
    domain: str = "within"
    mode: str = "joint_tree"
    pruning: PruningConfig = field(default_factory=PruningConfig)
    inference: InferenceParams = field(default_factory=InferenceParams)
    seeds: Seeds = field(default_factory=Seeds)
    generator: GeneratorConfig | None = field(default_factory=GeneratorConfig)
    corpus_path: str | None = None
    pretrain_corpus_path: str | None = None
    pretrain_identities: int = 300
    unary: TrainConfig = field(default_factory=TrainConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    trace: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scenario", parse_scenario(self.scenario))
        try:
            ObfuscationType(str(self.obfuscation).lower())
            DomainMode(self.domain)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "obfuscation", str(self.obfuscation).lower())
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.generator is None and self.corpus_path is None:
            raise ConfigError("config needs either a generator or a corpus_path")
        if self.scenario not in ("S0", "S1") and self.obfuscation == "visible":
            raise ConfigError(f"scenario {self.scenario} needs a non-visible obfuscation type")
        Obfuscation.parse(self.obfuscation, self.blur_strength)

    @property
    def head_obfuscation(self) -> Obfuscation:
        if self.scenario in ("S0", "S1"):
            return Obfuscation()
        return Obfuscation.parse(self.obfuscation, self.blur_strength)

    @property
    def effective_beta(self) -> float:
        # oracle pairwise runs without negative edge pruning
        return 0.0 if self.mode == "joint_oracle" else self.pruning.beta

    def to_dict(self):
        data = dataclasses.asdict(self)
        return data

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        nested = {"pruning": PruningConfig, "inference": InferenceParams, "seeds": Seeds,
                  "unary": TrainConfig, "matcher": MatcherConfig}
        for key, cls_ in nested.items():
            if key in data:
                data[key] = _build(cls_, data[key], key)
        if data.get("generator") is not None:
            data["generator"] = _build(GeneratorConfig, data["generator"], "generator")
        elif "corpus_path" in data and "generator" not in data:
            data["generator"] = None
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)
