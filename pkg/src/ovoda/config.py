"""Run configuration: one structured file, every key overridable from the
command line via dotted ``--set section.key=value`` flags.

The effective configuration (defaults + file + overrides, with the resolved
seed) is echoed by every command.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from .alignment import DiscoveryThresholds
from .errors import ConfigError, ValidationError
from .evaluation import MatchConfig
from .losses import LossWeights
from .pipeline import PipelineSettings
from .proposals import NoiseConfig
from .providers import CachingProvider, EmbeddingProvider, RemoteProvider, SyntheticProvider
from .scene_io import SynthConfig


@dataclass(frozen=True)
class ProviderSpec:
    kind: str = "synthetic"  # synthetic | remote
    dim: int = 256
    noise: float = 0.0
    url: str = ""
    timeout_s: float = 10.0
    retries: int = 2

    def __post_init__(self):
        if self.kind not in ("synthetic", "remote"):
            raise ConfigError(f"provider kind must be synthetic or remote, got {self.kind!r}")
        if self.kind == "remote" and not self.url:
            raise ConfigError("remote provider requires a url")
        if self.dim <= 0:
            raise ConfigError("provider dim must be positive")
        if self.noise < 0:
            raise ConfigError("provider noise must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    vocabulary: str = "nuscenes-b6n4"
    dataset: str = ""
    proposals: str = ""
    out_dir: str = "out"
    temperature: float = 0.05
    temporal_window: int = 2
    hfa: bool = True
    psp: bool = True
    hfa_swap_lateral: bool = False
    fusion_gamma: float = 0.05
    use_training_vocab: bool = False
    emit_attribute_oracle: bool = True
    thresholds: DiscoveryThresholds = field(default_factory=DiscoveryThresholds)
    provider: ProviderSpec = field(default_factory=ProviderSpec)
    proposer: NoiseConfig = field(default_factory=NoiseConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    matching: MatchConfig = field(default_factory=MatchConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.temporal_window < 0:
            raise ConfigError("temporal_window must be non-negative")
        if self.fusion_gamma < 0:
            raise ConfigError("fusion_gamma must be non-negative")

    def settings(self) -> PipelineSettings:
        return PipelineSettings(
            seed=self.seed,
            temperature=self.temperature,
            temporal_window=self.temporal_window,
            hfa=self.hfa,
            hfa_swap_lateral=self.hfa_swap_lateral,
            psp=self.psp,
            fusion_gamma=self.fusion_gamma,
            use_training_vocab=self.use_training_vocab,
            thresholds=self.thresholds,
        )

    def make_provider(self) -> EmbeddingProvider:
        if self.provider.kind == "remote":
            return CachingProvider(
                RemoteProvider(
                    self.provider.url,
                    timeout=self.provider.timeout_s,
                    retries=self.provider.retries,
                )
            )
        return CachingProvider(
            SyntheticProvider(self.seed, dim=self.provider.dim, noise=self.provider.noise)
        )


def _coerce(value, target_type, path: str):
    """Best-effort coercion of JSON values into dataclass field types."""
    import typing

    origin = typing.get_origin(target_type)
    if origin is typing.Union:
        args = [a for a in typing.get_args(target_type) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected array")
        args = typing.get_args(target_type)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) == len(value):
            return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args)))
        return tuple(value)
    if is_dataclass(target_type):
        return _dataclass_from_dict(target_type, value, path)
    if target_type is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected boolean, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path}: expected integer, got {value!r}")
        return int(value)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    return value


def _dataclass_from_dict(cls, data, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected object")
    hints = {f.name: f.type for f in fields(cls)}
    import typing

    resolved = typing.get_type_hints(cls)
    unknown = set(data) - set(hints)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, raw in data.items():
        kwargs[name] = _coerce(raw, resolved[name], f"{path}.{name}" if path else name)
    try:
        return cls(**kwargs)
    except (ValidationError, ConfigError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def run_config_from_dict(data: dict) -> RunConfig:
    return _dataclass_from_dict(RunConfig, data)


def run_config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _set_dotted(tree: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = tree
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends into a non-object")
    node[parts[-1]] = value


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_run_config(
    config_path: str | None = None,
    overrides: list[str] = (),
    direct: dict | None = None,
) -> RunConfig:
    """Defaults, then the config file, then --set overrides, then direct
    flag values (e.g. --seed) in increasing priority."""
    data: dict = {}
    if config_path:
        p = Path(config_path)
        if not p.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    tree: dict = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_dotted(tree, key.strip(), raw)
    data = _merge(data, tree)
    if direct:
        data = _merge(data, {k: v for k, v in direct.items() if v is not None})
    return run_config_from_dict(data)
