"""Single-file pipeline configuration.

Every stage's knobs live in one flat ``key = value`` text file (``#``
comments allowed), with dotted keys naming the stage::

    preprocess.clahe_tiles = 8
    seeds.sigma = 3.0
    svm.C = 1.0
    workers = 4

Unknown keys are rejected so typos fail loudly, and the fully resolved
configuration is embedded in every JSON report to keep runs auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional

from .calibrate import CalibrateConfig
from .preprocess import PreprocessConfig
from .seeds import SeedConfig
from .segmentation import SegmentConfig


@dataclass(frozen=True)
class SvmTrainConfig:
    C: float = 1.0
    seed: int = 42
    epochs: int = 0          # 0 = auto (scales with training-set size)
    balance_classes: bool = True


@dataclass(frozen=True)
class SplitConfig:
    test_n: int = 20
    val_fraction: float = 0.15
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    svm: SvmTrainConfig = field(default_factory=SvmTrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    downscale: int = 1       # integer factor applied on image load
    workers: int = 1
    cache_enabled: bool = True
    cache_dir: str = ""      # empty = ~/.cache/fundus-he (FUNDUS_HE_CACHE wins)


_SECTIONS = ("preprocess", "seeds", "calibrate", "segment", "svm", "split")


class ConfigError(Exception):
    pass


def _parse_value(raw: str, default) -> object:
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        if len(parts) != len(default):
            raise ConfigError(f"expected {len(default)} values, got {raw!r}")
        return tuple(type(d)(p) for d, p in zip(default, parts))
    return raw


def _set_key(cfg: PipelineConfig, key: str, raw: str) -> PipelineConfig:
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")
        sub = getattr(cfg, section)
        if not any(f.name == name for f in fields(sub)):
            raise ConfigError(f"unknown config key {key!r}")
        value = _parse_value(raw, getattr(sub, name))
        return replace(cfg, **{section: replace(sub, **{name: value})})
    if not any(f.name == key for f in fields(cfg) if f.name not in _SECTIONS):
        raise ConfigError(f"unknown config key {key!r}")
    return replace(cfg, **{key: _parse_value(raw, getattr(cfg, key))})


def load_config(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> PipelineConfig:
    """Defaults, then the config file, then ``--set key=value`` overrides."""
    cfg = PipelineConfig()
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, raw = line.split("=", 1)
                try:
                    cfg = _set_key(cfg, key, raw)
                except ConfigError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg = _set_key(cfg, key, raw)
    if cfg.downscale < 1:
        raise ConfigError("downscale must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def resolved_dict(cfg: PipelineConfig) -> Dict[str, object]:
    """Flat dotted-key view of the full configuration, for reports."""
    out: Dict[str, object] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sub in fields(value):
                item = getattr(value, sub.name)
                out[f"{f.name}.{sub.name}"] = list(item) if isinstance(item, tuple) else item
        else:
            out[f.name] = value
    return dict(sorted(out.items()))
