"""Content-addressed cache for intermediate pipeline artifacts.

Stage outputs are keyed by a hash of the stage name, the relevant
configuration, and the raw input bytes, so re-running a pipeline with the
same inputs skips completed stages while any input or config change misses
cleanly.  ``FUNDUS_HE_CACHE`` overrides the cache directory.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Optional

from .config import PipelineConfig

ENV_VAR = "FUNDUS_HE_CACHE"


def cache_root(cfg: PipelineConfig) -> Optional[Path]:
    if not cfg.cache_enabled:
        return None
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    if cfg.cache_dir:
        return Path(cfg.cache_dir)
    return Path.home() / ".cache" / "fundus-he"


def stage_key(stage: str, config_repr: str, payload: bytes) -> str:
    digest = hashlib.sha256()
    digest.update(stage.encode())
    digest.update(b"\x00")
    digest.update(config_repr.encode())
    digest.update(b"\x00")
    digest.update(payload)
    return digest.hexdigest()


def get(root: Optional[Path], key: str) -> Optional[bytes]:
    if root is None:
        return None
    path = root / key[:2] / key
    try:
        return path.read_bytes()
    except OSError:
        return None


def put(root: Optional[Path], key: str, data: bytes) -> None:
    if root is None:
        return
    path = root / key[:2] / key
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
