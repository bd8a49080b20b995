"""Single declarative JSON config with flag overrides.

Relative paths resolve against the config file's directory so a config plus
its fixtures can move as a unit (and manifests that embed the config text
stay byte-stable). The canonical config text and its digest are snapshotted
into every iteration manifest.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Optional

from .core import PipelineError

DEFAULTS: dict[str, Any] = {
    "backend": {
        "kind": "mock",  # "mock" | "http"
        "endpoint": "",
        "token_env": "PROOFPIPE_API_TOKEN",
        "mock_script": None,
        "max_retries": 4,
        "initial_backoff_s": 1.0,
        "backoff_multiplier": 2.0,
        "backoff_jitter": 0.2,
        "max_in_flight": 8,
        "max_requests": None,
        "routes": {},  # iteration (as str) -> endpoint override
    },
    # No sampling settings are published for the method; these are plain
    # engineering defaults and fully configurable.
    "sampling": {
        "formalize": {"temperature": 1.0, "max_tokens": 1024, "n_samples": 1, "stop": []},
        "score": {"temperature": 1.0, "max_tokens": 1024, "n_samples": 1, "stop": []},
        "prove": {"temperature": 1.0, "max_tokens": 1024, "n_samples": 1, "stop": ["```"]},
    },
    "filter": {"false_proof_budget": 16},
    "search": {"k": 64, "per_attempt_timeout_s": 300.0, "stream_parallelism": 1},
    "verifier": {
        "checker_command": ["lean", "{src}"],
        "pool_size": 4,
        "timeout_s": 300.0,
        "toolchain_tag": "leanprover/lean4:v4.7.0-rc2",
        "mathlib_commit": "64528268b3c2cf578639bc479828882a9ecd3a82",
        "cache_path": None,
        "mock_script": None,
        "env_passthrough": [],
    },
    "store": {"dir": "store"},
    "iteration": {
        "corpus": "corpus.jsonl",
        "epsilon_score": 0.005,
        "epsilon_data": 0.01,
        "max_iterations": 1,
    },
    "run": {"deterministic": False, "workers": 1, "log_path": None},
}

_PATH_KEYS = (
    ("backend", "mock_script"),
    ("verifier", "cache_path"),
    ("verifier", "mock_script"),
    ("store", "dir"),
    ("iteration", "corpus"),
    ("run", "log_path"),
)


class ConfigError(PipelineError):
    """The config file is missing, malformed, or holds bad values."""


def _merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class PipelineConfig:
    """Config values plus the canonical text that went into the manifest."""

    def __init__(self, data: dict[str, Any], base_dir: Optional[Path] = None):
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        self.data = _merge(DEFAULTS, data)
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        self._validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls(data, base_dir=path.parent)

    def _validate(self) -> None:
        if self.data["backend"]["kind"] not in ("mock", "http"):
            raise ConfigError("backend.kind must be 'mock' or 'http'")
        if self.data["backend"]["kind"] == "http" and not self.data["backend"]["endpoint"]:
            raise ConfigError("backend.kind 'http' requires backend.endpoint")
        if self.data["search"]["k"] < 1:
            raise ConfigError("search.k must be >= 1")
        if self.data["filter"]["false_proof_budget"] < 0:
            raise ConfigError("filter.false_proof_budget must be >= 0")
        if self.data["verifier"]["pool_size"] < 1:
            raise ConfigError("verifier.pool_size must be >= 1")

    def override(self, dotted: dict[str, Any]) -> "PipelineConfig":
        """Apply 'section.key' -> value overrides (CLI flags win)."""
        data = copy.deepcopy(self.data)
        for dotted_key, value in dotted.items():
            if value is None:
                continue
            section, _, key = dotted_key.partition(".")
            if section not in data or key not in data[section]:
                raise ConfigError(f"unknown config key: {dotted_key}")
            data[section][key] = value
        return PipelineConfig(data, base_dir=self.base_dir)

    def path(self, section: str, key: str) -> Optional[Path]:
        value = self.data[section][key]
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.data[section]

    def canonical_text(self) -> str:
        return json.dumps(self.data, sort_keys=True, ensure_ascii=False, indent=None)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()
