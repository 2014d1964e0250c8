"""TOML/JSON helpers and the config digest embedded in every output."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .errors import ConfigError


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_toml(path, data: dict) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(to_plain(data), fh)


def to_plain(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON/TOML types."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def dump_json(path, obj) -> None:
    text = json.dumps(to_plain(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def require(table: dict, key: str, where: str = "config"):
    if key not in table:
        raise ConfigError(f"{where}: missing key '{key}'")
    return table[key]


def resolve_table(value, base_dir: Path, key: str) -> dict:
    """A config entry may be an inline table or a path to a TOML file."""
    if isinstance(value, dict):
        return value
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"'{key}': file not found: {path}")
        return read_toml(path)
    raise ConfigError(f"'{key}' must be a table or a path string")
