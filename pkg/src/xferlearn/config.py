"""Flat key=value config files with CLI flag overrides.

Unknown keys are rejected; the fully resolved config is echoed into the
run's output directory so every run can be reproduced from its artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class Config(TrainConfig):
    experiment: str = "digits"  # digits | ablation | synth
    output_dir: str = "runs/default"
    source_images: str = ""
    source_labels: str = ""
    target_images: str = ""
    target_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    checkpoint: str = ""
    seeds: tuple = (0, 1, 2)
    k_values: tuple = (2, 5)
    methods: tuple = ("target_only", "fine_tune", "full")
    source_classes: tuple = ()
    target_classes: tuple = ()
    source_subsample: int = 0  # cap on source training images, 0 = all


_TUPLE_INT = {"seeds", "k_values", "source_classes", "target_classes", "disc_taps",
              "head_widths", "methods"}


def _parse_value(name: str, raw: str, target_type):
    raw = raw.strip()
    if name in _TUPLE_INT:
        if not raw:
            return ()
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if name in ("methods", "disc_taps"):
            return tuple(parts)
        return tuple(int(p) for p in parts)
    if target_type is bool or isinstance(target_type, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}") from e
    if target_type is float:
        if not raw:
            return None  # optional numeric fields dump as empty
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from e
    return raw


def _field_types():
    out = {}
    for f in fields(Config):
        if f.name in _TUPLE_INT:
            out[f.name] = tuple
        elif f.type in ("int", int):
            out[f.name] = int
        elif f.type in ("float", float, "float | None"):
            out[f.name] = float
        elif f.type in ("bool", bool):
            out[f.name] = bool
        else:
            out[f.name] = str
    return out


def load_config(path=None, overrides=None) -> Config:
    """Build a Config from an optional file plus --key value overrides."""
    types = _field_types()
    values = {}

    def ingest(key, raw, where):
        if key not in types:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw, types[key])

    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = line.split("=", 1)
            ingest(key.strip(), raw, f"{path}:{lineno}")

    for key, raw in (overrides or {}).items():
        ingest(key, raw, "command line")

    try:
        return Config(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def dump_config(cfg: Config) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = ""
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
