"""Flat key = value config files for TrainConfig.

Every TrainConfig field is a documented key; types are derived from the
dataclass defaults.  Lines starting with # are comments.  Tuples are
comma-separated, booleans are true/false.
"""

from __future__ import annotations

from dataclasses import fields as dataclass_fields
from pathlib import Path

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, example):
    raw = raw.strip()
    if isinstance(example, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(example, int):
        return int(raw)
    if isinstance(example, float):
        return float(raw)
    if isinstance(example, tuple):
        if not raw:
            return ()
        elem = example[0] if example else 0.0
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(int(p) if isinstance(elem, int) else float(p) for p in parts)
    return raw


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    values = {f.name: getattr(base, f.name) for f in dataclass_fields(TrainConfig)}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in values:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse_value(raw, values[key])
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return TrainConfig(**values)


def save_config(path, config: TrainConfig) -> None:
    lines = []
    for f in dataclass_fields(TrainConfig):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
