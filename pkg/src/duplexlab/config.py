"""Flat key=value config files.

Lines are `dotted.key = value`; `#` starts a comment. Values stay strings
until read through a typed getter. Keys mirror the module config surfaces,
e.g. routing.variant, routing.xa_interval, encoder.chunk_size, audio_head.G,
audio_head.D, composer.int_supervision, composer.overlap_support,
trainer.steps, trainer.batch.
"""

from __future__ import annotations


class ConfigError(ValueError):
    pass


class Config:
    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(values or {})

    @classmethod
    def parse(cls, text: str) -> "Config":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = line.split("=", 1)
            values[key.strip()] = val.strip()
        return cls(values)

    @classmethod
    def load(cls, path: str) -> "Config":
        with open(path) as fh:
            return cls.parse(fh.read())

    def get(self, key: str, default=None) -> str | None:
        return self.values.get(key, default)

    def get_int(self, key: str, default: int) -> int:
        raw = self.values.get(key)
        return default if raw is None else int(raw)

    def get_float(self, key: str, default: float) -> float:
        raw = self.values.get(key)
        return default if raw is None else float(raw)

    def get_bool(self, key: str, default: bool) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        if raw.lower() in ("1", "true", "on", "yes"):
            return True
        if raw.lower() in ("0", "false", "off", "no"):
            return False
        raise ConfigError(f"{key}: not a boolean: {raw}")

    def get_list(self, key: str, default, cast=float):
        raw = self.values.get(key)
        if raw is None:
            return default
        return tuple(cast(x) for x in raw.replace(",", " ").split())
