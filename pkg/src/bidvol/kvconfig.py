"""Tiny ``key = value`` config-file reader (UTF-8, ``#`` comments)."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_kv_file(path) -> dict[str, str]:
    """Read ``key = value`` lines into a dict; later keys override earlier ones."""
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def as_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ConfigError(f"cannot parse boolean from {value!r}")


def as_floats(value: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in value.split(",") if tok.strip())


def as_strs(value: str) -> list[str]:
    return [tok.strip() for tok in value.split(",") if tok.strip()]
