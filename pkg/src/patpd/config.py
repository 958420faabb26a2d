"""Flat ``key=value`` text files (UTF-8, ``#`` comments)."""

from __future__ import annotations

from pathlib import Path

__all__ = ["parse_keyvalue", "read_keyvalue", "write_keyvalue"]


def parse_keyvalue(text: str, source: str = "<text>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{n}: empty key")
        out[key] = value
    return out


def read_keyvalue(path) -> dict:
    return parse_keyvalue(Path(path).read_text(encoding="utf-8"), str(path))


def write_keyvalue(path, values: dict) -> None:
    lines = [f"{k}={v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
