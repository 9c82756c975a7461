"""Flat ``name = value`` text checkpoints shared by every parameter type."""

from __future__ import annotations

from pathlib import Path


def format_named(named: dict[str, float], header: dict[str, str] | None = None) -> str:
    lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
    lines += [f"{name} = {float(value)!r}" for name, value in named.items()]
    return "\n".join(lines) + "\n"


def parse_named(text: str) -> tuple[dict[str, float], dict[str, str]]:
    named, header = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                header[key.strip()] = value.strip()
            continue
        name, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'name = value', got {raw!r}.")
        named[name.strip()] = float(value)
    return named, header


def save(path, named: dict[str, float], header: dict[str, str] | None = None) -> None:
    Path(path).write_text(format_named(named, header))


def load(path) -> tuple[dict[str, float], dict[str, str]]:
    return parse_named(Path(path).read_text())
