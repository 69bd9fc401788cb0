"""Line-oriented ``key = value`` text files.

Run configs and dataset manifests share this reader. Lines starting with ``#``
are comments; a ``[name]`` heading starts a section whose lines are kept
verbatim (manifests list one path per line there).
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass

from misf_inpaint.lib.errors import ConfigError


@dataclass
class ParsedFile:
    values: dict[str, str]
    sections: dict[str, list[str]]


def parse_text(text: str, source: str = "<config>") -> ParsedFile:
    """Split a config/manifest text into header values and sections."""
    values: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise ConfigError(line, f"{source}:{number}: empty section name")
            sections.setdefault(current, [])
            continue
        if current is not None:
            sections[current].append(line)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(line, f"{source}:{number}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise ConfigError(key, f"{source}:{number}: duplicate key")
        values[key] = value.strip()
    return ParsedFile(values, sections)


def parse_file(path: str | pathlib.Path) -> ParsedFile:
    path = pathlib.Path(path)
    return parse_text(path.read_text(encoding="utf-8"), str(path))


def parse_bool(key: str, raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")
