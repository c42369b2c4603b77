"""Strict sectioned key/value documents.

One plain-text format serves system recipes, experiment configs, and report
metadata: named sections in square brackets, `key = value` lines, `#`
comments.  Parsing is strict: duplicate sections or keys, stray text, and
unknown keys (when a schema is enforced) are hard errors, never warnings.
Serialization preserves insertion order so canonical documents are
byte-stable.
"""

from __future__ import annotations

import re

__all__ = ["Section", "Document", "DocumentError", "parse_document", "format_float"]

_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.\-]+)\]$")
_KEY_RE = re.compile(r"^([A-Za-z0-9_.\-]+)\s*=\s*(.*)$")


class DocumentError(ValueError):
    """Malformed document or schema violation."""


def format_float(x: float) -> str:
    """Shortest exact decimal form of a float (repr round-trips)."""
    return repr(float(x))


class Section:
    def __init__(self, name: str):
        self.name = name
        self._items: dict[str, str] = {}

    def __contains__(self, key):
        return key in self._items

    def keys(self):
        return self._items.keys()

    def items(self):
        return self._items.items()

    def set(self, key: str, value) -> None:
        if key in self._items:
            raise DocumentError(f"duplicate key '{key}' in section [{self.name}]")
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = format_float(value)
        elif isinstance(value, (list, tuple)):
            value = ", ".join(
                format_float(v) if isinstance(v, float) else str(v) for v in value
            )
        self._items[key] = str(value)

    def get(self, key: str) -> str:
        if key not in self._items:
            raise DocumentError(f"missing key '{key}' in section [{self.name}]")
        return self._items[key]

    def get_str(self, key, default=None):
        if key not in self._items:
            if default is None:
                raise DocumentError(f"missing key '{key}' in section [{self.name}]")
            return default
        return self._items[key]

    def get_int(self, key, default=None):
        raw = self.get(key) if default is None or key in self._items else str(default)
        try:
            return int(raw)
        except ValueError:
            raise DocumentError(f"key '{key}' in [{self.name}]: '{raw}' is not an integer")

    def get_float(self, key, default=None):
        raw = self.get(key) if default is None or key in self._items else str(default)
        try:
            return float(raw)
        except ValueError:
            raise DocumentError(f"key '{key}' in [{self.name}]: '{raw}' is not a number")

    def get_bool(self, key, default=None):
        raw = self.get(key) if default is None or key in self._items else ("true" if default else "false")
        if raw not in ("true", "false"):
            raise DocumentError(f"key '{key}' in [{self.name}]: '{raw}' is not true/false")
        return raw == "true"

    def get_floats(self, key):
        raw = self.get(key)
        if not raw.strip():
            return []
        try:
            return [float(p) for p in raw.split(",")]
        except ValueError:
            raise DocumentError(f"key '{key}' in [{self.name}]: '{raw}' is not a number list")

    def require_keys(self, allowed, required=()):
        """Schema enforcement: reject unknown keys, demand required ones."""
        allowed = set(allowed) | set(required)
        for key in self._items:
            if key not in allowed:
                raise DocumentError(f"unknown key '{key}' in section [{self.name}]")
        for key in required:
            if key not in self._items:
                raise DocumentError(f"missing key '{key}' in section [{self.name}]")


class Document:
    def __init__(self):
        self._sections: dict[str, Section] = {}

    def __contains__(self, name):
        return name in self._sections

    def sections(self):
        return list(self._sections.values())

    def section_names(self):
        return list(self._sections.keys())

    def add(self, name: str) -> Section:
        if name in self._sections:
            raise DocumentError(f"duplicate section [{name}]")
        sec = Section(name)
        self._sections[name] = sec
        return sec

    def get(self, name: str) -> Section:
        if name not in self._sections:
            raise DocumentError(f"missing section [{name}]")
        return self._sections[name]

    def render(self) -> str:
        lines = []
        for sec in self._sections.values():
            lines.append(f"[{sec.name}]")
            for k, v in sec.items():
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def parse_document(text: str) -> Document:
    doc = Document()
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = doc.add(m.group(1))
            continue
        m = _KEY_RE.match(line)
        if m:
            if current is None:
                raise DocumentError(f"line {lineno}: key outside any section")
            current.set(m.group(1), m.group(2).strip())
            continue
        raise DocumentError(f"line {lineno}: cannot parse '{raw.strip()}'")
    return doc
