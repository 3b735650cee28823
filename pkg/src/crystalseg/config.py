"""``key=value`` configuration files.

Blank lines and ``#`` comments are ignored. Keys are case-sensitive; dashes
are normalized to underscores so file keys can mirror CLI flag names.
"""

from __future__ import annotations


def read_key_values(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out
