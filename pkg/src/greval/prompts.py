"""Versioned prompt templates shipped as package resources.

Templates are plain text with ``{{placeholder}}`` markers. Each file is named
``<name>.v<version>.txt``; bumping a template means adding a new file and
updating ``TEMPLATE_VERSIONS`` so old runs stay reproducible.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from functools import lru_cache
from importlib import resources

TEMPLATE_VERSIONS = {
    "gre_open": 1,
    "gre_semi_open": 1,
    "gre_closed": 1,
    "demos_general": 1,
    "demos_biomedical": 1,
    "fact_check": 1,
    "granularity": 1,
}

_PLACEHOLDER = re.compile(r"\{\{\s*([a-z_]+)\s*\}\}")


def versioned_name(name: str) -> str:
    try:
        return f"{name}.v{TEMPLATE_VERSIONS[name]}"
    except KeyError:
        raise KeyError(f"unknown template {name!r}") from None


@lru_cache(maxsize=None)
def load(name: str) -> str:
    path = resources.files("greval") / "templates" / f"{versioned_name(name)}.txt"
    return path.read_text(encoding="utf-8")


def placeholders(name: str) -> list[str]:
    return sorted(set(_PLACEHOLDER.findall(load(name))))


def render(name: str, values: Mapping[str, str]) -> str:
    """Substitute every placeholder; a placeholder without a value is an error."""
    template = load(name)
    missing = [p for p in placeholders(name) if p not in values]
    if missing:
        raise KeyError(f"template {name!r} needs values for: {', '.join(missing)}")
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def versions() -> dict[str, str]:
    return {name: versioned_name(name) for name in TEMPLATE_VERSIONS}
