"""Deterministic JSON rendering: floats at 12 significant digits, infinities
as the strings "inf"/"-inf" (strict JSON has no literal for them)."""

from __future__ import annotations

import json
import math

import numpy as np


def _render(value, indent: int | None, level: int) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        if math.isnan(v):
            return '"nan"'
        return format(v, ".12g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return json.dumps(value)
    if value is None:
        return "null"
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, dict):
        items = [
            (json.dumps(str(k)), _render(v, indent, level + 1)) for k, v in value.items()
        ]
        return _join("{", "}", [f"{k}: {v}" for k, v in items], indent, level)
    if isinstance(value, (list, tuple)):
        return _join("[", "]", [_render(v, indent, level + 1) for v in value], indent, level)
    raise TypeError(f"cannot render {type(value).__name__} as JSON")


def _join(opening: str, closing: str, parts: list[str], indent: int | None, level: int) -> str:
    if not parts:
        return opening + closing
    if indent is None:
        return opening + ", ".join(parts) + closing
    pad = " " * (indent * (level + 1))
    body = (",\n" + pad).join(parts)
    return f"{opening}\n{pad}{body}\n{' ' * (indent * level)}{closing}"


def format_json(value, indent: int | None = None) -> str:
    """Render a JSON document from dicts, sequences, numbers, and strings."""
    return _render(value, indent, 0)
