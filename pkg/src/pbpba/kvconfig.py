"""Flat ``key = value`` text files.

Blank lines and ``#`` comments are ignored. Keys may carry list-index
segments (``plane.0.albedo``); :func:`nest` turns them into dicts/lists.
"""

from __future__ import annotations

from .errors import ConfigError, IoFailure


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    return parse_kv(text)


def parse_value(s: str):
    """Interpret a value as bool, int, float, float list or bare string."""
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    parts = s.replace(",", " ").split()
    try:
        nums = [int(p) if p.lstrip("+-").isdigit() else float(p) for p in parts]
    except ValueError:
        return s
    if len(nums) == 1:
        return nums[0]
    return nums


def nest(flat: dict[str, str]) -> dict:
    """Turn dotted keys into nested dicts; numeric segments become list slots."""
    root: dict = {}
    for key, value in flat.items():
        node = root
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} conflicts with a scalar")
        node[parts[-1]] = parse_value(value)
    return _listify(root)


def _listify(node):
    if not isinstance(node, dict):
        return node
    node = {k: _listify(v) for k, v in node.items()}
    if node and all(k.isdigit() for k in node):
        idx = sorted(int(k) for k in node)
        if idx != list(range(len(idx))):
            raise ConfigError(f"list indices must be contiguous from 0, got {idx}")
        return [node[str(i)] for i in idx]
    return node


def format_kv(items: dict) -> str:
    lines = []
    for k, v in items.items():
        if isinstance(v, (list, tuple)):
            v = " ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(float(v))
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
