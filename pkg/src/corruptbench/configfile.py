"""Line-oriented config parser.

Grammar: one `key = value` per line, where value is a scalar (int, float,
true/false, quoted or bare string) or a call like `kind(param=value, ...)`.
`#` starts a comment. Keys may repeat; consumers decide which keys allow it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ConfigError

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT = re.compile(r"[+-]?\d+")
_BARE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.\-/]*")

_MISSING = object()


@dataclass(frozen=True)
class CallExpr:
    """A parsed `name(key=value, ...)` expression."""

    name: str
    kwargs: dict
    line: int = 0


def _strip_comment(line: str) -> str:
    out = []
    in_quote = False
    for ch in line:
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            break
        out.append(ch)
    return "".join(out)


def _split_args(body: str, lineno: int) -> list[str]:
    parts = []
    depth_quote = False
    current = []
    for ch in body:
        if ch == '"':
            depth_quote = not depth_quote
            current.append(ch)
        elif ch == "," and not depth_quote:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if depth_quote:
        raise ConfigError(f"line {lineno}: unterminated string")
    parts.append("".join(current))
    return parts


def parse_scalar(text: str, lineno: int):
    text = text.strip()
    if not text:
        raise ConfigError(f"line {lineno}: empty value")
    if text.startswith('"'):
        if len(text) < 2 or not text.endswith('"') or '"' in text[1:-1]:
            raise ConfigError(f"line {lineno}: malformed string {text!r}")
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    if _INT.fullmatch(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        pass
    if _BARE.fullmatch(text):
        return text
    raise ConfigError(f"line {lineno}: cannot parse value {text!r}")


def _parse_call(name: str, body: str, lineno: int) -> CallExpr:
    kwargs = {}
    body = body.strip()
    if body:
        for chunk in _split_args(body, lineno):
            chunk = chunk.strip()
            if not chunk:
                raise ConfigError(f"line {lineno}: empty parameter in {name}(...)")
            if "=" not in chunk:
                raise ConfigError(
                    f"line {lineno}: parameter {chunk!r} must be key=value"
                )
            pkey, _, pval = chunk.partition("=")
            pkey = pkey.strip()
            if not _IDENT.fullmatch(pkey):
                raise ConfigError(f"line {lineno}: bad parameter name {pkey!r}")
            if pkey in kwargs:
                raise ConfigError(f"line {lineno}: duplicate parameter {pkey!r}")
            kwargs[pkey] = parse_scalar(pval, lineno)
    return CallExpr(name, kwargs, lineno)


def parse_value(text: str, lineno: int):
    text = text.strip()
    m = _IDENT.match(text)
    if m and text[m.end() :].lstrip().startswith("("):
        rest = text[m.end() :].lstrip()
        if not rest.endswith(")"):
            raise ConfigError(f"line {lineno}: unclosed call {text!r}")
        return _parse_call(m.group(0), rest[1:-1], lineno)
    return parse_scalar(text, lineno)


class ConfigDoc:
    """Ordered key/value entries from one config text."""

    def __init__(self, entries: list[tuple[str, object, int]]):
        self.entries = entries

    def keys(self) -> set[str]:
        return {key for key, _, _ in self.entries}

    def many(self, key: str) -> list:
        return [value for k, value, _ in self.entries if k == key]

    def single(self, key: str, default=_MISSING):
        found = [(value, line) for k, value, line in self.entries if k == key]
        if not found:
            if default is _MISSING:
                raise ConfigError(f"missing required key {key!r}")
            return default
        if len(found) > 1:
            raise ConfigError(
                f"key {key!r} given {len(found)} times (lines "
                f"{', '.join(str(line) for _, line in found)})"
            )
        return found[0][0]

    def check_known(self, allowed: set[str]) -> None:
        for key, _, line in self.entries:
            if key not in allowed:
                raise ConfigError(f"line {line}: unknown key {key!r}")


def parse_config(text: str) -> ConfigDoc:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, rest = line.partition("=")
        key = key.strip()
        if not _IDENT.fullmatch(key):
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        value_text = rest.strip()
        if not value_text:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        entries.append((key, parse_value(value_text, lineno), lineno))
    return ConfigDoc(entries)
