"""Flat ``key=value`` text files used for specs, manifests, configs and tables."""

from __future__ import annotations

import os

from .errors import FormatError


class KV(dict):
    """Ordered key/value mapping that remembers where each key was defined."""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.offsets: dict[str, int] = {}
        self.path = None

    def require(self, key):
        if key not in self:
            raise FormatError(f"missing key {key!r}", offset=None, path=self.path)
        return self[key]

    def fail(self, key, message):
        raise FormatError(f"{key}: {message}", offset=self.offsets.get(key), path=self.path)


def parse_kv(text: str, path=None) -> KV:
    out = KV()
    out.path = path
    offset = 0
    for line in text.splitlines(keepends=True):
        here = offset
        offset += len(line.encode("utf-8"))
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, sep, value = s.partition("=")
        key = key.strip()
        if not sep or not key:
            raise FormatError(f"expected key=value, got {s!r}", offset=here, path=path)
        if key in out:
            raise FormatError(f"duplicate key {key!r}", offset=here, path=path)
        out[key] = value.strip()
        out.offsets[key] = here
    return out


def read_kv(path) -> KV:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read(), path=os.fspath(path))


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def dump_kv(items, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines += [f"{k}={format_value(v)}" for k, v in dict(items).items()]
    return "\n".join(lines) + "\n"


def write_kv(path, items, comments=()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_kv(items, comments))


def parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")
