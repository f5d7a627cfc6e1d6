"""Flat ``key = value`` text files.

Grammar (one record per line)::

    line    := blank | comment | record
    comment := '#' <anything>
    record  := key '=' value
    key     := [A-Za-z_][A-Za-z0-9_.]*
    value   := item (',' item)*
    item    := integer | real | complex | word
    complex := real ('+' | '-') real 'i'      e.g. 1.5e-05-2.25e-06i

Reals are written with ``repr`` so a write/read cycle is exact.  Arrays are
comma-separated and flattened row-major; their shape, when not implied by
other keys, is stored under ``<key>.shape``.
"""

from __future__ import annotations

import re

import numpy as np

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def format_real(v: float) -> str:
    return repr(float(v))


def format_complex(z: complex) -> str:
    z = complex(z)
    im = repr(float(z.imag))
    if not im.startswith("-"):
        im = "+" + im
    return f"{float(z.real)!r}{im}i"


def format_value(value) -> str:
    arr = np.asarray(value)
    if arr.dtype.kind in "US":
        return ", ".join(str(v) for v in arr.ravel())
    if arr.dtype.kind == "c":
        return ", ".join(format_complex(v) for v in arr.ravel())
    if arr.dtype.kind in "iub":
        return ", ".join(str(int(v)) for v in arr.ravel())
    return ", ".join(format_real(v) for v in arr.ravel())


def parse_item(text: str):
    t = text.strip()
    if t.endswith("i"):
        try:
            return complex(t[:-1] + "j")
        except ValueError:
            pass
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_value(text: str):
    items = [parse_item(p) for p in text.split(",")] if text.strip() else []
    if len(items) == 1:
        return items[0]
    return items


def dumps(records: dict) -> str:
    lines = []
    for key, value in records.items():
        if not _KEY.match(key):
            raise ValueError(f"invalid key {key!r}")
        lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not _KEY.match(key):
            raise ValueError(f"line {lineno}: invalid key {key!r}")
        out[key] = parse_value(value)
    return out


def write(path, records: dict, header: str | None = None) -> None:
    text = dumps(records)
    if header:
        text = "".join(f"# {h}\n" for h in header.splitlines()) + text
    with open(path, "w") as fh:
        fh.write(text)


def read(path) -> dict:
    with open(path) as fh:
        return loads(fh.read())


def as_array(value, dtype=float) -> np.ndarray:
    if isinstance(value, list):
        return np.asarray(value, dtype=dtype)
    return np.asarray([value], dtype=dtype)
