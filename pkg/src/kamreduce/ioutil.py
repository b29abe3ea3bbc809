"""Deterministic file output helpers shared by the experiment drivers.

All tabular output uses '.' decimals and 17 significant digits so that
reruns with the same seed are byte-identical and round-trip exactly
through float64.  Files are written to a temporary sibling and renamed
into place, so readers never observe a partial file.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Sequence


def fmt(x) -> str:
    """Format a value for CSV output (floats at 17 significant digits)."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.17g}"
    if isinstance(x, complex):
        return f"{x.real:.17g}{x.imag:+.17g}j"
    return str(x)


def atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(x) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
