"""Serialization of run outputs: CSV tables, binary PGM rasters, JSON lines, manifests.

Floats are written with ``repr`` so repeated runs produce identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["csv_text", "jsonl_text", "manifest_text", "pgm_bytes", "stability_csv", "write_output"]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def jsonl_text(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary (P5) 8-bit graymap; row 0 of ``image`` is the top row."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    if img.dtype != np.uint8:
        if np.any((img < 0) | (img > 255)):
            raise ValueError("PGM pixel values must lie in 0..255")
        img = img.astype(np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def stability_csv(grid) -> str:
    rows = []
    for i, a in enumerate(grid.a_values):
        for j, q in enumerate(grid.q_values):
            rows.append((a, q, grid.trace[i, j], grid.mu[i, j], grid.classes[i, j].value))
    return csv_text(("a", "q_M", "trace", "mu", "class"), rows)


def stability_pgm(grid) -> bytes:
    """Raster with ``q_M`` along the horizontal axis and ``a`` increasing upwards."""
    return pgm_bytes(grid.class_codes()[::-1])


def manifest_text(subcommand: str, config: dict, outputs: Sequence[str], version: str) -> str:
    body = {"subcommand": subcommand, "config": config, "outputs": list(outputs), "version": version}
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def write_output(path: Path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
