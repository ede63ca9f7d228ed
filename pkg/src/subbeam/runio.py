"""Deterministic run-directory output helpers.

Every experiment writes its artifacts under one directory with a manifest
echoing the resolved configuration. Outputs must be byte-identical across
re-runs with the same config and seed, so writers use repr-based float
formatting, sorted JSON keys, and no timestamps.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = ["fmt", "write_csv", "write_json", "write_pgm", "RunDir"]


def fmt(value) -> str:
    """Shortest round-trip text for floats; plain str for the rest."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_pgm(path, matrix: np.ndarray) -> None:
    """8-bit binary PGM; values scaled so min -> 0 and max -> 255."""
    m = np.asarray(matrix, dtype=float)
    lo, hi = float(np.min(m)), float(np.max(m))
    if hi - lo < 1e-30:
        scaled = np.zeros_like(m, dtype=np.uint8)
    else:
        scaled = np.round(255.0 * (m - lo) / (hi - lo)).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        f.write(scaled.tobytes())


class RunDir:
    """Collects output files for one experiment run and writes a manifest."""

    def __init__(self, path):
        self.path = str(path)
        os.makedirs(self.path, exist_ok=True)
        self._files: list[str] = []

    def file(self, name: str) -> str:
        self._files.append(name)
        return os.path.join(self.path, name)

    def finish(self, command: str, config: dict) -> str:
        manifest = {
            "command": command,
            "config": config,
            "outputs": sorted(self._files),
        }
        path = os.path.join(self.path, "manifest.json")
        write_json(path, manifest)
        return path
