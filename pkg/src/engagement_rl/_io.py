"""Atomic file output, number formatting and seed derivation."""

from __future__ import annotations

import hashlib
import os
import tempfile

import numpy as np


def fmt(x) -> str:
    """17 significant digits: enough to round-trip any float64."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def derive_seed(master: int, *parts) -> int:
    """Stable 64-bit stream seed from the master seed and a record identity."""
    key = "|".join([str(int(master))] + [_canon(p) for p in parts])
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def _canon(p) -> str:
    if isinstance(p, float):
        return fmt(p)
    if isinstance(p, (tuple, list)):
        return "(" + ",".join(_canon(q) for q in p) + ")"
    return str(p)


def rng_for(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))
