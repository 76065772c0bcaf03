"""Seed derivation and content hashing shared by every stage."""

from __future__ import annotations

import hashlib
import zlib
from pathlib import Path

import numpy as np


def derive_seed(master: int, *keys) -> int:
    """Derive a child seed from ``master`` and a path of string/int keys.

    The mapping is stable across processes and platforms (no use of
    ``hash()``), so a run is fully determined by its master seed.
    """
    spawn_key = tuple(zlib.crc32(str(k).encode()) for k in keys)
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=spawn_key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_arrays(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
