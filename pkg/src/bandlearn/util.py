"""Small shared helpers: seed derivation, atomic file writes, hashing."""

import hashlib
import json
import os
import tempfile

import numpy as np


def derive_seed(seed: int, tag: str) -> int:
    """Stable child seed for (seed, tag); independent streams per purpose tag."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, tag))


def spawn_rng(rng: np.random.Generator) -> np.random.Generator:
    """Child generator seeded from the parent stream (order-dependent, deterministic)."""
    return np.random.default_rng(int(rng.integers(0, 2**63)))


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via temp file + rename so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, fixed separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
