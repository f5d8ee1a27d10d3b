"""Shared helpers: stable seed derivation, canonical JSON, atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile


def stable_seed(base: int, *tags) -> int:
    """Derive a reproducible 63-bit child seed from a base seed and string tags.

    Hash-based so that unrelated pipeline stages never share RNG streams by
    accident, and independent of Python's per-process hash randomization.
    """
    key = "|".join([str(int(base))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def canonical_json(obj, pretty: bool = False) -> str:
    if pretty:
        return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(obj) -> str:
    """sha256 over the canonical JSON form of a config mapping."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str, obj, pretty: bool = True) -> None:
    atomic_write_text(path, canonical_json(obj, pretty=pretty))


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
