"""Versioned JSON parameter checkpoints.

Format (stable across releases): a JSON object with

* ``format_version``: integer, currently 1;
* ``params``: mapping of parameter name to ``{"shape": [...], "data": [...]}``
  with row-major float64 values;
* ``extra``: arbitrary JSON the caller wants carried along (config, vocab).

Floats round-trip exactly through JSON (shortest-repr serialization), so a
save/load cycle is bit-exact.
"""

from __future__ import annotations

from ..errors import ValidationError
from ..util import atomic_write_json, read_json
from .params import ParamStore

FORMAT_VERSION = 1


def save_checkpoint(path: str, store: ParamStore, extra: dict | None = None) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "params": store.state_dict(),
        "extra": extra or {},
    }
    atomic_write_json(path, payload, pretty=False)


def load_checkpoint(path: str) -> tuple[dict, dict]:
    """Return (state_dict, extra). The caller loads the state into its store."""
    payload = read_json(path)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint format_version {version!r}")
    return payload["params"], payload.get("extra", {})
