"""Serialization helpers shared by every file-based artifact.

All JSON artifacts are written canonically (sorted keys, fixed separators,
trailing newline) so identical inputs always produce identical bytes, carry a
``format_version``, and embed a ``content_hash`` over the rest of the payload
for cross-artifact validation.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

from .errors import ValidationError

FORMAT_VERSION = 1


def canonical_json_bytes(payload: dict) -> bytes:
    return (
        json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        + "\n"
    ).encode("utf-8")


def content_hash(payload: dict) -> str:
    """Hash of a JSON payload, ignoring any embedded content_hash field."""
    stripped = {k: v for k, v in payload.items() if k != "content_hash"}
    return hashlib.sha256(canonical_json_bytes(stripped)).hexdigest()


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory plus rename.

    An interrupted run never leaves a partial file at the target path.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_artifact(payload: dict, path: str | Path) -> bytes:
    """Attach a content hash and atomically write canonical JSON."""
    payload = dict(payload)
    payload["content_hash"] = content_hash(payload)
    data = canonical_json_bytes(payload)
    atomic_write_bytes(path, data)
    return data


def load_artifact(path: str | Path, kind: str | None = None) -> dict:
    """Load a JSON artifact, verifying its content hash when present."""
    with open(path, "rb") as handle:
        payload = json.loads(handle.read().decode("utf-8"))
    if not isinstance(payload, dict):
        raise ValidationError(f"{path}: artifact is not a JSON object")
    stored = payload.get("content_hash")
    if stored is not None and stored != content_hash(payload):
        raise ValidationError(f"{path}: content hash mismatch (file corrupted or edited)")
    if kind is not None and payload.get("kind") not in (None, kind):
        raise ValidationError(f"{path}: expected a {kind} artifact, found {payload.get('kind')}")
    return payload


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
