"""Checksums and atomic file writes shared by the persistence formats."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import crc32c as _crc


def crc32c(data: bytes) -> int:
    return _crc.crc32c(data)


def with_crc(payload: bytes) -> bytes:
    return payload + struct.pack("<I", crc32c(payload))


def split_crc(blob: bytes) -> tuple[bytes, int, int]:
    """Return ``(payload, stored_crc, computed_crc)``."""
    payload = blob[:-4]
    (stored,) = struct.unpack("<I", blob[-4:])
    return payload, stored, crc32c(payload)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=False) + "\n")
