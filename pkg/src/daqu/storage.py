"""Binary container for checkpoints and dense indexes.

Layout: magic ``DAQU``, format version (u32 LE), length-prefixed JSON header
(u32 LE byte length, then UTF-8 canonical JSON), then for every matrix listed
in the header its dims as two u32 LE followed by float32 LE row-major data.
Headers carry all configs and digests so stages can refuse mismatched
artifacts before doing any work.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DAQU"
FORMAT_VERSION = 1


class ArtifactError(ValueError):
    """A container that cannot be read as written."""


class VersionMismatchError(ArtifactError):
    """Format version or config digest differs from what the stage expects."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(obj) -> str:
    """Stable hex digest of any JSON-serializable config fragment."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_container(path: str | Path, header: dict, matrices: dict[str, np.ndarray]) -> None:
    """Write header + named float32 matrices; fails if names disagree."""
    names = [m["name"] for m in header.get("matrices", [])]
    if sorted(names) != sorted(matrices):
        raise ArtifactError("header matrix list does not match the matrices given")
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    payload = canonical_json(header).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for name in names:
            mat = np.ascontiguousarray(matrices[name], dtype=np.float32)
            if mat.ndim != 2:
                raise ArtifactError(f"matrix {name!r} must be 2-D")
            rows, cols = mat.shape
            fh.write(struct.pack("<II", rows, cols))
            fh.write(mat.astype("<f4", copy=False).tobytes(order="C"))


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back; matrices come out as float32 arrays."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ArtifactError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}"
        )
    (hlen,) = struct.unpack_from("<I", data, 8)
    header_bytes = data[12 : 12 + hlen]
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: bad header ({exc})") from exc
    offset = 12 + hlen
    matrices: dict[str, np.ndarray] = {}
    for entry in header.get("matrices", []):
        rows, cols = struct.unpack_from("<II", data, offset)
        offset += 8
        if (rows, cols) != (entry["rows"], entry["cols"]):
            raise ArtifactError(
                f"{path}: matrix {entry['name']!r} dims {(rows, cols)} differ from header"
            )
        count = rows * cols
        mat = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(rows, cols)
        offset += 4 * count
        matrices[entry["name"]] = np.array(mat, dtype=np.float32)
    if offset != len(data):
        raise ArtifactError(f"{path}: {len(data) - offset} trailing bytes")
    return header, matrices


def matrix_entries(matrices: dict[str, np.ndarray]) -> list[dict]:
    """Header entries for a matrix dict, in sorted-name order."""
    return [
        {"name": name, "rows": int(matrices[name].shape[0]), "cols": int(matrices[name].shape[1])}
        for name in sorted(matrices)
    ]
