"""Self-describing array container used for model files, network checkpoints,
and pose libraries.

Binary layout: magic ``HKC1``, a little-endian uint32 header length, a JSON
header (metadata plus an array manifest of name/dtype/shape), then the raw
array payloads in manifest order.  Floats are stored as little-endian float32,
index arrays as little-endian int32.

The text variant (magic line ``HKCT1``) carries the same schema in printable
form so small test models can be versioned and inspected directly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_BIN_MAGIC = b"HKC1"
_TEXT_MAGIC = "HKCT1"

_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


class ContainerError(ValueError):
    """Raised when a container file is malformed."""


def _dtype_code(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "f4"
    if np.issubdtype(arr.dtype, np.integer):
        return "i4"
    raise ContainerError(f"unsupported array dtype {arr.dtype}")


def write_container(path, header: dict, arrays: dict[str, np.ndarray],
                    text: bool = False) -> None:
    """Write ``arrays`` with ``header`` metadata to ``path``.

    Array insertion order is preserved; header must be JSON-serializable.
    """
    path = Path(path)
    manifest = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        manifest.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        payloads.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]))

    full_header = dict(header)
    full_header["arrays"] = manifest

    if text:
        lines = [_TEXT_MAGIC, json.dumps(full_header, sort_keys=True)]
        for spec, arr in zip(manifest, payloads):
            lines.append(f"array {spec['name']}")
            flat = arr.reshape(-1)
            if spec["dtype"] == "i4":
                lines.append(" ".join(str(int(v)) for v in flat))
            else:
                lines.append(" ".join(format(float(v), ".9g") for v in flat))
        path.write_text("\n".join(lines) + "\n")
        return

    blob = bytearray()
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    blob += _BIN_MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for arr in payloads:
        blob += arr.tobytes()
    path.write_bytes(bytes(blob))


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container written by :func:`write_container` (either variant)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _BIN_MAGIC:
        return _read_binary(raw, path)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ContainerError(f"{path}: unrecognized container format") from exc
    if text.splitlines() and text.splitlines()[0].strip() == _TEXT_MAGIC:
        return _read_text(text, path)
    raise ContainerError(f"{path}: unrecognized container format")


def _read_binary(raw: bytes, path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    if len(raw) < 8:
        raise ContainerError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise ContainerError(f"{path}: truncated header")
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    offset = 8 + hlen
    arrays: dict[str, np.ndarray] = {}
    for spec in header.pop("arrays", []):
        dtype = _DTYPES[spec["dtype"]]
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise ContainerError(f"{path}: truncated array {spec['name']}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(shape).copy()
        offset += nbytes
    return header, arrays


def _read_text(text: str, path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    lines = text.splitlines()
    if len(lines) < 2:
        raise ContainerError(f"{path}: truncated text container")
    header = json.loads(lines[1])
    manifest = {spec["name"]: spec for spec in header.pop("arrays", [])}
    arrays: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if not line.startswith("array "):
            raise ContainerError(f"{path}: unexpected line {i}: {line!r}")
        name = line.split(None, 1)[1]
        if name not in manifest:
            raise ContainerError(f"{path}: array {name!r} missing from manifest")
        spec = manifest[name]
        dtype = _DTYPES[spec["dtype"]]
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = lines[i].split() if i < len(lines) else []
        i += 1
        if len(values) != count:
            raise ContainerError(
                f"{path}: array {name!r} has {len(values)} values, expected {count}")
        arr = np.array(values, dtype=dtype).reshape(shape)
        arrays[name] = arr
    missing = set(manifest) - set(arrays)
    if missing:
        raise ContainerError(f"{path}: arrays missing payload: {sorted(missing)}")
    return header, arrays
