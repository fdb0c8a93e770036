"""Single-file checkpoint container.

Layout: one JSON header line (UTF-8, ends with ``\n``) followed by the raw
parameter payload. The header describes every parameter name with dtype,
shape, byte offset into the payload, and its ``shared_handle`` if the
storage is shared. Shared storage is written exactly once; every alias
points at the same offset, so a checkpoint cannot even represent diverged
copies of a tied weight.

All values are little-endian. The model configuration travels inside the
header so a checkpoint is self-describing.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import ParameterStore, Tensor

FORMAT_NAME = "kvseq-checkpoint"
FORMAT_VERSION = 1


def _le_bytes(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr)
    if a.dtype.byteorder == ">":
        a = a.astype(a.dtype.newbyteorder("<"))
    return a.tobytes()


def save_checkpoint(path, store: ParameterStore, config: dict) -> None:
    """Write all parameters plus the model config to ``path``."""
    entries = []
    blobs: list[bytes] = []
    offset_of: dict[int, int] = {}
    cursor = 0
    for p in store.parameters():
        key = id(p.tensor)
        if key not in offset_of:
            raw = _le_bytes(p.tensor.data)
            offset_of[key] = cursor
            blobs.append(raw)
            cursor += len(raw)
        entries.append({
            "name": p.name,
            "dtype": str(p.tensor.data.dtype),
            "shape": list(p.tensor.shape),
            "offset": offset_of[key],
            "shared_handle": p.shared_handle,
        })
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": config,
        "params": entries,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        for b in blobs:
            f.write(b)


def _read_raw(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON: {e}") from e
    if header.get("format") != FORMAT_NAME:
        raise FormatError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r}")
    return header, data[nl + 1:]


def _entry_nbytes(entry: dict) -> int:
    return np.dtype(entry["dtype"]).itemsize * math.prod(entry["shape"]) if entry["shape"] else np.dtype(entry["dtype"]).itemsize


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    """Rebuild a ParameterStore (aliases restored) and the stored config."""
    header, payload = _read_raw(path)
    store = ParameterStore()
    by_offset: dict[int, Tensor] = {}
    handle_offsets: dict[str, int] = {}
    for e in header["params"]:
        off = int(e["offset"])
        handle = e.get("shared_handle")
        if handle is not None:
            prev = handle_offsets.setdefault(handle, off)
            if prev != off:
                raise FormatError(
                    f"{path}: parameters under shared handle {handle!r} point at different storage"
                )
        if off in by_offset:
            tensor = by_offset[off]
            if tuple(e["shape"]) != tensor.shape or str(tensor.data.dtype) != e["dtype"]:
                raise FormatError(f"{path}: aliased entries at offset {off} disagree on dtype/shape")
        else:
            dtype = np.dtype(e["dtype"])
            shape = tuple(int(s) for s in e["shape"])
            nbytes = _entry_nbytes(e)
            if off < 0 or off + nbytes > len(payload):
                raise FormatError(f"{path}: parameter {e['name']!r} payload out of bounds")
            arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)) if shape else 1,
                                offset=off).reshape(shape).copy()
            tensor = Tensor(arr, requires_grad=True)
            by_offset[off] = tensor
        store.register(e["name"], tensor, shared_handle=handle)
    return store, header["config"]


def read_config(path) -> dict:
    header, _ = _read_raw(path)
    return header["config"]


def param_bytes(path, name: str) -> bytes:
    """Raw payload bytes of one named parameter."""
    header, payload = _read_raw(path)
    for e in header["params"]:
        if e["name"] == name:
            off = int(e["offset"])
            return payload[off:off + _entry_nbytes(e)]
    raise FormatError(f"{path}: no parameter named {name!r}")


def param_names(path) -> list[str]:
    header, _ = _read_raw(path)
    return [e["name"] for e in header["params"]]


def changed_params(path_a, path_b) -> list[str]:
    """Names whose bytes differ between two checkpoints of the same model."""
    ha, pa = _read_raw(path_a)
    hb, pb = _read_raw(path_b)
    ea = {e["name"]: e for e in ha["params"]}
    eb = {e["name"]: e for e in hb["params"]}
    if set(ea) != set(eb):
        raise FormatError("checkpoints describe different parameter sets")
    out = []
    for name in ea:
        a, b = ea[name], eb[name]
        ba = pa[a["offset"]:a["offset"] + _entry_nbytes(a)]
        bb = pb[b["offset"]:b["offset"] + _entry_nbytes(b)]
        if ba != bb:
            out.append(name)
    return sorted(out)


def checkpoint_hash(path) -> str:
    """Content hash of the whole file; used to key derived-representation caches."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
