"""Self-describing checkpoint container.

Layout::

    b"FAIRPPO-CKPT\\x00v1"        magic + version (16 bytes)
    uint32 little-endian            header length in bytes
    header                          UTF-8 JSON: metadata, architectures, tensor list
    payload                         row-major little-endian float32 tensors, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .network import Architecture, ParameterSet

MAGIC = b"FAIRPPO-CKPT\x00v1"


def save(path, networks: dict[str, tuple[Architecture, ParameterSet]], metadata: dict | None = None) -> Path:
    """Write ``{name: (architecture, params)}`` to ``path``."""
    tensors, blobs = [], []
    for net_name, (arch, params) in networks.items():
        params.check_shapes(arch)
        for k, v in params.items():
            tensors.append({"network": net_name, "name": k, "shape": list(v.shape)})
            blobs.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    header = {
        "format": "fairppo-checkpoint",
        "version": 1,
        "metadata": metadata or {},
        "architectures": {n: a.to_dict() for n, (a, _) in networks.items()},
        "tensors": tensors,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh) -> dict:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError("not a fairppo checkpoint (bad magic)")
    (n,) = struct.unpack("<I", fh.read(4))
    return json.loads(fh.read(n).decode("utf-8"))


def load(path, expected: dict[str, Architecture] | None = None) -> tuple[dict[str, tuple[Architecture, ParameterSet]], dict]:
    """Read a checkpoint; ``expected`` architectures must match exactly."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc.strerror}") from exc
    with fh:
        header = _read_header(fh)
        archs = {n: Architecture.from_dict(d) for n, d in header["architectures"].items()}
        if expected is not None:
            if set(expected) != set(archs):
                raise CheckpointError(f"checkpoint networks {sorted(archs)} != expected {sorted(expected)}")
            for n, a in expected.items():
                if archs[n] != a:
                    raise CheckpointError(f"architecture mismatch for {n!r}: {archs[n]} != {a}")
        nets = {n: ParameterSet() for n in archs}
        for t in header["tensors"]:
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise CheckpointError("truncated payload")
            nets[t["network"]][t["name"]] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(t["shape"])
    out = {}
    for n, a in archs.items():
        nets[n].check_shapes(a)
        out[n] = (a, nets[n])
    return out, header.get("metadata", {})
