"""Binary checkpoint container.

Layout (little-endian throughout):

    magic 'CMCK' | format u32
    descriptor: u32 length + UTF-8 JSON  (self-describing architecture)
    u32 record count, then per record:
        u32 name length + name | u32 ndim | u32 x ndim dims | f32 data
    u8 optimizer flag; when set:
        u64 step | f64 lr | f64 beta1 | f64 beta2 | f64 eps
        u32 entry count, then per entry:
            u32 name length + name | three records (m, v, vmax) as above
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CMCK"
FORMAT_VERSION = 1


def _write_array(fh, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
    fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_array(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", fh.read(4))
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float32)


def write_checkpoint(path, descriptor: dict, arrays: dict[str, np.ndarray],
                     optimizer_state: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(arrays)))
        for name in arrays:
            _write_array(fh, name, arrays[name])
        if optimizer_state is None:
            fh.write(struct.pack("<B", 0))
            return
        fh.write(struct.pack("<B", 1))
        fh.write(struct.pack("<Q", optimizer_state["step"]))
        fh.write(struct.pack("<4d", optimizer_state["lr"], optimizer_state["beta1"],
                             optimizer_state["beta2"], optimizer_state["eps"]))
        moments = optimizer_state["moments"]
        fh.write(struct.pack("<I", len(moments)))
        for name, (m, v, vmax) in moments.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            for arr in (m, v, vmax):
                _write_array(fh, "", arr)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict | None]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {version}")
        (desc_len,) = struct.unpack("<I", fh.read(4))
        descriptor = json.loads(fh.read(desc_len).decode("utf-8"))
        (n_records,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(n_records):
            name, data = _read_array(fh)
            arrays[name] = data
        (has_opt,) = struct.unpack("<B", fh.read(1))
        optimizer_state = None
        if has_opt:
            (step,) = struct.unpack("<Q", fh.read(8))
            lr, beta1, beta2, eps = struct.unpack("<4d", fh.read(32))
            (n_entries,) = struct.unpack("<I", fh.read(4))
            moments = {}
            for _ in range(n_entries):
                (name_len,) = struct.unpack("<I", fh.read(4))
                name = fh.read(name_len).decode("utf-8")
                m = _read_array(fh)[1]
                v = _read_array(fh)[1]
                vmax = _read_array(fh)[1]
                moments[name] = (m, v, vmax)
            optimizer_state = {"step": step, "lr": lr, "beta1": beta1,
                               "beta2": beta2, "eps": eps, "moments": moments}
    return descriptor, arrays, optimizer_state
