"""Length-prefixed binary record files.

Every dataset-like artifact uses the same container: an 8-byte magic, a
record count, then per record a JSON header followed by float64 arrays with
explicit shapes.  Little-endian throughout; JSON keys sorted — a file's bytes
are a pure function of its contents.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation
from .motion import Condition, SpatialControl, TaskCondition


def _u32(value: int) -> bytes:
    return np.uint32(value).astype("<u4").tobytes()


def write_records(path, magic: bytes,
                  records: Sequence[tuple[dict, Sequence[np.ndarray]]]) -> None:
    if len(magic) != 8:
        raise ContractViolation("magic must be 8 bytes")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_u32(len(records)))
        for header, arrays in records:
            blob = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode()
            fh.write(_u32(len(blob)))
            fh.write(blob)
            fh.write(_u32(len(arrays)))
            for arr in arrays:
                arr = np.asarray(arr, dtype=np.float64)
                fh.write(_u32(arr.ndim))
                for dim in arr.shape:
                    fh.write(_u32(dim))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_records(path, magic: bytes) -> list[tuple[dict, list[np.ndarray]]]:
    with open(path, "rb") as fh:
        if fh.read(8) != magic:
            raise ContractViolation(f"{path}: wrong container magic")

        def u32() -> int:
            raw = fh.read(4)
            if len(raw) != 4:
                raise ContractViolation(f"{path}: truncated container")
            return int(np.frombuffer(raw, dtype="<u4")[0])

        out = []
        for _ in range(u32()):
            header = json.loads(fh.read(u32()).decode())
            arrays = []
            for _ in range(u32()):
                shape = tuple(u32() for _ in range(u32()))
                n = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * n), dtype="<f8")
                if data.size != n:
                    raise ContractViolation(f"{path}: truncated array")
                arrays.append(data.reshape(shape).astype(np.float64))
            out.append((header, arrays))
        return out


# -- condition <-> record fragments --------------------------------------------------


def condition_fields(cond: Condition) -> tuple[dict, list[np.ndarray]]:
    """Header fragment plus the spatial arrays (if any) for one condition."""
    header = {"family": cond.task.family, "param": cond.task.param,
              "spatial": cond.has_spatial}
    arrays = [cond.spatial.targets, cond.spatial.mask] if cond.has_spatial else []
    return header, arrays


def condition_from_fields(header: dict,
                          arrays: Sequence[np.ndarray]) -> Condition:
    task = TaskCondition(header["family"], header["param"])
    spatial = SpatialControl(arrays[0], arrays[1]) if header["spatial"] else None
    return Condition(task, spatial)
