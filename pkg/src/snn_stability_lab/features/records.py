"""
Result files.

Every file is written atomically (temporary file in the target directory, then
``os.replace``). Floats are written with 17 significant digits so that values
read back are bit-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import IO, TYPE_CHECKING, Any, Iterable, Iterator, Sequence

import numpy as np

from ..exceptions import ShapeError
from ..main.activation import certify_bounds
from ..main.data import Dataset
from ..main.model import ModelState

if TYPE_CHECKING:
    from ..main.optim import StepScalars

__all__ = (
    "atomic_write",
    "format_float",
    "write_csv",
    "read_csv",
    "write_json",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_trajectory_csv",
    "save_state",
    "load_state",
    "STATE_MAGIC",
)

STATE_MAGIC = b"SNNW"
_STATE_VERSION = 1
_STATE_HEADER = struct.Struct("<4sHII8s")
_TRAJECTORY_HEADER = ("step", "empirical_risk", "grad_norm", "dist_to_init")


@contextmanager
def atomic_write(path: str | os.PathLike, mode: str = "w") -> Iterator[IO]:
    """yields a temporary file next to `path` that replaces `path` on success"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": "", "encoding": "utf-8"})) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def format_float(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return "%.17g" % value
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    with atomic_write(path) as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) for v in row])


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    """header and rows as strings"""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, [])
        return header, [row for row in reader if row]


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path: str | os.PathLike, obj: Any):
    with atomic_write(path) as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def write_dataset_csv(path: str | os.PathLike, S: Dataset):
    """columns ``x_0..x_{d-1},y``"""
    header = [f"x_{k}" for k in range(S.d)] + ["y"]
    write_csv(path, header, (list(x) + [y] for x, y in zip(S.X, S.y)))


def read_dataset_csv(path: str | os.PathLike, c_x: float, c_y: float) -> Dataset:
    """
    :raises ShapeError: header is not ``x_0..x_{d-1},y`` or a row has the wrong length
    :raises DataBoundError: an example violates the bounds
    """
    header, rows = read_csv(path)
    d = len(header) - 1
    if d < 1 or header != [f"x_{k}" for k in range(d)] + ["y"]:
        raise ShapeError(f"{path}: expected header x_0..x_{{d-1}},y, got {header}")
    for lineno, row in enumerate(rows, 2):
        if len(row) != d + 1:
            raise ShapeError(f"{path}:{lineno}: expected {d + 1} columns, got {len(row)}")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), d + 1)
    return Dataset(data[:, :d], data[:, d], c_x, c_y)


def write_trajectory_csv(path: str | os.PathLike, scalars: StepScalars):
    write_csv(path, _TRAJECTORY_HEADER, scalars.rows())


def save_state(path: str | os.PathLike, state: ModelState):
    """binary: header (magic, version, d, m, activation kind), then W, W_0 and mu as little-endian f8"""
    kind = state.activation.kind.encode("ascii")
    with atomic_write(path, "wb") as f:
        f.write(_STATE_HEADER.pack(STATE_MAGIC, _STATE_VERSION, state.d, state.m, kind))
        for a in (state.weights, state.init_weights, state.signs):
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_state(path: str | os.PathLike) -> ModelState:
    """
    :raises ShapeError: not a state file, unknown version or truncated
    """
    data = Path(path).read_bytes()
    if len(data) < _STATE_HEADER.size:
        raise ShapeError(f"{path}: truncated state file")
    magic, version, d, m, kind = _STATE_HEADER.unpack_from(data)
    if magic != STATE_MAGIC or version != _STATE_VERSION:
        raise ShapeError(f"{path}: not a state file (magic={magic!r}, version={version})")
    expected = _STATE_HEADER.size + 8 * (2 * d * m + m)
    if len(data) != expected:
        raise ShapeError(f"{path}: expected {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=_STATE_HEADER.size)
    weights = body[:d * m].reshape(d, m)
    init_weights = body[d * m:2 * d * m].reshape(d, m)
    signs = body[2 * d * m:]
    return ModelState(weights, init_weights, signs, certify_bounds(kind.rstrip(b"\0").decode("ascii")))
