"""Time-series container, block Hankel matrices and file formats.

Hankel matrices are indexed so that column ``j`` of the past block ``U_p``
stacks ``u(j), ..., u(j+k-1)`` and column ``j`` of the future block ``U_f``
stacks ``u(k+j), ..., u(2k+j-1)``. With ``N_t`` samples the largest valid
column count is ``N = N_t - 2k + 1``.

The stacked data matrix is ``H = [U_f; U_p; Y_p; Y_f]`` (``W_p`` is the
middle pair), with ``2k(m+p)`` rows.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, InsufficientDataError, ParseError

MAGIC = b"FRSID1"
_HEADER = struct.Struct("<6sQQQ")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeriesData:
    """Recorded inputs ``u`` (m x N_t) and outputs ``y`` (p x N_t).

    Arrays are copied to read-only float64 storage on construction.
    """

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64, ndmin=2)
        y = np.array(self.y, dtype=np.float64, ndmin=2)
        if u.ndim != 2 or y.ndim != 2:
            raise InputError("u and y must be 2-D (channels x samples)")
        if u.size == 0:
            u = np.zeros((0, y.shape[1]))
        if u.shape[1] != y.shape[1]:
            raise InputError(f"u has {u.shape[1]} samples but y has {y.shape[1]}")
        if y.shape[1] < 1:
            raise InputError("need at least one sample")
        if y.shape[0] < 1:
            raise InputError("need at least one output channel")
        if not (np.isfinite(u).all() and np.isfinite(y).all()):
            raise InputError("samples must be finite")
        object.__setattr__(self, "u", _readonly(u))
        object.__setattr__(self, "y", _readonly(y))

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[0]

    @property
    def n_samples(self) -> int:
        return self.y.shape[1]

    def scaled(self, c: float) -> "TimeSeriesData":
        return TimeSeriesData(c * self.u, c * self.y)


def hankel_columns(n_samples: int, k: int) -> int:
    """Column count ``N = N_t - 2k + 1`` of the Hankel blocks."""
    return n_samples - 2 * k + 1


def check_horizon(ts: TimeSeriesData, k: int) -> int:
    if k < 1:
        raise ConfigError(f"horizon k must be positive, got {k}")
    N = hankel_columns(ts.n_samples, k)
    if N < 1:
        raise InsufficientDataError(
            f"horizon k={k} needs at least N_t={2 * k} samples, got {ts.n_samples}"
        )
    return N


def _hankel_rows(x: np.ndarray, k: int, start: int, a: int, b: int, out: np.ndarray) -> None:
    # Block row r holds x(start + r + j) for columns j in [a, b).
    ch = x.shape[0]
    for r in range(k):
        out[r * ch:(r + 1) * ch] = x[:, start + r + a:start + r + b]


@dataclass(frozen=True)
class HankelSet:
    """Materialized block Hankel matrices for horizon ``k``."""

    k: int
    N: int
    Up: np.ndarray
    Uf: np.ndarray
    Yp: np.ndarray
    Yf: np.ndarray

    @property
    def Wp(self) -> np.ndarray:
        return np.vstack([self.Up, self.Yp])

    @property
    def H(self) -> np.ndarray:
        return np.vstack([self.Uf, self.Up, self.Yp, self.Yf])


def build_hankel(ts: TimeSeriesData, k: int, scale: float = 1.0) -> HankelSet:
    """Build all four Hankel blocks.

    Parameters
    ----------
    ts : TimeSeriesData
    k : int
        Prediction horizon (block rows per matrix).
    scale : float
        Multiplies every block; pass ``1/sqrt(N)`` for the normalized
        convention.
    """
    N = check_horizon(ts, k)
    Up, Uf, Yp, Yf = hankel_block(ts, k, BlockPartition(1, N), 0)
    if scale != 1.0:
        for X in (Up, Uf, Yp, Yf):
            X *= scale
    return HankelSet(k, N, Up, Uf, Yp, Yf)


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous split of ``N`` columns into ``d`` blocks.

    Every block has ``N // d`` columns except the last, which also takes the
    remainder. Blocks are indexed from 0.
    """

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"block count d must be >= 1, got {self.d}")
        if self.N < self.d:
            raise ConfigError(f"cannot split {self.N} columns into {self.d} blocks")

    @property
    def width(self) -> int:
        """Nominal block width ``N_d``."""
        return self.N // self.d

    def bounds(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.d:
            raise IndexError(f"block index {i} outside [0, {self.d})")
        a = i * self.width
        b = self.N if i == self.d - 1 else a + self.width
        return a, b

    def widths(self) -> list[int]:
        return [b - a for a, b in map(self.bounds, range(self.d))]


def hankel_block(ts: TimeSeriesData, k: int, part: BlockPartition, i: int):
    """Columns of block ``i`` of ``(U_p, U_f, Y_p, Y_f)``, freshly allocated."""
    a, b = part.bounds(i)
    w = b - a
    m, p = ts.m, ts.p
    Up = np.empty((k * m, w))
    Uf = np.empty((k * m, w))
    Yp = np.empty((k * p, w))
    Yf = np.empty((k * p, w))
    _hankel_rows(ts.u, k, 0, a, b, Up)
    _hankel_rows(ts.u, k, k, a, b, Uf)
    _hankel_rows(ts.y, k, 0, a, b, Yp)
    _hankel_rows(ts.y, k, k, a, b, Yf)
    return Up, Uf, Yp, Yf


def hankel_stack(ts: TimeSeriesData, k: int, a: int, b: int, scale: float = 1.0) -> np.ndarray:
    """Columns ``a:b`` of the stacked ``H = [U_f; U_p; Y_p; Y_f]``."""
    m, p = ts.m, ts.p
    km, kp = k * m, k * p
    H = np.empty((2 * (km + kp), b - a))
    _hankel_rows(ts.u, k, k, a, b, H[:km])
    _hankel_rows(ts.u, k, 0, a, b, H[km:2 * km])
    _hankel_rows(ts.y, k, 0, a, b, H[2 * km:2 * km + kp])
    _hankel_rows(ts.y, k, k, a, b, H[2 * km + kp:])
    if scale != 1.0:
        H *= scale
    return H


def past_stack(ts: TimeSeriesData, k: int, a: int, b: int, scale: float = 1.0) -> np.ndarray:
    """Columns ``a:b`` of ``W_p = [U_p; Y_p]``."""
    km = k * ts.m
    W = np.empty((k * (ts.m + ts.p), b - a))
    _hankel_rows(ts.u, k, 0, a, b, W[:km])
    _hankel_rows(ts.y, k, 0, a, b, W[km:])
    if scale != 1.0:
        W *= scale
    return W


# ---------------------------------------------------------------- file formats


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ConfigError(f"unknown data format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def save_timeseries(ts: TimeSeriesData, path, fmt: str | None = None) -> None:
    """Write ``ts`` as CSV (17 significant digits) or in the binary container."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        header = [f"u{i + 1}" for i in range(ts.m)] + [f"y{i + 1}" for i in range(ts.p)]
        data = np.vstack([ts.u, ts.y]).T
        np.savetxt(path, data, delimiter=",", fmt="%.17g", header=",".join(header), comments="")
    else:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, ts.m, ts.p, ts.n_samples))
            fh.write(np.ascontiguousarray(ts.u.T, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ts.y.T, dtype="<f8").tobytes())


def load_timeseries(path, fmt: str | None = None) -> TimeSeriesData:
    """Read a CSV or binary time-series file.

    The format is inferred from the extension (``.csv`` or anything else for
    binary) unless given explicitly.

    Raises
    ------
    ParseError
        On a malformed header, a non-numeric cell, a ragged row or a
        truncated binary payload.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    return _load_csv(path) if fmt == "csv" else _load_binary(path)


def _parse_header(cells: list[str]) -> tuple[int, int]:
    names = [c.strip() for c in cells]
    m = 0
    while m < len(names) and names[m] == f"u{m + 1}":
        m += 1
    p = len(names) - m
    if p < 1 or names[m:] != [f"y{i + 1}" for i in range(p)]:
        raise ParseError(f"header must read u1..um,y1..yp, got {','.join(names)!r}", line=1)
    return m, p


def _load_csv(path: Path) -> TimeSeriesData:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        m, p = _parse_header(header)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != m + p:
                raise ParseError(f"expected {m + p} cells, found {len(row)}", line=line)
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ParseError(f"non-numeric cell {bad!r}", line=line) from None
    if not rows:
        raise ParseError("no data rows", line=2)
    data = np.array(rows).T
    if not np.isfinite(data).all():
        raise ParseError("non-finite sample in file")
    return TimeSeriesData(data[:m], data[m:])


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _load_binary(path: Path) -> TimeSeriesData:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(
            f"header needs {_HEADER.size} bytes, file has {len(raw)}", offset=len(raw)
        )
    magic, m, p, nt = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    expected = _HEADER.size + 8 * (m + p) * nt
    if len(raw) != expected:
        raise ParseError(
            f"payload size mismatch: expected {expected} bytes, got {len(raw)}",
            offset=min(len(raw), expected),
        )
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    u = vals[: m * nt].reshape(nt, m).T
    y = vals[m * nt:].reshape(nt, p).T
    try:
        return TimeSeriesData(u, y)
    except InputError as exc:
        raise ParseError(str(exc)) from None
