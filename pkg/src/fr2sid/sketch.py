"""Streaming Gaussian compression of the block Hankel data matrix.

The compressed matrix is ``Hbar = (H H^T)^q H C`` with ``C`` an ``N x N_c``
Gaussian matrix, ``N_c = 2k(m+p) + l``. It is accumulated in one pass over
contiguous column blocks of ``H``; neither ``H`` nor ``C`` is ever formed
in full.

Three flavours of the ``q = 1`` power step are available through
``SketchConfig.power``:

``"block"`` (default)
    ``sum_i (H_i H_i^T) H_i C_i`` over the ``d`` column blocks.
``"global"``
    ``(H H^T) H C``, obtained by co-accumulating ``S = sum_i H_i H_i^T`` and
    ``G = sum_i H_i C_i`` and returning ``S G``.
``"separate"``
    ``(X X^T) X C`` for each of ``U_f, U_p, Y_p, Y_f`` on its own. Kept for
    comparison only: it scales the rows of each matrix differently, which
    breaks the joint row relations the identification relies on.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .datamodel import BlockPartition, TimeSeriesData, check_horizon, hankel_stack
from .errors import ConfigError, ParseError
from .matops import as_finite
from .metrics import IOCounter

POWER_MODES = ("block", "global", "separate")
TILE_ROWS = 2048
_CHUNK_WORDS = 1 << 25
_CKPT_MAGIC = b"FRSIDK"


@dataclass(frozen=True)
class SketchConfig:
    """Parameters of the streaming compression.

    Attributes
    ----------
    k : int
        Horizon (block rows of each Hankel matrix).
    l : int
        Oversampling; ``N_c = 2k(m+p) + l``.
    q : int
        Power exponent, 0 or 1.
    d : int
        Number of column blocks streamed.
    seed : int
        Seed of the Gaussian source, ``0 <= seed < 2**64``.
    power : str
        How the ``q = 1`` step is grouped, see the module docstring.
    scale_hankel : bool
        Multiply ``H`` by ``1/sqrt(N)`` before compressing.
    """

    k: int
    l: int = 5
    q: int = 0
    d: int = 10
    seed: int = 0
    power: str = "block"
    scale_hankel: bool = False

    def n_c(self, m: int, p: int) -> int:
        return 2 * self.k * (m + p) + self.l

    def validate(self, m: int, p: int, N: int) -> int:
        """Check the configuration against data dimensions and return ``N_c``."""
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.l < 1:
            raise ConfigError(f"oversampling l must be positive, got {self.l}")
        if self.q not in (0, 1):
            raise ConfigError(f"q must be 0 or 1, got {self.q}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must lie in [0, 2**64)")
        if self.power not in POWER_MODES:
            raise ConfigError(f"power must be one of {POWER_MODES}, got {self.power!r}")
        n_c = self.n_c(m, p)
        if n_c > N:
            raise ConfigError(f"N_c = {n_c} exceeds the column count N = {N}; compression would expand")
        if self.d > N:
            raise ConfigError(f"d = {self.d} exceeds the column count N = {N}")
        return n_c


class GaussianSketchSource:
    """Reproducible rows of ``C`` with i.i.d. ``N(0, 1/N_c)`` entries.

    Rows are produced in fixed tiles of :data:`TILE_ROWS`; tile ``t`` comes
    from its own SFC64 stream seeded with ``SeedSequence([seed, t])``. Any
    row range is therefore the same no matter how the columns of ``H`` are
    split into blocks, and tiles can be generated in any order.
    """

    def __init__(self, seed: int, n_c: int, tile_rows: int = TILE_ROWS):
        self.seed = int(seed)
        self.n_c = int(n_c)
        self.tile_rows = int(tile_rows)
        self._cache: tuple[int, np.ndarray] | None = None

    def _tile(self, t: int) -> np.ndarray:
        if self._cache is None or self._cache[0] != t:
            rng = np.random.Generator(np.random.SFC64(np.random.SeedSequence([self.seed, t])))
            self._cache = (t, rng.standard_normal((self.tile_rows, self.n_c)))
        return self._cache[1]

    def standard_rows(self, a: int, b: int) -> np.ndarray:
        """Rows ``a:b`` of ``sqrt(N_c) * C`` (unit-variance entries)."""
        out = np.empty((b - a, self.n_c))
        T = self.tile_rows
        r = a
        while r < b:
            t, off = divmod(r, T)
            take = min(T - off, b - r)
            out[r - a:r - a + take] = self._tile(t)[off:off + take]
            r += take
        return out

    def rows(self, a: int, b: int) -> np.ndarray:
        """Rows ``a:b`` of ``C``."""
        return self.standard_rows(a, b) / np.sqrt(self.n_c)


@dataclass(frozen=True)
class SketchedData:
    """Compressed data matrix ``Hbar = [Uf; Up; Yp; Yf]`` (bars implied).

    Attributes
    ----------
    Hbar : ndarray, shape (2k(m+p), N_c)
    N : int
        Column count of the uncompressed ``H``.
    m, p : int
    config : SketchConfig
    data_scale : float
        Factor applied to ``H`` before compression (``1/sqrt(N)`` or 1).
    """

    Hbar: np.ndarray
    N: int
    m: int
    p: int
    config: SketchConfig
    data_scale: float = 1.0

    @property
    def n_c(self) -> int:
        return self.Hbar.shape[1]

    @property
    def k(self) -> int:
        return self.config.k

    def _rows(self, which: str) -> slice:
        km, kp = self.k * self.m, self.k * self.p
        return {
            "Uf": slice(0, km), "Up": slice(km, 2 * km),
            "Yp": slice(2 * km, 2 * km + kp), "Yf": slice(2 * km + kp, 2 * (km + kp)),
            "Wp": slice(km, 2 * km + kp),
        }[which]

    @property
    def Uf(self) -> np.ndarray:
        return self.Hbar[self._rows("Uf")]

    @property
    def Up(self) -> np.ndarray:
        return self.Hbar[self._rows("Up")]

    @property
    def Yp(self) -> np.ndarray:
        return self.Hbar[self._rows("Yp")]

    @property
    def Yf(self) -> np.ndarray:
        return self.Hbar[self._rows("Yf")]

    @property
    def Wp(self) -> np.ndarray:
        return self.Hbar[self._rows("Wp")]

    @property
    def block_width(self) -> int:
        """Column count whose Gram enters the power step (``N/d`` or ``N``)."""
        if self.config.q == 0:
            return self.N
        return self.N // self.config.d if self.config.power == "block" else self.N


# --------------------------------------------------------------------- kernel


class _Accumulator:
    """Running sums ``G = sum H_i C_i`` and (for q = 1) the Gram term."""

    def __init__(self, rows: int, n_c: int, q: int, power: str):
        self.q, self.power = q, power
        self.G = np.zeros((rows, n_c))
        self.S = np.zeros((rows, rows)) if q and power != "block" else None

    def add_block(self, get_cols, a: int, b: int, src: GaussianSketchSource,
                  counter: IOCounter | None) -> None:
        rows = self.G.shape[0]
        chunk = max(1, _CHUNK_WORDS // (rows + src.n_c))
        P = np.zeros_like(self.G)
        Si = np.zeros((rows, rows)) if self.q else None
        for c0 in range(a, b, chunk):
            c1 = min(b, c0 + chunk)
            Hc = get_cols(c0, c1)
            Cc = src.standard_rows(c0, c1)
            P += Hc @ Cc
            if Si is not None:
                Si += Hc @ Hc.T
            if counter is not None:
                counter.read((self.q + 1) * Hc.size + Cc.size, messages=0)
        if counter is not None:
            counter.read(0, messages=self.q + 2)
            counter.blocks_read += 1
        if self.q and self.power == "block":
            self.G += Si @ P
        else:
            self.G += P
            if Si is not None:
                self.S += Si

    def result(self, n_c: int, splits: list[int]) -> np.ndarray:
        if self.S is None:
            H = self.G
        elif self.power == "global":
            H = self.S @ self.G
        else:
            H = np.empty_like(self.G)
            for lo, hi in zip(splits[:-1], splits[1:]):
                H[lo:hi] = self.S[lo:hi, lo:hi] @ self.G[lo:hi]
        return H / np.sqrt(n_c)


def _stream(get_cols, part: BlockPartition, acc: _Accumulator, src: GaussianSketchSource,
            counter, start: int = 0, after_block: Callable[[int], None] | None = None) -> None:
    for i in range(start, part.d):
        a, b = part.bounds(i)
        acc.add_block(get_cols, a, b, src, counter)
        if after_block is not None:
            after_block(i)


def sketch_stream(ts: TimeSeriesData, cfg: SketchConfig, counter: IOCounter | None = None,
                  checkpoint=None, on_block: Callable[[int], None] | None = None) -> SketchedData:
    """Compress the Hankel matrix of ``ts`` in one pass over ``cfg.d`` blocks.

    Parameters
    ----------
    ts : TimeSeriesData
    cfg : SketchConfig
    counter : IOCounter, optional
        Charged with every word of ``H`` and ``C`` read and of ``Hbar``
        written.
    checkpoint : path-like, optional
        File holding the running sums. It is rewritten after every block and
        a compatible existing file is resumed from, so an interrupted pass
        can continue in a new process.
    on_block : callable, optional
        Called with the block index after each block has been folded in.

    Returns
    -------
    SketchedData
    """
    N = check_horizon(ts, cfg.k)
    m, p = ts.m, ts.p
    n_c = cfg.validate(m, p, N)
    part = BlockPartition(cfg.d, N)
    rows = 2 * cfg.k * (m + p)
    scale = 1.0 / np.sqrt(N) if cfg.scale_hankel else 1.0
    src = GaussianSketchSource(cfg.seed, n_c)
    acc = _Accumulator(rows, n_c, cfg.q, cfg.power)

    start = 0
    meta = None
    if checkpoint is not None:
        checkpoint = Path(checkpoint)
        meta = {"config": asdict(cfg), "m": m, "p": p, "N": N, "data": _fingerprint(ts)}
        if checkpoint.exists():
            start = _load_checkpoint(checkpoint, meta, acc)

    def after(i):
        if checkpoint is not None:
            _save_checkpoint(checkpoint, meta, i + 1, acc)
        if on_block is not None:
            on_block(i)

    _stream(lambda a, b: hankel_stack(ts, cfg.k, a, b, scale), part, acc, src, counter, start, after)
    km, kp = cfg.k * m, cfg.k * p
    Hbar = acc.result(n_c, [0, km, 2 * km, 2 * km + kp, rows])
    if counter is not None:
        counter.write(Hbar.size)
    return SketchedData(Hbar, N, m, p, cfg, scale)


def sketch_matrix(M, n_c: int, q: int = 0, seed: int = 0, power: str = "global",
                  d: int = 1, counter: IOCounter | None = None) -> np.ndarray:
    """Range-preserving sketch ``(M M^T)^q M C`` of an arbitrary matrix.

    ``C`` has i.i.d. ``N(0, 1/n_c)`` entries drawn from the same source as
    :func:`sketch_stream`. Columns are streamed in ``d`` blocks; with
    ``power="block"`` the power step is applied per block.

    Raises
    ------
    ConfigError
        If ``n_c >= M.shape[1]``.
    """
    M = as_finite(M, "sketch input")
    rows, cols = M.shape
    if n_c >= cols:
        raise ConfigError(f"N_c = {n_c} must be smaller than the column count {cols}")
    if n_c < 1:
        raise ConfigError("N_c must be positive")
    if q not in (0, 1):
        raise ConfigError(f"q must be 0 or 1, got {q}")
    if power not in ("block", "global"):
        raise ConfigError(f"power must be 'block' or 'global', got {power!r}")
    part = BlockPartition(d, cols)
    src = GaussianSketchSource(seed, n_c)
    acc = _Accumulator(rows, n_c, q, power)
    _stream(lambda a, b: M[:, a:b], part, acc, src, counter)
    out = acc.result(n_c, [0, rows])
    if counter is not None:
        counter.write(out.size)
    return out


# ----------------------------------------------------------------- checkpoint


def _fingerprint(ts: TimeSeriesData) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(ts.u).tobytes())
    h.update(np.ascontiguousarray(ts.y).tobytes())
    return h.hexdigest()


def _save_checkpoint(path: Path, meta: dict, next_block: int, acc: _Accumulator) -> None:
    doc = json.dumps({**meta, "next_block": next_block}).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(doc)))
        fh.write(doc)
        for X in (acc.G, acc.S):
            if X is not None:
                fh.write(np.asfortranarray(X).astype("<f8").tobytes(order="F"))
    os.replace(tmp, path)


def _load_checkpoint(path: Path, meta: dict, acc: _Accumulator) -> int:
    raw = path.read_bytes()
    if raw[:6] != _CKPT_MAGIC or len(raw) < 14:
        raise ParseError(f"{path} is not a sketch checkpoint", offset=0)
    (n,) = struct.unpack_from("<Q", raw, 6)
    try:
        doc = json.loads(raw[14:14 + n])
    except json.JSONDecodeError:
        raise ParseError("corrupt checkpoint header", offset=14) from None
    next_block = doc.pop("next_block", None)
    if doc != json.loads(json.dumps(meta)) or not isinstance(next_block, int):
        raise ConfigError(f"checkpoint {path} was written for different data or settings")
    off = 14 + n
    for X in (acc.G, acc.S):
        if X is None:
            continue
        size = 8 * X.size
        if len(raw) < off + size:
            raise ParseError(f"checkpoint truncated: expected {off + size} bytes, got {len(raw)}", offset=len(raw))
        X[...] = np.frombuffer(raw, dtype="<f8", count=X.size, offset=off).reshape(X.shape, order="F")
        off += size
    return next_block

