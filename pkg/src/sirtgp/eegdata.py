"""Flash-indexed multichannel EEG sessions, interaction features and design assembly.

A session holds every flash of one subject and phase. Signals are stored as
``float32`` so that the binary container round trip is exact. Channel and
time indices are 0-based in the Python API; the flash coordinates ``r``, ``s``
and ``j`` keep their natural 1-based numbering because they are part of the
container format.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._io import atomic_write_bytes, write_csv
from .errors import (
    BadMagicError,
    DegenerateSignalWarning,
    DimensionMismatchError,
    InvalidInputError,
    StructuralError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

CORRELATION_CLAMP = 1.0 - 1e-6

SESSION_MAGIC = b"EEGS"
SESSION_VERSION = 1
_HEADER = struct.Struct("<4sH6Iddd")

DEFAULT_SYMBOLS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ123456789_"


@dataclass(frozen=True)
class SpellerLayout:
    """Row-major symbol matrix. Stimuli ``1..rows`` flash rows, the rest flash columns."""

    rows: int = 6
    cols: int = 6
    chars: str = DEFAULT_SYMBOLS

    def __post_init__(self):
        if self.rows * self.cols != len(self.chars):
            raise InvalidInputError(
                f"layout {self.rows}x{self.cols} needs {self.rows * self.cols} symbols, got {len(self.chars)}"
            )
        if len(set(self.chars)) != len(self.chars):
            raise InvalidInputError("layout symbols must be unique")

    @property
    def n_stimuli(self) -> int:
        return self.rows + self.cols

    def cell(self, symbol: str) -> tuple[int, int]:
        """1-based (row, col) of ``symbol``."""
        idx = self.chars.find(symbol)
        if idx < 0:
            raise InvalidInputError(f"symbol {symbol!r} not in layout")
        return idx // self.cols + 1, idx % self.cols + 1

    def symbol(self, row: int, col: int) -> str:
        if not (1 <= row <= self.rows and 1 <= col <= self.cols):
            raise InvalidInputError(f"cell ({row}, {col}) outside layout")
        return self.chars[(row - 1) * self.cols + (col - 1)]

    def target_stimuli(self, symbol: str) -> tuple[int, int]:
        """Stimulus indices ``(j_row, j_col)`` that contain ``symbol``."""
        row, col = self.cell(symbol)
        return row, self.rows + col

    def is_row_stimulus(self, j: int) -> bool:
        return 1 <= j <= self.rows


class FlashRecord(NamedTuple):
    r: int
    s: int
    j: int
    y: int  # -1 when unknown
    X: np.ndarray  # K x T
    z: np.ndarray  # q


def n_pairs(K: int) -> int:
    return K * (K - 1) // 2


def channel_pairs(K: int) -> list[tuple[int, int]]:
    """0-based channel pairs ``(k1, k2)``, ``k1 < k2``, in lexicographic order."""
    return list(combinations(range(K), 2))


def pair_index(k1: int, k2: int, K: int) -> int:
    """Position of the 0-based pair ``(k1, k2)`` in :func:`channel_pairs` order."""
    if not (0 <= k1 < k2 < K):
        raise InvalidInputError(f"need 0 <= k1 < k2 < K, got ({k1}, {k2}) with K={K}")
    return k1 * K - k1 * (k1 + 1) // 2 + (k2 - k1 - 1)


def fisher_z(c):
    """Fisher z-transform ``atanh(c)`` after clamping ``|c|`` to ``1 - 1e-6``.

    Works elementwise on arrays; scalars in give a float back.
    """
    arr = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("fisher_z needs finite correlations")
    out = np.arctanh(np.clip(arr, -CORRELATION_CLAMP, CORRELATION_CLAMP))
    return float(out) if out.ndim == 0 else out


def interaction_matrix(signals: np.ndarray) -> np.ndarray:
    """Fisher-z interaction features for a batch of flashes.

    ``signals`` has shape ``(n, K, T)``; the result has shape ``(n, q)`` with
    pairs in :func:`channel_pairs` order. Pairs involving a zero-variance
    channel are set to 0 and a :class:`DegenerateSignalWarning` is issued.
    """
    x = np.asarray(signals, dtype=np.float64)
    if x.ndim != 3:
        raise StructuralError(f"expected (n, K, T) signals, got shape {x.shape}")
    n, K, T = x.shape
    if K < 2 or T < 3:
        raise InvalidInputError(f"interactions need K >= 2 and T >= 3, got K={K}, T={T}")
    centered = x - x.mean(axis=2, keepdims=True)
    norms = np.sqrt(np.einsum("nkt,nkt->nk", centered, centered))
    flat = norms <= 1e-12 * np.maximum(np.abs(x).max(axis=2), 1.0)
    safe = np.where(flat, 1.0, norms)
    unit = centered / safe[:, :, None]
    corr = np.einsum("nat,nbt->nab", unit, unit)
    k1, k2 = np.triu_indices(K, k=1)
    c = corr[:, k1, k2]
    degenerate = flat[:, k1] | flat[:, k2]
    z = fisher_z(np.where(degenerate, 0.0, c))
    z = np.atleast_2d(z)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} channel-pair features involve zero-variance channels; set to 0",
            DegenerateSignalWarning,
            stacklevel=2,
        )
    return z


def compute_interactions(X: np.ndarray) -> np.ndarray:
    """Interaction vector (length ``K(K-1)/2``) of a single ``K x T`` flash."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise StructuralError(f"expected a K x T matrix, got shape {X.shape}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        z = interaction_matrix(X[None])[0]
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    return z


@dataclass(eq=False)
class SessionData:
    """All flashes of one subject and phase.

    ``signals`` is ``(n, K, T)`` float32 in microvolts; ``y`` is int8 with
    ``-1`` for unknown labels.
    """

    signals: np.ndarray
    r: np.ndarray
    s: np.ndarray
    j: np.ndarray
    y: np.ndarray
    R: int
    S: int
    sample_rate: float = 512.0
    flash_timing: tuple[float, float] = (125.0, 62.5)
    channel_names: list[str] = field(default_factory=list)
    layout: SpellerLayout = field(default_factory=SpellerLayout)

    def __post_init__(self):
        self.signals = np.ascontiguousarray(self.signals, dtype=np.float32)
        self.r = np.asarray(self.r, dtype=np.int64)
        self.s = np.asarray(self.s, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int8)
        if not self.channel_names:
            self.channel_names = [f"Ch{k + 1}" for k in range(self.K)]
        self.validate()

    @property
    def n(self) -> int:
        return self.signals.shape[0]

    @property
    def K(self) -> int:
        return self.signals.shape[1]

    @property
    def T(self) -> int:
        return self.signals.shape[2]

    @property
    def J(self) -> int:
        return self.layout.n_stimuli

    @property
    def p(self) -> int:
        return self.K * self.T

    @property
    def q(self) -> int:
        return n_pairs(self.K)

    @property
    def labeled(self) -> bool:
        return bool(np.all((self.y == 0) | (self.y == 1)))

    @cached_property
    def interactions(self) -> np.ndarray:
        """``(n, q)`` Fisher-z interaction features (computed once)."""
        return interaction_matrix(self.signals)

    def flash(self, i: int) -> FlashRecord:
        return FlashRecord(
            int(self.r[i]), int(self.s[i]), int(self.j[i]), int(self.y[i]),
            self.signals[i], self.interactions[i],
        )

    def validate(self) -> None:
        n = self.n
        if self.signals.ndim != 3:
            raise StructuralError(f"signals must be (n, K, T), got {self.signals.shape}")
        for name in ("r", "s", "j", "y"):
            if getattr(self, name).shape != (n,):
                raise StructuralError(f"{name} must have length n={n}")
        if len(self.channel_names) != self.K:
            raise StructuralError(f"{len(self.channel_names)} channel names for K={self.K}")
        if n != self.R * self.S * self.J:
            raise StructuralError(f"n={n} but R*S*J={self.R * self.S * self.J}")
        if (self.r.min(initial=1) < 1 or self.r.max(initial=1) > self.R
                or self.s.min(initial=1) < 1 or self.s.max(initial=1) > self.S
                or self.j.min(initial=1) < 1 or self.j.max(initial=1) > self.J):
            raise StructuralError("flash coordinates outside 1..R, 1..S, 1..J")
        if not np.all((self.y >= -1) & (self.y <= 1)):
            raise StructuralError("labels must be 0, 1 or -1 (unknown)")
        counts = np.zeros((self.R, self.S, self.J), dtype=np.int64)
        np.add.at(counts, (self.r - 1, self.s - 1, self.j - 1), 1)
        if not np.all(counts == 1):
            raise StructuralError("every (r, s) sequence must contain each stimulus exactly once")
        if self.labeled:
            self._check_label_structure()

    def _check_label_structure(self) -> None:
        grid = self.label_grid()
        rows = self.layout.rows
        if not np.all(grid.sum(axis=2) == 2):
            raise StructuralError("labeled sequences need exactly 2 targets")
        if not np.all(grid[:, :, :rows].sum(axis=2) == 1):
            raise StructuralError("labeled sequences need one row target and one column target")
        if not np.all(grid == grid[:, :1, :]):
            raise StructuralError("targets must be constant across the sequences of a character")

    def label_grid(self) -> np.ndarray:
        """Labels arranged as ``(R, S, J)``."""
        grid = np.full((self.R, self.S, self.J), -1, dtype=np.int8)
        grid[self.r - 1, self.s - 1, self.j - 1] = self.y
        return grid

    def flash_index(self) -> np.ndarray:
        """``(R, S, J)`` array mapping flash coordinates to row index in ``signals``."""
        idx = np.empty((self.R, self.S, self.J), dtype=np.int64)
        idx[self.r - 1, self.s - 1, self.j - 1] = np.arange(self.n)
        return idx

    def target_cells(self) -> list[tuple[int, int]]:
        """1-based (row, col) of each character's target, from the labels."""
        if not self.labeled:
            raise StructuralError("target cells need a labeled session")
        grid = self.label_grid()[:, 0, :]
        rows = self.layout.rows
        return [
            (int(np.argmax(g[:rows])) + 1, int(np.argmax(g[rows:])) + 1) for g in grid
        ]

    def target_text(self) -> str:
        return "".join(self.layout.symbol(rw, cl) for rw, cl in self.target_cells())

    def unlabeled(self) -> "SessionData":
        """Copy with every label set to unknown."""
        return SessionData(
            self.signals, self.r, self.s, self.j, np.full(self.n, -1, dtype=np.int8),
            self.R, self.S, self.sample_rate, self.flash_timing, list(self.channel_names), self.layout,
        )

    def equals(self, other: "SessionData") -> bool:
        return (
            self.R == other.R and self.S == other.S
            and self.sample_rate == other.sample_rate
            and tuple(self.flash_timing) == tuple(other.flash_timing)
            and self.channel_names == other.channel_names
            and self.layout == other.layout
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in ("r", "s", "j", "y"))
            and np.array_equal(self.signals, other.signals)
        )


@dataclass(frozen=True)
class Standardizer:
    """Column-wise z-scoring fitted on calibration data.

    Zero-variance columns are flagged in ``degenerate`` and mapped to 0.
    """

    mean: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray

    @classmethod
    def fit(cls, Xraw: np.ndarray) -> "Standardizer":
        Xraw = np.asarray(Xraw, dtype=np.float64)
        mean = Xraw.mean(axis=0)
        sd = Xraw.std(axis=0)
        degenerate = ~(sd > 1e-12 * np.maximum(np.abs(mean), 1.0))
        if degenerate.any():
            warnings.warn(
                f"{int(degenerate.sum())} constant design columns zeroed",
                DegenerateSignalWarning,
                stacklevel=2,
            )
        return cls(mean, np.where(degenerate, 1.0, sd), degenerate)

    def transform(self, Xraw: np.ndarray) -> np.ndarray:
        Xraw = np.asarray(Xraw, dtype=np.float64)
        if Xraw.shape[-1] != self.mean.shape[0]:
            raise StructuralError(f"design has {Xraw.shape[-1]} columns, standardizer {self.mean.shape[0]}")
        out = (Xraw - self.mean) / self.scale
        out[..., self.degenerate] = 0.0
        return out

    def inverse(self, Xstd: np.ndarray) -> np.ndarray:
        return np.asarray(Xstd) * self.scale + self.mean


class Design(NamedTuple):
    X: np.ndarray  # n x p, standardized, channel-major
    Z: np.ndarray  # n x q
    y: np.ndarray  # n, int8 (may be -1 for unlabeled sessions)
    standardizer: Standardizer


def assemble_design(
    session: SessionData,
    standardizer: Standardizer | None = None,
    require_labels: bool = True,
) -> Design:
    """Flatten signals channel-major and standardize them.

    Pass the calibration ``standardizer`` when assembling test data. The
    ``1/p`` and ``1/q`` rescaling is left to the linear predictor.
    """
    if require_labels and not session.labeled:
        raise StructuralError("design assembly needs a labeled session")
    Xraw = session.signals.reshape(session.n, session.p).astype(np.float64)
    if standardizer is None:
        standardizer = Standardizer.fit(Xraw)
    X = standardizer.transform(Xraw)
    return Design(X, session.interactions, session.y.copy(), standardizer)


# --- binary container -------------------------------------------------------

def _flash_dtype(K: int, T: int) -> np.dtype:
    return np.dtype([("r", "<u2"), ("s", "<u2"), ("j", "<u2"), ("y", "i1"), ("X", "<f4", (K, T))])


def session_to_bytes(session: SessionData) -> bytes:
    K, T, n = session.K, session.T, session.n
    display_ms, pause_ms = session.flash_timing
    parts = [_HEADER.pack(SESSION_MAGIC, SESSION_VERSION, K, T, session.R, session.S, session.J, n,
                          float(session.sample_rate), float(display_ms), float(pause_ms))]
    for name in session.channel_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    blocks = np.zeros(n, dtype=_flash_dtype(K, T))
    blocks["r"], blocks["s"], blocks["j"], blocks["y"] = session.r, session.s, session.j, session.y
    blocks["X"] = session.signals
    parts.append(blocks.tobytes())
    return b"".join(parts)


def session_from_bytes(buf: bytes, layout: SpellerLayout | None = None) -> SessionData:
    if len(buf) < _HEADER.size:
        if buf[:4] != SESSION_MAGIC[: len(buf[:4])]:
            raise BadMagicError("not a session container")
        raise TruncatedPayloadError("header truncated")
    magic, version, K, T, R, S, J, n, rate, display_ms, pause_ms = _HEADER.unpack_from(buf, 0)
    if magic != SESSION_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != SESSION_VERSION:
        raise UnsupportedVersionError(f"container version {version} not supported (expected {SESSION_VERSION})")
    layout = layout or SpellerLayout()
    if J != layout.n_stimuli or n != R * S * J or K < 1 or T < 1:
        raise DimensionMismatchError(f"header dims inconsistent: K={K} T={T} R={R} S={S} J={J} n={n}")
    offset = _HEADER.size
    names = []
    for _ in range(K):
        if offset + 2 > len(buf):
            raise TruncatedPayloadError("channel-name table truncated")
        (length,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        if offset + length > len(buf):
            raise TruncatedPayloadError("channel-name table truncated")
        names.append(buf[offset: offset + length].decode("utf-8"))
        offset += length
    dtype = _flash_dtype(K, T)
    available = len(buf) - offset
    if available < n * dtype.itemsize:
        raise TruncatedPayloadError(
            f"header declares {n} flash blocks, payload holds {available // dtype.itemsize}"
        )
    if available > n * dtype.itemsize:
        raise DimensionMismatchError(f"{available - n * dtype.itemsize} trailing bytes after flash blocks")
    blocks = np.frombuffer(buf, dtype=dtype, count=n, offset=offset)
    try:
        return SessionData(
            blocks["X"].copy(), blocks["r"].astype(np.int64), blocks["s"].astype(np.int64),
            blocks["j"].astype(np.int64), blocks["y"].copy(), R, S, rate,
            (display_ms, pause_ms), names, layout,
        )
    except StructuralError as exc:
        raise DimensionMismatchError(str(exc)) from exc


def save_session(session: SessionData, path) -> None:
    atomic_write_bytes(path, session_to_bytes(session))


def load_session(path, layout: SpellerLayout | None = None) -> SessionData:
    return session_from_bytes(Path(path).read_bytes(), layout)


def export_interactions_csv(session: SessionData, path) -> None:
    """One row per flash: r, s, j, y and the q Fisher-z features."""
    pairs = channel_pairs(session.K)
    header = ["r", "s", "j", "y"] + [f"z_{a + 1}_{b + 1}" for a, b in pairs]
    Z = session.interactions
    rows = (
        [int(session.r[i]), int(session.s[i]), int(session.j[i]), int(session.y[i]), *map(float, Z[i])]
        for i in range(session.n)
    )
    write_csv(path, header, rows)
