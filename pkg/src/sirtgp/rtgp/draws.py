"""Posterior draws and their binary container."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._io import atomic_write_bytes
from ..eegdata import Standardizer
from ..errors import (BadMagicError, DimensionMismatchError, TruncatedPayloadError,
                      UnsupportedVersionError)
from ..kernel import KernelParams, KLBasis
from .config import LINKS, RtgpConfig

DRAWS_MAGIC = b"RTGP"
DRAWS_VERSION = 1
_HEADER = struct.Struct("<4sH5IBB")
_FLAG_INTERACTIONS = 1
_FLAG_STANDARDIZER = 2
_FLAG_KERNEL = 4


@dataclass(eq=False)
class PosteriorDraws:
    beta: np.ndarray  # D x K x T float32
    zeta: np.ndarray  # D x q float32
    gamma_beta: np.ndarray  # D x K x T bool
    gamma_zeta: np.ndarray  # D x q bool
    config: RtgpConfig
    basis: KLBasis
    standardizer: Standardizer | None = None
    omegas: np.ndarray | None = field(default=None, repr=False)
    loglik: np.ndarray | None = field(default=None, repr=False)

    @property
    def D(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @property
    def T(self) -> int:
        return self.beta.shape[2]

    @property
    def q(self) -> int:
        return self.zeta.shape[1]

    def beta_mean(self) -> np.ndarray:
        return self.beta.astype(np.float64).mean(axis=0)

    def zeta_mean(self) -> np.ndarray:
        return self.zeta.astype(np.float64).mean(axis=0)

    def equals(self, other: "PosteriorDraws") -> bool:
        return (
            np.array_equal(self.beta, other.beta)
            and np.array_equal(self.zeta, other.zeta)
            and np.array_equal(self.gamma_beta, other.gamma_beta)
            and np.array_equal(self.gamma_zeta, other.gamma_zeta)
            and self.config == other.config
        )


def posterior_inclusion(draws: PosteriorDraws) -> tuple[np.ndarray, np.ndarray]:
    """Share of draws in which each coefficient is switched on."""
    if draws.D < 1:
        raise ValueError("need at least one draw")
    return draws.gamma_beta.mean(axis=0), draws.gamma_zeta.mean(axis=0)


# --- binary container -------------------------------------------------------

def _pack_array(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.buf):
            raise TruncatedPayloadError("draws file ends early")
        out = self.buf[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def f8(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def draws_to_bytes(draws: PosteriorDraws) -> bytes:
    basis = draws.basis
    D, K, T, q, L = draws.D, draws.K, draws.T, draws.q, basis.L
    if basis.T != T:
        raise DimensionMismatchError("basis and draws disagree on T")
    flags = (_FLAG_INTERACTIONS if draws.config.use_interactions else 0)
    flags |= _FLAG_STANDARDIZER if draws.standardizer is not None else 0
    flags |= _FLAG_KERNEL if basis.params is not None else 0
    parts = [_HEADER.pack(DRAWS_MAGIC, DRAWS_VERSION, D, K, T, q, L,
                          LINKS.index(draws.config.link), flags)]
    parts += [_pack_array(basis.grid), _pack_array(basis.lambdas), _pack_array(basis.psi)]
    params = basis.params or KernelParams(0.0, 1.0)
    parts.append(struct.pack("<4d", basis.variance_fraction, params.alpha, params.rho, basis.threshold))
    if draws.standardizer is not None:
        st = draws.standardizer
        parts += [_pack_array(st.mean), _pack_array(st.scale), np.packbits(st.degenerate).tobytes()]
    cfg = json.dumps(draws.config.to_dict(), sort_keys=True).encode()
    parts += [struct.pack("<I", len(cfg)), cfg]
    beta = draws.beta.astype("<f4").reshape(D, K * T)
    zeta = draws.zeta.astype("<f4").reshape(D, q)
    bits = np.concatenate([draws.gamma_beta.reshape(D, -1), draws.gamma_zeta.reshape(D, -1)], axis=1)
    packed = np.packbits(bits, axis=1)
    for d in range(D):
        parts += [beta[d].tobytes(), zeta[d].tobytes(), packed[d].tobytes()]
    return b"".join(parts)


def draws_from_bytes(buf: bytes) -> PosteriorDraws:
    if len(buf) < 4 or buf[:4] != DRAWS_MAGIC:
        raise BadMagicError("not a posterior-draws file")
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError("header is incomplete")
    _, version, D, K, T, q, L, link, flags = _HEADER.unpack_from(buf)
    if version != DRAWS_VERSION:
        raise UnsupportedVersionError(f"draws version {version} is not supported")
    if link >= len(LINKS) or L > T or K == 0 or T == 0:
        raise DimensionMismatchError("inconsistent header")
    rd = _Reader(buf)
    rd.pos = _HEADER.size
    grid, lambdas = rd.f8(T), rd.f8(L)
    psi = rd.f8(T * L).reshape(T, L)
    vf, alpha, rho, threshold = struct.unpack("<4d", rd.take(32))
    params = KernelParams(alpha, rho) if flags & _FLAG_KERNEL else None
    basis = KLBasis(grid, lambdas, psi, vf, params, threshold)
    standardizer = None
    if flags & _FLAG_STANDARDIZER:
        p = K * T
        mean, scale = rd.f8(p), rd.f8(p)
        degenerate = np.unpackbits(np.frombuffer(rd.take((p + 7) // 8), np.uint8))[:p].astype(bool)
        standardizer = Standardizer(mean, scale, degenerate)
    (clen,) = struct.unpack("<I", rd.take(4))
    config = RtgpConfig.from_dict(json.loads(rd.take(clen).decode()))
    if config.link != LINKS[link] or config.n_draws != D:
        raise DimensionMismatchError("config echo disagrees with header")
    nbits = K * T + q
    frame = np.dtype([("beta", "<f4", (K * T,)), ("zeta", "<f4", (q,)),
                      ("bits", "u1", ((nbits + 7) // 8,))])
    body = buf[rd.pos:]
    if len(body) < D * frame.itemsize:
        raise TruncatedPayloadError(f"expected {D} frames")
    if len(body) > D * frame.itemsize:
        raise DimensionMismatchError("trailing bytes after the last frame")
    rec = np.frombuffer(body, dtype=frame, count=D)
    bits = np.unpackbits(rec["bits"], axis=1)[:, :nbits].astype(bool)
    return PosteriorDraws(
        rec["beta"].reshape(D, K, T).astype(np.float32),
        rec["zeta"].reshape(D, q).astype(np.float32),
        bits[:, :K * T].reshape(D, K, T),
        bits[:, K * T:],
        config, basis, standardizer,
    )


def save_draws(draws: PosteriorDraws, path) -> None:
    atomic_write_bytes(Path(path), draws_to_bytes(draws))


def load_draws(path) -> PosteriorDraws:
    return draws_from_bytes(Path(path).read_bytes())
