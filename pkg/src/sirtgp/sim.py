"""Synthetic P300 speller sessions with condition-dependent spatial noise.

Signals follow ``X = a1 Y + a0 (1 - Y) + e1 Y + e0 (1 - Y) + e`` where the
spatial noise ``e1``/``e0`` is drawn per flash and time point from
``N(0, tau2 Sigma1)``/``N(0, tau2 Sigma0)`` and ``e`` is white with variance
``sigma2``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from .eegdata import SessionData, SpellerLayout
from .errors import GenerationError, InvalidInputError

SIGMA1 = np.array([
    [1.0, 0.7, 0.1, 0.1, 0.1, 0.2],
    [0.7, 1.0, 0.1, 0.1, 0.6, 0.1],
    [0.1, 0.1, 1.0, 0.7, 0.1, 0.1],
    [0.1, 0.1, 0.7, 1.0, 0.1, 0.1],
    [0.1, 0.6, 0.1, 0.1, 1.0, 0.4],
    [0.2, 0.1, 0.1, 0.1, 0.4, 1.0],
])

SIGMA0 = np.array([
    [1.0, 0.1, 0.1, 0.5, 0.1, 0.8],
    [0.1, 1.0, 0.1, 0.1, 0.3, 0.1],
    [0.1, 0.1, 1.0, 0.1, 0.1, 0.1],
    [0.5, 0.1, 0.1, 1.0, 0.1, 0.1],
    [0.1, 0.3, 0.1, 0.1, 1.0, 0.3],
    [0.8, 0.1, 0.1, 0.1, 0.3, 1.0],
])

BASELINE = {"alpha": 2.5, "tau2": 9.0, "sigma2": 20.0}


def _as_tuple_matrix(m) -> tuple:
    return tuple(tuple(float(v) for v in row) for row in np.asarray(m))


@dataclass(frozen=True)
class SimConfig:
    alpha: float = 2.5
    tau2: float = 9.0
    sigma2: float = 20.0
    K: int = 6
    T: int = 50
    S: int = 5
    text: str = "THE_QUICK_BROWN_FOX"
    Sigma1: tuple = field(default=_as_tuple_matrix(SIGMA1))
    Sigma0: tuple = field(default=_as_tuple_matrix(SIGMA0))
    amplitude: float = 1.0
    width: float = 0.08
    centers: tuple = (0.35, 0.40, 0.45, 0.50)
    support_halfwidth: float = 2.0  # in units of ``width``
    seed: int = 0

    @property
    def R(self) -> int:
        return len(self.text)

    @property
    def J(self) -> int:
        return 12

    def validate(self) -> None:
        if self.T < 20:
            raise InvalidInputError("templates need T >= 20")
        if self.S < 1 or self.R < 1:
            raise InvalidInputError("need at least one character and one sequence")
        if self.tau2 < 0 or self.sigma2 < 0 or self.alpha < 0:
            raise InvalidInputError("alpha, tau2 and sigma2 must be non-negative")
        if len(self.centers) > self.K:
            raise InvalidInputError("more template centers than channels")
        for name in ("Sigma1", "Sigma0"):
            check_correlation(np.asarray(getattr(self, name), dtype=float), self.K, name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Sigma1"] = [list(r) for r in self.Sigma1]
        d["Sigma0"] = [list(r) for r in self.Sigma0]
        d["centers"] = list(self.centers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown simulation keys: {sorted(unknown)}")
        d = dict(d)
        for name in ("Sigma1", "Sigma0"):
            if name in d:
                d[name] = _as_tuple_matrix(d[name])
        if "centers" in d:
            d["centers"] = tuple(float(c) for c in d["centers"])
        return cls(**d)

    def fingerprint(self) -> int:
        """Stable 64-bit digest of the generative parameters (seed excluded)."""
        d = self.to_dict()
        d.pop("seed")
        digest = hashlib.sha256(json.dumps(d, sort_keys=True).encode()).digest()
        return int.from_bytes(digest[:8], "little")


def check_correlation(m: np.ndarray, K: int, name: str = "matrix") -> None:
    if m.shape != (K, K):
        raise GenerationError(f"{name} must be {K}x{K}")
    if not np.allclose(m, m.T, atol=0.0) or not np.allclose(np.diag(m), 1.0, atol=0.0):
        raise GenerationError(f"{name} must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(m).min() <= 0:
        raise GenerationError(f"{name} is not positive definite")


class EvokedTemplates(NamedTuple):
    a1: np.ndarray  # K x T target means
    a0: np.ndarray  # K x T nontarget means

    def support(self) -> np.ndarray:
        """True support mask: points where the class means differ."""
        return (np.abs(self.a1 - self.a0) > 0).astype(np.int8)


def make_templates(config: SimConfig) -> EvokedTemplates:
    """Gaussian bumps on the first ``len(centers)`` channels; remaining channels are null.

    Each bump is truncated to ``support_halfwidth * width`` around its center
    so that the signal channels also contain null time points.
    """
    if config.T < 20:
        raise InvalidInputError("templates need T >= 20")
    tt = np.arange(1, config.T + 1) / config.T
    a0 = np.zeros((config.K, config.T))
    for k, c in enumerate(config.centers):
        d = tt - c
        bump = config.amplitude * np.exp(-(d**2) / (2 * config.width**2))
        a0[k] = np.where(np.abs(d) <= config.support_halfwidth * config.width, bump, 0.0)
    return EvokedTemplates(config.alpha * a0, a0)


def generate_session(config: SimConfig, rng: np.random.Generator | None = None) -> SessionData:
    """Labeled session; deterministic given ``config.seed`` (or the supplied generator)."""
    config.validate()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    layout = SpellerLayout()
    K, T, S, R, J = config.K, config.T, config.S, config.R, config.J
    templates = make_templates(config)
    chol1 = np.linalg.cholesky(np.asarray(config.Sigma1))
    chol0 = np.linalg.cholesky(np.asarray(config.Sigma0))
    n = R * S * J

    r = np.repeat(np.arange(1, R + 1), S * J)
    s = np.tile(np.repeat(np.arange(1, S + 1), J), R)
    j = np.concatenate([rng.permutation(J) + 1 for _ in range(R * S)])
    targets = np.array([layout.target_stimuli(ch) for ch in config.text])
    y = ((j == targets[r - 1, 0]) | (j == targets[r - 1, 1])).astype(np.int8)

    spatial = rng.standard_normal((n, T, K))
    white = rng.standard_normal((n, K, T))
    noise1 = np.einsum("ab,ntb->nat", chol1, spatial)
    noise0 = np.einsum("ab,ntb->nat", chol0, spatial)
    is_target = y[:, None, None] == 1
    X = np.where(is_target, templates.a1[None] + np.sqrt(config.tau2) * noise1,
                 templates.a0[None] + np.sqrt(config.tau2) * noise0)
    X = X + np.sqrt(config.sigma2) * white
    return SessionData(
        X, r, s, j, y, R, S,
        sample_rate=T / 0.6,
        flash_timing=(125.0, 62.5),
        channel_names=[f"Ch{k + 1}" for k in range(K)],
        layout=layout,
    )


def cell_seed(seed: int, config: SimConfig, replicate: int, *extra: int) -> np.random.SeedSequence:
    """Seed for one grid cell, independent of scheduling order."""
    return np.random.SeedSequence([seed, config.fingerprint(), replicate, *extra])


def replicate_sessions(config: SimConfig, replicate: int, seed: int | None = None):
    """Independent calibration and test sessions for one replicate."""
    seed = config.seed if seed is None else seed
    calib_ss, test_ss = cell_seed(seed, config, replicate).spawn(2)
    return (generate_session(config, np.random.default_rng(calib_ss)),
            generate_session(config, np.random.default_rng(test_ss)))


def with_params(config: SimConfig, **kw) -> SimConfig:
    return replace(config, **kw)
