"""Modified squared-exponential kernel and its truncated Karhunen-Loeve basis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eegdata import SessionData
from .errors import EstimationError, InvalidInputError

GRAM_JITTER = 1e-10
DEFAULT_ALPHA = 0.01
DEFAULT_RHO_GRID = np.geomspace(0.5, 500.0, 30)
DEFAULT_NOISE_GRID = np.geomspace(1e-3, 1.0, 10)


@dataclass(frozen=True)
class KernelParams:
    alpha: float = DEFAULT_ALPHA
    rho: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.rho)):
            raise InvalidInputError("kernel parameters must be finite")
        if self.alpha < 0 or self.rho <= 0:
            raise InvalidInputError(f"need alpha >= 0 and rho > 0, got {self.alpha}, {self.rho}")


@dataclass(frozen=True, eq=False)
class KLBasis:
    """Leading eigenpairs of the Gram matrix on the time grid.

    ``psi`` is ``T x L`` with orthonormal columns; ``lambdas`` are descending.
    """

    grid: np.ndarray
    lambdas: np.ndarray
    psi: np.ndarray
    variance_fraction: float
    params: KernelParams | None = None
    threshold: float = 1.0

    @property
    def L(self) -> int:
        return self.lambdas.shape[0]

    @property
    def T(self) -> int:
        return self.grid.shape[0]

    @classmethod
    def identity(cls, T: int, lambdas=None) -> "KLBasis":
        """Identity eigenvectors, used to reduce the model to plain coefficient regression."""
        lam = np.ones(T) if lambdas is None else np.asarray(lambdas, dtype=float)
        return cls(time_grid(T), lam, np.eye(T), 1.0)

    def reconstruct(self) -> np.ndarray:
        return (self.psi * self.lambdas) @ self.psi.T


def time_grid(T: int) -> np.ndarray:
    """Time indices ``1..T`` mapped to ``[0, 1]``."""
    if T < 1:
        raise InvalidInputError("T must be positive")
    return np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)


def mse_kernel(x, x_prime, params: KernelParams):
    """``exp(-alpha (x^2 + x'^2) - rho (x - x')^2)``, broadcasting over inputs."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(x_prime, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
        raise InvalidInputError("kernel inputs must be finite")
    out = np.exp(-params.alpha * (x**2 + xp**2) - params.rho * (x - xp) ** 2)
    return float(out) if out.ndim == 0 else out


def gram_matrix(grid, params: KernelParams) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise InvalidInputError("grid must be strictly increasing")
    G = mse_kernel(grid[:, None], grid[None, :], params)
    G = np.atleast_2d(G)
    return np.triu(G) + np.triu(G, 1).T


def build_kl_basis(grid, params: KernelParams, variance_threshold: float = 0.99) -> KLBasis:
    """Keep the smallest rank whose eigenvalue share reaches ``variance_threshold``."""
    if not (0.0 < variance_threshold <= 1.0):
        raise InvalidInputError(f"variance_threshold must be in (0, 1], got {variance_threshold}")
    grid = np.asarray(grid, dtype=float)
    G = gram_matrix(grid, params)
    T = G.shape[0]
    lam, vec = np.linalg.eigh(G + GRAM_JITTER * np.eye(T))
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    lam = np.maximum(lam, GRAM_JITTER)
    share = np.cumsum(lam) / lam.sum()
    if variance_threshold >= 1.0:
        L = T
    else:
        # relative Frobenius error of the rank-l reconstruction, l = 1..T
        sq = lam[::-1] ** 2
        tail = np.sqrt(np.concatenate([np.cumsum(sq)[::-1][1:], [0.0]]) / sq.sum())
        ok = (share >= variance_threshold - 1e-12) & (tail <= 1.0 - variance_threshold)
        L = int(np.argmax(ok)) + 1 if ok.any() else T
    # fix eigenvector signs so the basis is reproducible across LAPACK builds
    signs = np.sign(vec[np.argmax(np.abs(vec), axis=0), np.arange(T)])
    vec = vec * np.where(signs == 0, 1.0, signs)
    return KLBasis(grid, lam[:L].copy(), np.ascontiguousarray(vec[:, :L]), float(share[L - 1]),
                   params, float(variance_threshold))


def gp_log_marginal(waveform: np.ndarray, eigvals: np.ndarray, eigvecs: np.ndarray,
                    noise_ratio: float, scale: float) -> float:
    """Log evidence of ``waveform`` under ``N(0, scale * (K + noise_ratio I))``.

    ``eigvals``/``eigvecs`` are the eigendecomposition of ``K``.
    """
    proj = eigvecs.T @ waveform
    d = scale * (np.maximum(eigvals, 0.0) + noise_ratio)
    T = waveform.shape[0]
    return float(-0.5 * np.sum(proj**2 / d) - 0.5 * np.sum(np.log(d)) - 0.5 * T * np.log(2 * np.pi))


def _evidence_table(waveforms: np.ndarray, grid, rho_grid, noise_grid, alpha) -> np.ndarray:
    """Best log evidence over ``noise_grid`` for every (waveform, rho) pair."""
    scales = np.mean(waveforms**2, axis=1)
    table = np.full((waveforms.shape[0], len(rho_grid)), -np.inf)
    for a, rho in enumerate(rho_grid):
        lam, vec = np.linalg.eigh(gram_matrix(grid, KernelParams(alpha, float(rho))))
        for m, (y, scale) in enumerate(zip(waveforms, scales)):
            table[m, a] = max(gp_log_marginal(y, lam, vec, float(g), scale) for g in noise_grid)
    return table


def fit_channel_rho(waveform, rho_grid=DEFAULT_RHO_GRID, noise_grid=DEFAULT_NOISE_GRID,
                    alpha: float = DEFAULT_ALPHA, grid=None) -> float:
    """Grid-search maximum-evidence smoothing parameter for one averaged waveform.

    The kernel amplitude is the waveform's mean square and the noise variance
    is a ``noise_grid`` multiple of it.
    """
    y = np.asarray(waveform, dtype=float)
    if not np.mean(y**2) > 0:
        raise EstimationError("flat waveform")
    grid = time_grid(y.shape[0]) if grid is None else grid
    rho_grid = np.asarray(rho_grid, dtype=float)
    table = _evidence_table(y[None], grid, rho_grid, noise_grid, alpha)
    return float(rho_grid[int(np.argmax(table[0]))])


def estimate_rho(session: SessionData, rho_grid=DEFAULT_RHO_GRID, noise_grid=DEFAULT_NOISE_GRID,
                 alpha: float = DEFAULT_ALPHA) -> float:
    """Average of per-channel maximum-evidence ``rho`` fitted to the grand-average waveforms."""
    rho_grid = np.asarray(rho_grid, dtype=float)
    if rho_grid.size == 0 or not np.all(np.isfinite(rho_grid)) or np.any(rho_grid <= 0):
        raise InvalidInputError("rho_grid must hold finite positive values")
    if session.n == 0:
        raise EstimationError("empty session")
    averages = session.signals.astype(np.float64).mean(axis=0)
    grid = time_grid(session.T)
    keep = [w for w in averages if np.ptp(w) > 1e-12 * max(np.abs(w).max(), 1.0)]
    if not keep:
        raise EstimationError("every channel average is flat")
    table = _evidence_table(np.asarray(keep), grid, rho_grid, noise_grid, alpha)
    return float(np.mean(rho_grid[np.argmax(table, axis=1)]))
