"""Gibbs sampler for the thresholded time-varying classifier with channel interactions.

The linear predictor of flash ``i`` is::

    mu_i = (1/p) sum_{k,t} beta_k(t) X_ki(t) + (1/q) sum_v zeta_v Z_iv

with ``beta_k = E_k * I(|E~_k| > omega1)``, ``E_k = psi e_k`` and
``zeta = eta * I(|eta~| > omega2)``. The probit link is handled with
truncated-normal latent variables and the logit link with Polya-Gamma
auxiliaries; both give a Gaussian working likelihood
``-1/2 sum_i w_i (z_i - mu_i)^2`` that the conjugate updates share.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from polyagamma import random_polyagamma
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.special import log_ndtr

from ..eegdata import Design, assemble_design
from ..errors import NumericalFailure, StructuralError
from ..kernel import DEFAULT_ALPHA, KernelParams, KLBasis, build_kl_basis, estimate_rho, time_grid
from ._kernels import two_region_sweep
from .config import RtgpConfig
from .draws import PosteriorDraws
from .truncnorm import sample_truncnorm

log = logging.getLogger(__name__)

CACHE_TOL = 1e-8


@dataclass(eq=False)
class ChainData:
    """Standardized design in the layouts the updates need."""

    X: np.ndarray  # n x K x T
    Z: np.ndarray  # n x q
    y: np.ndarray  # n, float 0/1

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.Z = np.ascontiguousarray(self.Z, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        n = self.X.shape[0]
        if self.X.ndim != 3 or self.Z.shape[0] != n or self.y.shape != (n,):
            raise StructuralError("X, Z and y disagree on the number of flashes")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise StructuralError("sampler needs 0/1 labels")
        self.Xflat = self.X.reshape(n, self.X.shape[1] * self.X.shape[2])
        self.Xcols = np.ascontiguousarray(self.Xflat.T)
        self.Zcols = np.ascontiguousarray(self.Z.T)
        self.Xsq = np.einsum("mi,mi->m", self.Xcols, self.Xcols)
        self.Zsq = np.einsum("vi,vi->v", self.Zcols, self.Zcols)

    @classmethod
    def from_design(cls, design: Design, K: int, T: int) -> "ChainData":
        n = design.X.shape[0]
        return cls(design.X.reshape(n, K, T), design.Z, design.y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def T(self) -> int:
        return self.X.shape[2]

    @property
    def p(self) -> int:
        return self.K * self.T

    @property
    def q(self) -> int:
        return self.Z.shape[1]


@dataclass(eq=False)
class RtgpState:
    e: np.ndarray  # K x L
    E: np.ndarray  # K x T, psi e^T
    Etilde: np.ndarray  # K x T
    eta: np.ndarray  # q
    etatilde: np.ndarray  # q
    sigma_eta2: float
    omega1: float
    omega2: float
    xi2: float
    latent: np.ndarray  # probit latent values or Polya-Gamma variates
    mu: np.ndarray  # cached linear predictors
    delta: np.ndarray = field(default=None)  # K x T, |Etilde| > omega1
    delta_eta: np.ndarray = field(default=None)  # q, |etatilde| > omega2

    def __post_init__(self):
        if self.delta is None:
            self.delta = np.abs(self.Etilde) > self.omega1
        if self.delta_eta is None:
            self.delta_eta = np.abs(self.etatilde) > self.omega2

    @property
    def beta(self) -> np.ndarray:
        return np.where(self.delta, self.E, 0.0)

    @property
    def zeta(self) -> np.ndarray:
        return np.where(self.delta_eta, self.eta, 0.0)


@dataclass(eq=False)
class Problem:
    data: ChainData
    basis: KLBasis
    config: RtgpConfig

    def __post_init__(self):
        if self.basis.T != self.data.T:
            raise StructuralError(f"basis has T={self.basis.T}, data T={self.data.T}")
        self.psi = self.basis.psi
        self.psi_gram = self.psi.T @ self.psi
        self.prior_prec = 1.0 / (self.config.sigma_e2 * self.basis.lambdas)


def linear_predictor(state: RtgpState, X: np.ndarray, Z: np.ndarray | None = None,
                     use_interactions: bool = True) -> np.ndarray | float:
    """Evaluate the linear predictor for one flash (``K x T``) or a batch (``n x K x T``)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    Xb = X[None] if single else X
    K, T = Xb.shape[1:]
    out = np.einsum("nkt,kt->n", Xb, state.beta) / (K * T)
    if use_interactions and Z is not None:
        Zb = np.atleast_2d(Z)
        out = out + Zb @ state.zeta / Zb.shape[1]
    return float(out[0]) if single else out


def predictor_from_scratch(state: RtgpState, data: ChainData, use_interactions: bool) -> np.ndarray:
    mu = data.Xflat @ state.beta.ravel() / data.p
    if use_interactions:
        mu = mu + data.Z @ state.zeta / data.q
    return mu


def working_response(state: RtgpState, data: ChainData, link: str) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``w`` and weighted response ``w z`` of the Gaussian working likelihood."""
    if link == "probit":
        return np.ones(data.n), state.latent
    return state.latent, data.y - 0.5


def update_latent(state: RtgpState, data: ChainData, link: str, rng: np.random.Generator) -> RtgpState:
    if link == "probit":
        lower = np.where(data.y == 1, 0.0, -np.inf)
        upper = np.where(data.y == 1, np.inf, 0.0)
        state.latent = sample_truncnorm(state.mu, 1.0, lower, upper, rng)
    else:
        state.latent = random_polyagamma(1.0, state.mu, random_state=rng)
    return state


def kl_conditional(state: RtgpState, prob: Problem, k: int, w: np.ndarray, wz: np.ndarray):
    """Gaussian full conditional of channel ``k``'s KL coefficients.

    Returns ``(mean, precision_cholesky, contribution_design)`` where the
    design maps coefficients to the channel's share of the predictor.
    """
    data = prob.data
    Wk = (data.X[:, k, :] * state.delta[k]) @ prob.psi / data.p
    current = Wk @ state.e[k]
    resid = wz - w * (state.mu - current)
    prec = Wk.T @ (w[:, None] * Wk) + prob.psi_gram / state.xi2 + np.diag(prob.prior_prec)
    rhs = Wk.T @ resid + prob.psi.T @ state.Etilde[k] / state.xi2
    try:
        chol = cho_factor(prec, lower=True)
    except LinAlgError as exc:
        raise NumericalFailure(f"KL conditional for channel {k} is not positive definite") from exc
    if not np.all(np.diag(chol[0]) > 0):
        raise NumericalFailure(f"non-positive conditional variance for channel {k}")
    mean = cho_solve(chol, rhs)
    return mean, chol, Wk, current


def update_kl_coeffs(state: RtgpState, prob: Problem, rng: np.random.Generator) -> RtgpState:
    """Blocked draw of each channel's KL coefficients from their joint Gaussian conditional."""
    w, wz = working_response(state, prob.data, prob.config.link)
    for k in range(prob.data.K):
        mean, (chol, lower), Wk, current = kl_conditional(state, prob, k, w, wz)
        noise = solve_triangular(chol, rng.standard_normal(mean.shape[0]), lower=lower, trans="T")
        ek = mean + noise
        state.e[k] = ek
        state.E[k] = prob.psi @ ek
        state.mu += Wk @ ek - current
    return state


def _region_log_masses(m: np.ndarray, s: float, omega: float):
    """Prior log masses of ``N(m, s^2)`` above ``omega``, below ``-omega`` and inside."""
    log_up = log_ndtr((m - omega) / s)
    log_down = log_ndtr((-omega - m) / s)
    log_out = np.logaddexp(log_up, log_down)
    if omega <= 0:
        return log_up, log_down, log_out, np.full(m.shape, -np.inf)
    # inside mass via the tail nearer the interval, for accuracy when both tails are thin
    am = np.abs(m)
    lb = log_ndtr((omega - am) / s)
    la = log_ndtr((-omega - am) / s)
    with np.errstate(divide="ignore"):
        log_in = lb + np.log1p(-np.exp(la - lb))
    return log_up, log_down, log_out, log_in


def _draw_relaxed(mean: np.ndarray, active: np.ndarray, s: float, omega: float, log_up, log_out,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw relaxed values inside the chosen regions."""
    u_tail = rng.random(mean.shape)
    with np.errstate(invalid="ignore"):
        p_up = np.exp(log_up - log_out)
    p_up = np.where(np.isfinite(p_up), p_up, 0.5)
    upper_tail = u_tail < p_up
    lower = np.where(active, np.where(upper_tail, omega, -np.inf), -omega)
    upper = np.where(active, np.where(upper_tail, np.inf, -omega), omega)
    out = sample_truncnorm(mean, s, lower, upper, rng)
    # keep the indicator consistent with the region when a draw lands on the boundary
    edge = active & (np.abs(out) <= omega)
    if edge.any():
        out[edge] = np.where(upper_tail[edge], 1.0, -1.0) * np.nextafter(omega, np.inf)
    return out


def _two_region_update(values_mean, relaxed_shape, active, cols, coef, colsq, state, w, wz,
                       omega, rng):
    s = float(np.sqrt(state.xi2))
    mean = values_mean.ravel()
    log_up, log_down, log_out, log_in = _region_log_masses(mean, s, omega)
    act = active.ravel().copy()
    u = rng.random(mean.shape[0])
    two_region_sweep(cols, coef, act, state.mu, wz, w, colsq, log_out, log_in, u)
    relaxed = _draw_relaxed(mean, act, s, omega, log_up, log_out, rng)
    return relaxed.reshape(relaxed_shape), act.reshape(relaxed_shape)


def update_relaxed_field(state: RtgpState, prob: Problem, rng: np.random.Generator) -> RtgpState:
    """Region-then-value draws of every relaxed field value ``E~_k(t)``."""
    data = prob.data
    w, wz = working_response(state, data, prob.config.link)
    colsq = data.Xcols**2 @ w if prob.config.link == "logit" else data.Xsq
    coef = state.E.ravel() / data.p
    state.Etilde, state.delta = _two_region_update(
        state.E, state.E.shape, state.delta, data.Xcols, coef, colsq, state, w, wz, state.omega1, rng
    )
    return state


def sigma_eta_conditional(eta: np.ndarray, a: float, b: float) -> tuple[float, float]:
    """Shape and rate of the inverse-gamma conditional of the interaction variance."""
    eta = np.asarray(eta, dtype=float)
    return a + 0.5 * eta.shape[0], b + 0.5 * float(eta @ eta)


def update_eta(state: RtgpState, prob: Problem, rng: np.random.Generator) -> RtgpState:
    """Joint Gaussian draw of the interaction effects."""
    cfg, data = prob.config, prob.data
    w, wz = working_response(state, data, cfg.link)
    q = data.q
    G = data.Z * state.delta_eta / q
    current = G @ state.eta
    resid = wz - w * (state.mu - current)
    prec = G.T @ (w[:, None] * G) + np.eye(q) * (1.0 / state.xi2 + 1.0 / state.sigma_eta2)
    rhs = G.T @ resid + state.etatilde / state.xi2
    try:
        chol, lower = cho_factor(prec, lower=True)
    except LinAlgError as exc:
        raise NumericalFailure("interaction conditional is not positive definite") from exc
    if not np.all(np.diag(chol) > 0):
        raise NumericalFailure("non-positive conditional variance for the interactions")
    mean = cho_solve((chol, lower), rhs)
    state.eta = mean + solve_triangular(chol, rng.standard_normal(q), lower=True, trans="T")
    state.mu += G @ state.eta - current
    return state


def update_relaxed_interactions(state: RtgpState, prob: Problem, rng: np.random.Generator) -> RtgpState:
    cfg, data = prob.config, prob.data
    w, wz = working_response(state, data, cfg.link)
    colsq = data.Zcols**2 @ w if cfg.link == "logit" else data.Zsq
    state.etatilde, state.delta_eta = _two_region_update(
        state.eta, state.eta.shape, state.delta_eta, data.Zcols, state.eta / data.q, colsq, state, w, wz,
        state.omega2, rng,
    )
    return state


def update_sigma_eta(state: RtgpState, prob: Problem, rng: np.random.Generator) -> RtgpState:
    shape, rate = sigma_eta_conditional(state.eta, prob.config.a_eta, prob.config.b_eta)
    state.sigma_eta2 = float(rate / rng.gamma(shape))
    return state


def update_interactions(state: RtgpState, prob: Problem, rng: np.random.Generator) -> RtgpState:
    """Interaction effects, their relaxed copies and the effect variance."""
    if not prob.config.use_interactions:
        return state
    update_eta(state, prob, rng)
    update_relaxed_interactions(state, prob, rng)
    update_sigma_eta(state, prob, rng)
    return state


def observed_loglik(mu: np.ndarray, y: np.ndarray, link: str) -> float:
    """Bernoulli log likelihood of the labels, summed over flashes."""
    if link == "probit":
        return float(np.sum(log_ndtr(np.where(y == 1, mu, -mu))))
    return float(np.sum(y * mu - np.logaddexp(0.0, mu)))


def omega_grid(relaxed: np.ndarray, a: float, b: float, points: int) -> np.ndarray | None:
    """Evenly spaced candidates between two quantiles of ``|relaxed|``; ``None`` if degenerate."""
    mags = np.abs(np.ravel(relaxed))
    lo, hi = np.quantile(mags, [a, b])
    if not hi - lo > 1e-12 * max(hi, 1.0):
        return None
    return np.linspace(lo, hi, points)


def sample_index(logw: np.ndarray, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to ``exp(logw)``."""
    logw = logw - logw.max()
    prob = np.exp(logw)
    prob /= prob.sum()
    return int(rng.choice(prob.shape[0], p=prob))


def threshold_log_weights(candidates, relaxed, field_values, cols_design, scale, offset, y, link):
    """Log likelihood of the labels under the indicators each candidate threshold induces."""
    out = np.empty(len(candidates))
    for z, g in enumerate(candidates):
        coef = np.where(np.abs(relaxed) > g, field_values, 0.0).ravel()
        out[z] = observed_loglik(offset + cols_design @ coef / scale, y, link)
    return out


def update_thresholds(state: RtgpState, prob: Problem, rng: np.random.Generator) -> RtgpState:
    """Draw ``omega1`` (and ``omega2``) from the discrete adaptive-grid conditional."""
    cfg, data = prob.config, prob.data
    main = data.Xflat @ state.beta.ravel() / data.p
    inter = data.Z @ state.zeta / data.q if cfg.use_interactions else 0.0
    grid = omega_grid(state.Etilde, cfg.a_omega, cfg.b_omega, cfg.omega_points)
    if grid is not None:
        logw = threshold_log_weights(grid, state.Etilde, state.E, data.Xflat, data.p, inter, data.y, cfg.link)
        state.omega1 = float(grid[sample_index(logw, rng)])
        state.delta = np.abs(state.Etilde) > state.omega1
        main = data.Xflat @ state.beta.ravel() / data.p
    if cfg.use_interactions:
        grid = omega_grid(state.etatilde, cfg.a_omega, cfg.b_omega, cfg.omega_points)
        if grid is not None:
            logw = threshold_log_weights(grid, state.etatilde, state.eta, data.Z, data.q, main, data.y, cfg.link)
            state.omega2 = float(grid[sample_index(logw, rng)])
            state.delta_eta = np.abs(state.etatilde) > state.omega2
            inter = data.Z @ state.zeta / data.q
    state.mu = main + inter
    return state


def initial_state(prob: Problem, rng: np.random.Generator) -> RtgpState:
    data, cfg = prob.data, prob.config
    K, T, L, q = data.K, data.T, prob.basis.L, data.q
    xi2 = cfg.xi2_at(0)
    e = np.zeros((K, L))
    E = np.zeros((K, T))
    state = RtgpState(
        e=e, E=E, Etilde=rng.normal(0.0, np.sqrt(xi2), (K, T)),
        eta=np.zeros(q), etatilde=rng.normal(0.0, np.sqrt(xi2), q),
        sigma_eta2=1.0, omega1=0.0, omega2=0.0, xi2=xi2,
        latent=np.zeros(data.n), mu=np.zeros(data.n),
    )
    return state


def sweep(state: RtgpState, prob: Problem, it: int, rng: np.random.Generator) -> RtgpState:
    cfg = prob.config
    state.xi2 = cfg.xi2_at(it)
    update_latent(state, prob.data, cfg.link, rng)
    update_kl_coeffs(state, prob, rng)
    update_relaxed_field(state, prob, rng)
    update_interactions(state, prob, rng)
    if cfg.adapt_thresholds and not cfg.is_warm(it):
        update_thresholds(state, prob, rng)
    return state


def check_cache(state: RtgpState, prob: Problem) -> None:
    fresh = predictor_from_scratch(state, prob.data, prob.config.use_interactions)
    err = float(np.max(np.abs(fresh - state.mu), initial=0.0))
    if not np.isfinite(err) or err > CACHE_TOL * max(1.0, float(np.max(np.abs(fresh), initial=0.0))):
        raise NumericalFailure(f"linear-predictor cache drifted by {err:.3g}")
    state.mu = fresh


def run_chain(data: ChainData, basis: KLBasis, config: RtgpConfig, state: RtgpState | None = None,
              standardizer=None) -> PosteriorDraws:
    """Run the systematic-scan sampler and collect thinned post-burn-in draws."""
    rng = np.random.default_rng(config.seed)
    prob = Problem(data, basis, config)
    if state is None:
        state = initial_state(prob, rng)
    D = config.n_draws
    K, T, q = data.K, data.T, data.q
    beta = np.zeros((D, K, T), dtype=np.float32)
    zeta = np.zeros((D, q), dtype=np.float32)
    gamma_beta = np.zeros((D, K, T), dtype=bool)
    gamma_zeta = np.zeros((D, q), dtype=bool)
    omegas = np.zeros((D, 2))
    loglik = np.zeros(config.iterations)
    d = 0
    for it in range(config.iterations):
        try:
            sweep(state, prob, it, rng)
            if config.check_cache:
                check_cache(state, prob)
        except NumericalFailure as exc:
            raise NumericalFailure(str(exc), sweep=it) from exc
        loglik[it] = observed_loglik(state.mu, data.y, config.link)
        if (it + 1) % 100 == 0:
            log.info("sweep %d/%d loglik %.2f xi2 %.3g omega1 %.3g omega2 %.3g",
                     it + 1, config.iterations, loglik[it], state.xi2, state.omega1, state.omega2)
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0 and d < D:
            gamma_beta[d] = state.delta
            beta[d] = np.where(state.delta, state.E, 0.0)
            if config.use_interactions:
                gamma_zeta[d] = state.delta_eta
                zeta[d] = np.where(state.delta_eta, state.eta, 0.0)
            omegas[d] = state.omega1, state.omega2
            d += 1
    return PosteriorDraws(beta, zeta, gamma_beta, gamma_zeta, config, basis, standardizer,
                          omegas=omegas, loglik=loglik)


def fit_session(session, config: RtgpConfig, variance_threshold: float = 0.99,
                kernel_alpha: float = DEFAULT_ALPHA, rho: float | None = None) -> PosteriorDraws:
    """Standardize a labeled session, fit the kernel, build the basis and run one chain."""
    design = assemble_design(session)
    if rho is None:
        rho = estimate_rho(session, alpha=kernel_alpha)
    basis = build_kl_basis(time_grid(session.T), KernelParams(kernel_alpha, rho), variance_threshold)
    data = ChainData.from_design(design, session.K, session.T)
    return run_chain(data, basis, config, standardizer=design.standardizer)
