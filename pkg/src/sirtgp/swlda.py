"""Stepwise linear discriminant analysis with partial-F entry and removal tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit

from ._io import write_csv
from .errors import InvalidInputError

# a candidate whose residual norm falls below this share of its centered norm
# is treated as collinear with the selected set
COLLINEAR_TOL = 1e-8


@dataclass(frozen=True)
class SwldaModel:
    selected: tuple[int, ...]
    weights: np.ndarray
    intercept: float
    p: int

    def coefficients(self) -> np.ndarray:
        full = np.zeros(self.p)
        full[list(self.selected)] = self.weights
        return full


def _ols(Xs: np.ndarray, y: np.ndarray):
    A = np.column_stack([np.ones(Xs.shape[0]), Xs])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return coef, float(resid @ resid), A


def _entry_pvalues(Xc: np.ndarray, yc: np.ndarray, selected: list[int], norms: np.ndarray):
    """Partial-F p-values for adding each feature to ``selected`` (NaN where not allowed)."""
    n, p = Xc.shape
    if selected:
        Q, _ = np.linalg.qr(Xc[:, selected])
        Xr = Xc - Q @ (Q.T @ Xc)
        ry = yc - Q @ (Q.T @ yc)
    else:
        Xr, ry = Xc, yc
    rss = float(ry @ ry)
    sq = np.einsum("ij,ij->j", Xr, Xr)
    ok = sq > (COLLINEAR_TOL * norms) ** 2
    ok[selected] = False
    gain = np.where(ok, (Xr.T @ ry) ** 2 / np.where(ok, sq, 1.0), 0.0)
    dof = n - len(selected) - 2
    if dof < 1:
        return np.full(p, np.nan)
    F = gain / np.maximum(rss - gain, 1e-300) * dof
    pv = stats.f.sf(F, 1, dof)
    return np.where(ok, pv, np.nan)


def _removal_pvalues(Xs: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, k = Xs.shape
    coef, rss, A = _ols(Xs, y)
    dof = n - k - 1
    s2 = rss / dof
    cov = np.linalg.pinv(A.T @ A) * s2
    t2 = coef[1:] ** 2 / np.maximum(np.diag(cov)[1:], 1e-300)
    return stats.f.sf(t2, 1, dof)


def fit_swlda(X: np.ndarray, y: np.ndarray, p_enter: float = 0.05, p_remove: float = 0.10,
              max_features: int = 60) -> SwldaModel:
    """Forward/backward stepwise least squares on 0/1 labels.

    Each round adds the best admissible feature (p < ``p_enter``) and then
    drops the worst retained feature while its p-value exceeds ``p_remove``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n <= 10:
        raise InvalidInputError("stepwise selection needs more than 10 rows")
    if y.shape != (n,) or set(np.unique(y)) != {0.0, 1.0}:
        raise InvalidInputError("labels must be 0/1 and contain both classes")
    if not 0 < p_enter <= p_remove < 1:
        raise InvalidInputError("need 0 < p_enter <= p_remove < 1")
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    selected: list[int] = []
    seen: set[tuple[int, ...]] = set()
    for _ in range(10 * max_features):
        changed = False
        if len(selected) < max_features:
            pv = _entry_pvalues(Xc, yc, selected, norms)
            if np.any(np.isfinite(pv)):
                best = int(np.nanargmin(pv))
                if pv[best] < p_enter:
                    selected.append(best)
                    changed = True
        while selected:
            pr = _removal_pvalues(Xc[:, selected], yc)
            worst = int(np.argmax(pr))
            if pr[worst] <= p_remove:
                break
            selected.pop(worst)
            changed = True
        key = tuple(sorted(selected))
        if not changed or key in seen:
            break
        seen.add(key)
    if selected:
        coef, _, _ = _ols(X[:, selected], y)
        return SwldaModel(tuple(selected), coef[1:], float(coef[0]), p)
    return SwldaModel((), np.zeros(0), float(y.mean()), p)


def discriminant(model: SwldaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.p:
        raise InvalidInputError(f"model expects {model.p} features, got {X.shape[1]}")
    if not model.selected:
        return np.zeros(X.shape[0])
    return X[:, list(model.selected)] @ model.weights + model.intercept


def swlda_scores(model: SwldaModel, X: np.ndarray) -> np.ndarray:
    """Logistic of the discriminant value; an empty model scores every row 0.5."""
    return expit(discriminant(model, X))


def swlda_support(model: SwldaModel, K: int, T: int) -> np.ndarray:
    if model.p != K * T:
        raise InvalidInputError(f"model has {model.p} features, expected {K * T}")
    mask = np.zeros(K * T, dtype=np.int8)
    mask[list(model.selected)] = 1
    return mask.reshape(K, T)


def write_swlda_csv(path, model: SwldaModel) -> None:
    write_csv(path, ["feature_index", "weight"],
              [(int(i), float(w)) for i, w in zip(model.selected, model.weights)]
              + [("intercept", model.intercept)])
