"""Flash scoring, character decoding, throughput and support-recovery metrics."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import expit, ndtr
from scipy.stats import rankdata

from ._io import write_csv
from .eegdata import Design, SessionData, SpellerLayout, channel_pairs
from .errors import InvalidInputError, StructuralError

N_SYMBOLS = 36
SUPPORT_RULES = ("median-model", "mean-beta")


def score_flashes(draws, design: Design, batch: int = 200) -> np.ndarray:
    """Posterior predictive target probability for every flash.

    ``design`` must be assembled with the calibration standardizer.
    """
    n = design.X.shape[0]
    p = draws.K * draws.T
    if design.X.shape[1] != p or design.Z.shape[1] != draws.q:
        raise StructuralError(
            f"design has {design.X.shape[1]}+{design.Z.shape[1]} columns, draws expect {p}+{draws.q}"
        )
    link = ndtr if draws.config.link == "probit" else expit
    use_z = draws.config.use_interactions and draws.q > 0
    B = draws.beta.reshape(draws.D, p)
    total = np.zeros(n)
    # accumulate in batches of draws to bound memory
    for start in range(0, draws.D, batch):
        mu = design.X @ B[start:start + batch].T.astype(np.float64) / p
        if use_z:
            mu += design.Z @ draws.zeta[start:start + batch].T.astype(np.float64) / draws.q
        total += link(mu).sum(axis=1)
    return total / draws.D


class Decoded(NamedTuple):
    row: int
    col: int
    symbol: str


def decode_character(scores: np.ndarray, s_budget: int | None = None,
                     layout: SpellerLayout | None = None) -> Decoded:
    """Decode one character from an ``S x J`` score table (sequence x stimulus).

    Scores of the first ``s_budget`` sequences are summed; the best row
    stimulus and the best column stimulus are picked, lowest index on ties.
    """
    layout = layout or SpellerLayout()
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[1] != layout.n_stimuli:
        raise StructuralError(f"expected S x {layout.n_stimuli} scores, got {scores.shape}")
    s_budget = scores.shape[0] if s_budget is None else s_budget
    if not 1 <= s_budget <= scores.shape[0]:
        raise InvalidInputError(f"budget {s_budget} outside 1..{scores.shape[0]}")
    window = scores[:s_budget]
    if not np.all(np.isfinite(window)):
        raise StructuralError("missing flash inside the budget window")
    total = window.sum(axis=0)
    row = int(np.argmax(total[:layout.rows])) + 1
    col = int(np.argmax(total[layout.rows:])) + 1
    return Decoded(row, col, layout.symbol(row, col))


def score_grid(session: SessionData, scores: np.ndarray) -> np.ndarray:
    """Arrange per-flash scores into an ``R x S x J`` table; missing flashes are NaN."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (session.n,):
        raise StructuralError(f"need one score per flash ({session.n}), got {scores.shape}")
    grid = np.full((session.R, session.S, session.J), np.nan)
    grid[session.r - 1, session.s - 1, session.j - 1] = scores
    return grid


def decode_session(session: SessionData, scores: np.ndarray, s_budget: int | None = None) -> list[Decoded]:
    grid = score_grid(session, scores)
    return [decode_character(grid[r], s_budget, session.layout) for r in range(session.R)]


def accuracy_curve(session: SessionData, scores: np.ndarray, truth: list[tuple[int, int]] | None = None) -> np.ndarray:
    """Fraction of characters decoded correctly at budgets ``1..S``.

    ``truth`` holds 1-based (row, col) target cells; it defaults to the
    session's own labels.
    """
    truth = session.target_cells() if truth is None else list(truth)
    if len(truth) != session.R:
        raise StructuralError(f"need {session.R} target cells, got {len(truth)}")
    grid = score_grid(session, scores)
    curve = np.zeros(session.S)
    for s in range(1, session.S + 1):
        hits = [decode_character(grid[r], s, session.layout)[:2] == tuple(truth[r]) for r in range(session.R)]
        curve[s - 1] = np.mean(hits)
    return curve


def bci_utility(P: float, s_budget: int, display_ms: float = 125.0, pause_ms: float = 62.5,
                n_stimuli: int = 12, n_symbols: int = N_SYMBOLS) -> float:
    """Expected bits per second of a speller selecting correctly with probability ``P``."""
    if not 0.0 <= P <= 1.0:
        raise InvalidInputError(f"accuracy must lie in [0, 1], got {P}")
    c = s_budget * n_stimuli * (display_ms + pause_ms) / 1000.0
    if not c > 0:
        raise InvalidInputError("selection time must be positive")
    return max(0.0, 2.0 * P - 1.0) * math.log2(n_symbols - 1) / c


def utility_curve(accuracy: np.ndarray, timing=(125.0, 62.5), n_stimuli: int = 12) -> np.ndarray:
    return np.array([bci_utility(float(a), s + 1, timing[0], timing[1], n_stimuli)
                     for s, a in enumerate(accuracy)])


def _check_masks(est, truth, k):
    est = np.asarray(est).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if est.shape != truth.shape:
        raise StructuralError(f"mask shapes differ: {est.shape} vs {truth.shape}")
    return est[k], truth[k]


def eswr(est, truth, k: int) -> float | None:
    """Share of true signal points on channel ``k`` that the estimate keeps; ``None`` if there are none."""
    e, t = _check_masks(est, truth, k)
    if not t.any():
        return None
    return float((e & t).sum() / t.sum())


def eewr(est, truth, k: int) -> float | None:
    """Share of true null points on channel ``k`` that the estimate excludes; ``None`` if there are none."""
    e, t = _check_masks(est, truth, k)
    if t.all():
        return None
    return float((~e & ~t).sum() / (~t).sum())


def support_from_draws(draws, rule: str = "median-model") -> np.ndarray:
    if draws.D < 1:
        raise InvalidInputError("need at least one draw")
    if rule == "median-model":
        return (draws.gamma_beta.mean(axis=0) > 0.5).astype(np.int8)
    if rule == "mean-beta":
        return (np.abs(draws.beta_mean()) > 1e-8).astype(np.int8)
    raise InvalidInputError(f"unknown support rule {rule!r}; choose from {SUPPORT_RULES}")


def pair_percentiles(maps) -> np.ndarray:
    """Average within-subject percentile rank (ties averaged) of each pair's inclusion probability."""
    maps = [np.asarray(m, dtype=float) for m in maps]
    if not maps:
        raise InvalidInputError("need at least one subject")
    q = maps[0].shape[0]
    if any(m.shape != (q,) for m in maps):
        raise StructuralError("subjects disagree on the number of pairs")
    return np.mean([100.0 * rankdata(m) / q for m in maps], axis=0)


def pair_edges(percentiles: np.ndarray, K: int, threshold: float = 75.0) -> list[tuple[int, int, float]]:
    """1-based channel pairs whose average percentile exceeds ``threshold``."""
    return [(a + 1, b + 1, float(v)) for (a, b), v in zip(channel_pairs(K), percentiles) if v > threshold]


# --- CSV reports ------------------------------------------------------------

def write_accuracy_csv(path, curve) -> None:
    write_csv(path, ["budget", "accuracy"], [(s + 1, float(a)) for s, a in enumerate(curve)])


def write_utility_csv(path, utility) -> None:
    write_csv(path, ["budget", "bits_per_sec"], [(s + 1, float(u)) for s, u in enumerate(utility)])


def write_selection_csv(path, probs: np.ndarray) -> None:
    K, T = probs.shape
    write_csv(path, ["channel", "time_index", "prob"],
              [(k + 1, t + 1, float(probs[k, t])) for k in range(K) for t in range(T)])


def write_pairs_csv(path, percentiles: np.ndarray, K: int) -> None:
    write_csv(path, ["k1", "k2", "avg_percentile"],
              [(a + 1, b + 1, float(v)) for (a, b), v in zip(channel_pairs(K), percentiles)])
