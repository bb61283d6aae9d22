"""Replicated simulation study comparing the classifiers on fresh calibration/test sessions."""

from __future__ import annotations

import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from ._io import write_csv
from .eegdata import assemble_design
from .errors import SirtgpError
from .kernel import DEFAULT_ALPHA
from .metrics import accuracy_curve, eewr, eswr, score_flashes, support_from_draws
from .rtgp import RtgpConfig, fit_session, posterior_inclusion
from .sim import BASELINE, SimConfig, cell_seed, make_templates, replicate_sessions
from .swlda import fit_swlda, swlda_scores, swlda_support

log = logging.getLogger(__name__)

METHODS = {
    "SIRTGP-P": ("probit", True),
    "SIRTGP-L": ("logit", True),
    "RTGP-P": ("probit", False),
    "RTGP-L": ("logit", False),
    "SWLDA": None,
}
WORKERS_ENV = "SIRTGP_WORKERS"
N_SIGNAL = 4


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def result_columns(K: int = 6) -> list[str]:
    return (["alpha", "tau2", "sigma2", "replicate", "method", "accuracy"]
            + [f"eswr_ch{k + 1}" for k in range(N_SIGNAL)]
            + [f"eewr_ch{k + 1}" for k in range(K)] + ["error"])


@dataclass(frozen=True)
class GridSettings:
    rtgp: RtgpConfig = field(default_factory=RtgpConfig)
    variance_threshold: float = 0.99
    kernel_alpha: float = DEFAULT_ALPHA
    support_rule: str = "median-model"
    seed: int = 0


def method_seed(seed: int, config: SimConfig, replicate: int, method: str) -> int:
    """Chain seed for one cell; depends only on the cell's identity."""
    idx = list(METHODS).index(method)
    return int(cell_seed(seed, config, replicate, 1 + idx).generate_state(1)[0])


def run_cell(config: SimConfig, replicate: int, method: str, settings: GridSettings) -> dict:
    """Fit one method on a replicate's calibration session and score its test session."""
    row = {"alpha": config.alpha, "tau2": config.tau2, "sigma2": config.sigma2,
           "replicate": replicate, "method": method, "accuracy": None, "error": ""}
    for k in range(config.K):
        if k < N_SIGNAL:
            row[f"eswr_ch{k + 1}"] = None
        row[f"eewr_ch{k + 1}"] = None
    # per-channel posterior summaries for sampler methods; not part of the CSV schema
    row["inclusion"] = None
    row["beta_norm"] = None
    try:
        calib, test = replicate_sessions(config, replicate, settings.seed)
        truth = make_templates(config).support()
        if METHODS[method] is None:
            design = assemble_design(calib)
            model = fit_swlda(design.X, design.y.astype(float))
            scores = swlda_scores(model, assemble_design(test, design.standardizer).X)
            est = swlda_support(model, config.K, config.T)
        else:
            link, inter = METHODS[method]
            rcfg = replace(settings.rtgp, link=link, use_interactions=inter,
                           seed=method_seed(settings.seed, config, replicate, method))
            draws = fit_session(calib, rcfg, settings.variance_threshold, settings.kernel_alpha)
            scores = score_flashes(draws, assemble_design(test, draws.standardizer))
            est = support_from_draws(draws, settings.support_rule)
            row["inclusion"] = posterior_inclusion(draws)[0].mean(axis=1).tolist()
            row["beta_norm"] = np.linalg.norm(draws.beta_mean(), axis=1).tolist()
        row["accuracy"] = float(accuracy_curve(test, scores)[-1])
        for k in range(config.K):
            if k < N_SIGNAL:
                row[f"eswr_ch{k + 1}"] = eswr(est, truth, k)
            row[f"eewr_ch{k + 1}"] = eewr(est, truth, k)
    except (SirtgpError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("cell %s rep %d %s failed: %s", method, replicate, config.fingerprint(), exc)
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ").replace(",", ";")
        log.debug("%s", traceback.format_exc())
    return row


def _run_cell_args(args):
    return run_cell(*args)


def expand_configs(base: SimConfig, alphas=None, tau2s=None, sigma2s=None, layout: str = "sweep") -> list[SimConfig]:
    """Simulation settings for a grid.

    ``sweep`` varies one parameter at a time around the baseline values;
    ``factorial`` crosses every listed value. Duplicates are dropped.
    """
    alphas = list(alphas or [base.alpha])
    tau2s = list(tau2s or [base.tau2])
    sigma2s = list(sigma2s or [base.sigma2])
    if layout == "factorial":
        combos = list(product(alphas, tau2s, sigma2s))
    elif layout == "sweep":
        a0 = BASELINE["alpha"] if BASELINE["alpha"] in alphas else alphas[0]
        t0 = BASELINE["tau2"] if BASELINE["tau2"] in tau2s else tau2s[0]
        s0 = BASELINE["sigma2"] if BASELINE["sigma2"] in sigma2s else sigma2s[0]
        combos = ([(a, t0, s0) for a in alphas] + [(a0, t0, s) for s in sigma2s]
                  + [(a0, t, s0) for t in tau2s])
    else:
        raise ValueError(f"unknown grid layout {layout!r}")
    out, seen = [], set()
    for a, t, s in combos:
        if (a, t, s) not in seen:
            seen.add((a, t, s))
            out.append(replace(base, alpha=float(a), tau2=float(t), sigma2=float(s)))
    return out


def run_grid(configs, replicates: int, methods, settings: GridSettings | None = None,
             workers: int | None = None) -> list[dict]:
    """Every (config, replicate, method) cell, in a fixed order independent of ``workers``."""
    settings = settings or GridSettings()
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; available: {list(METHODS)}")
    for c in configs:
        c.validate()
    cells = [(c, r, m, settings) for c in configs for r in range(replicates) for m in methods]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(cells) == 1:
        return [_run_cell_args(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_args, cells))


def _mean_sd(values):
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None, None
    return float(v.mean()), (float(v.std(ddof=1)) if v.size > 1 else None)


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and SD per (config, method) over successful replicates."""
    keys = []
    for r in rows:
        key = (r["alpha"], r["tau2"], r["sigma2"], r["method"])
        if key not in keys:
            keys.append(key)
    out = []
    metric_cols = [c for c in rows[0] if c.startswith(("accuracy", "eswr", "eewr"))] if rows else []
    for key in keys:
        group = [r for r in rows if (r["alpha"], r["tau2"], r["sigma2"], r["method"]) == key and not r["error"]]
        entry = {"alpha": key[0], "tau2": key[1], "sigma2": key[2], "method": key[3], "n_ok": len(group),
                 "n_failed": sum(1 for r in rows
                                 if (r["alpha"], r["tau2"], r["sigma2"], r["method"]) == key and r["error"])}
        for col in metric_cols:
            entry[f"{col}_mean"], entry[f"{col}_sd"] = _mean_sd(r[col] for r in group)
        out.append(entry)
    return out


def write_grid_csv(path, rows: list[dict], K: int = 6) -> None:
    cols = result_columns(K)
    write_csv(path, cols, [[r[c] for c in cols] for r in rows])


def write_summary_csv(path, summary: list[dict]) -> None:
    if not summary:
        write_csv(path, ["alpha", "tau2", "sigma2", "method", "n_ok", "n_failed"], [])
        return
    cols = list(summary[0])
    write_csv(path, cols, [[s[c] for c in cols] for s in summary])
