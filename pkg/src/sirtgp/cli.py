"""Command-line driver: simulate, fit, evaluate, grid, version.

Exit codes: 0 success, 1 configuration or input error, 2 I/O error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text, read_csv, write_csv
from .eegdata import assemble_design, load_session, save_session
from .errors import (ContainerError, EstimationError, InvalidInputError, NumericalFailure,
                     StructuralError)
from .grid import expand_configs, run_grid, summarize, write_grid_csv, write_summary_csv
from .kernel import KernelParams, build_kl_basis, estimate_rho, time_grid
from .metrics import (accuracy_curve, eewr, eswr, pair_percentiles, score_flashes,
                      support_from_draws, utility_curve, write_accuracy_csv, write_pairs_csv,
                      write_selection_csv, write_utility_csv)
from .rtgp import load_draws, posterior_inclusion, run_chain, save_draws
from .rtgp.sampler import ChainData
from .runconfig import LONG_RUNNING_CHAINS, RunConfig
from .sim import make_templates, replicate_sessions

log = logging.getLogger("sirtgp")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_mask_csv(path, mask: np.ndarray) -> None:
    K, T = mask.shape
    write_csv(path, ["channel", "time_index", "active"],
              [(k + 1, t + 1, int(mask[k, t])) for k in range(K) for t in range(T)])


def read_mask_csv(path) -> np.ndarray:
    rows = read_csv(path)
    try:
        K = max(int(r["channel"]) for r in rows)
        T = max(int(r["time_index"]) for r in rows)
        mask = np.zeros((K, T), dtype=np.int8)
        for r in rows:
            mask[int(r["channel"]) - 1, int(r["time_index"]) - 1] = int(r["active"])
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"bad truth mask file {path}: {exc}") from exc
    return mask


def cmd_simulate(cfg: RunConfig, out: Path) -> None:
    sim = cfg.get("sim")
    replicate = cfg.get("simulate").replicate
    calib, test = replicate_sessions(sim, replicate, sim.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_session(calib, out / "calibration.eegs")
    save_session(test, out / "test.eegs")
    write_mask_csv(out / "truth_mask.csv", make_templates(sim).support())
    atomic_write_text(out / "config.ini", cfg.to_text())
    manifest = {
        "command": "simulate",
        "version": __version__,
        "seed": sim.seed,
        "replicate": replicate,
        "sim": sim.to_dict(),
        "files": {name: _sha256(out / name) for name in ("calibration.eegs", "test.eegs", "truth_mask.csv")},
    }
    atomic_write_text(out / "manifest.json", _json(manifest))
    log.info("wrote sessions for %r to %s", sim.text, out)


def cmd_fit(cfg: RunConfig, session_path: Path, out: Path) -> None:
    session = load_session(session_path)
    if not session.labeled:
        raise StructuralError("fit needs a labeled calibration session")
    session.validate()
    kern = cfg.get("kernel")
    rcfg = cfg.get("sampler")
    started = time.perf_counter()
    rho = kern.rho if kern.rho is not None else estimate_rho(session, alpha=kern.alpha)
    basis = build_kl_basis(time_grid(session.T), KernelParams(kern.alpha, rho), kern.variance_threshold)
    design = assemble_design(session)
    draws = run_chain(ChainData.from_design(design, session.K, session.T), basis, rcfg,
                      standardizer=design.standardizer)
    elapsed = time.perf_counter() - started
    out.mkdir(parents=True, exist_ok=True)
    save_draws(draws, out / "draws.rtgp")
    atomic_write_text(out / "config.ini", cfg.to_text())
    report = {
        "command": "fit",
        "version": __version__,
        "session": session_path.name,
        "rho": rho,
        "L": basis.L,
        "variance_fraction": basis.variance_fraction,
        "draws": draws.D,
        "link": rcfg.link,
        "use_interactions": rcfg.use_interactions,
        "cache_checks": "passed" if rcfg.check_cache else "skipped",
        "final_loglik": float(draws.loglik[-1]),
        "draws_sha256": _sha256(out / "draws.rtgp"),
    }
    atomic_write_text(out / "fit_report.json", _json(report))
    # wall time lives in its own file so the report stays reproducible
    atomic_write_text(out / "timing.json", _json({"wall_seconds": elapsed}))
    log.info("fit done: rho=%.4g L=%d D=%d in %.1fs", rho, basis.L, draws.D, elapsed)


def cmd_evaluate(cfg: RunConfig, draws_path: Path, session_path: Path, out: Path,
                 truth_path: Path | None = None, text: str | None = None) -> None:
    draws = load_draws(draws_path)
    session = load_session(session_path)
    if (session.K, session.T) != (draws.K, draws.T):
        raise StructuralError(f"session is {session.K}x{session.T}, draws are {draws.K}x{draws.T}")
    if draws.standardizer is None:
        raise StructuralError("draws file carries no standardizer")
    if text is not None:
        if len(text) != session.R:
            raise InvalidInputError(f"text has {len(text)} characters, session has {session.R}")
        cells = [session.layout.cell(ch) for ch in text]
    elif session.labeled:
        cells = session.target_cells()
    else:
        raise InvalidInputError("unlabeled test session needs --text")
    design = assemble_design(session, draws.standardizer, require_labels=False)
    scores = score_flashes(draws, design)
    curve = accuracy_curve(session, scores, cells)
    utility = utility_curve(curve, session.flash_timing, session.J)
    incl_beta, incl_zeta = posterior_inclusion(draws)
    ev = cfg.get("evaluate")
    out.mkdir(parents=True, exist_ok=True)
    write_accuracy_csv(out / "accuracy.csv", curve)
    write_utility_csv(out / "utility.csv", utility)
    write_selection_csv(out / "selection.csv", incl_beta)
    write_pairs_csv(out / "pairs.csv", pair_percentiles([incl_zeta]) if draws.q else np.zeros(0), draws.K)
    write_csv(out / "pair_inclusion.csv", ["pair_index", "prob"],
              [(i + 1, float(v)) for i, v in enumerate(incl_zeta)])
    if truth_path is not None:
        truth = read_mask_csv(truth_path)
        if truth.shape != (draws.K, draws.T):
            raise StructuralError(f"truth mask is {truth.shape}, draws are {(draws.K, draws.T)}")
        est = support_from_draws(draws, ev.support_rule)
        write_csv(out / "support.csv", ["channel", "eswr", "eewr"],
                  [(k + 1, eswr(est, truth, k), eewr(est, truth, k)) for k in range(draws.K)])
    atomic_write_text(out / "config.ini", cfg.to_text())
    log.info("accuracy by budget: %s", np.round(curve, 3).tolist())


def cmd_grid(cfg: RunConfig, out: Path) -> None:
    g = cfg.get("grid")
    configs = expand_configs(cfg.get("sim"), g.alphas, g.tau2s, g.sigma2s, g.layout)
    chains = len(configs) * g.replicates * sum(m != "SWLDA" for m in g.methods)
    if chains > LONG_RUNNING_CHAINS:
        log.warning("grid runs %d sampler chains; expect a long run", chains)
    rows = run_grid(configs, g.replicates, list(g.methods), cfg.grid_settings(), cfg.workers())
    out.mkdir(parents=True, exist_ok=True)
    write_grid_csv(out / "grid_results.csv", rows, cfg.get("sim").K)
    write_summary_csv(out / "grid_summary.csv", summarize(rows))
    atomic_write_text(out / "config.ini", cfg.to_text())
    manifest = {
        "command": "grid",
        "version": __version__,
        "configs": len(configs),
        "replicates": g.replicates,
        "methods": list(g.methods),
        "sampler_chains": chains,
        "long_running": chains > LONG_RUNNING_CHAINS,
        "failed_cells": sum(1 for r in rows if r["error"]),
    }
    atomic_write_text(out / "manifest.json", _json(manifest))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sirtgp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate calibration and test sessions")
    p.add_argument("config")
    p.add_argument("out", type=Path)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("fit", help="fit the sampler on a labeled session")
    p.add_argument("config", nargs="?", help="INI file (defaults apply when omitted)")
    p.add_argument("--session", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("evaluate", help="decode a test session and write reports")
    p.add_argument("--config")
    p.add_argument("--draws", type=Path, required=True)
    p.add_argument("--session", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--truth", type=Path, help="truth mask CSV for support metrics")
    p.add_argument("--text", help="target text when the test session has no labels")

    p = sub.add_parser("grid", help="run the replicated simulation study")
    p.add_argument("config")
    p.add_argument("out", type=Path)
    p.add_argument("--seed", type=int)

    sub.add_parser("version", help="print the package version")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "version":
        print(__version__)
        return 0
    try:
        cfg_path = getattr(args, "config", None)
        cfg = RunConfig.load(cfg_path, args.command).with_seed(getattr(args, "seed", None))
        sys.stderr.write(cfg.to_text())
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "fit":
            cmd_fit(cfg, args.session, args.out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.draws, args.session, args.out, args.truth, args.text)
        elif args.command == "grid":
            cmd_grid(cfg, args.out)
    except (NumericalFailure, EstimationError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ContainerError, OSError) as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO
    except (InvalidInputError, StructuralError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
