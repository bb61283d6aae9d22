import json
import shutil
import subprocess
import warnings

import numpy as np
import pytest

from sirtgp import __version__
from sirtgp._io import read_csv
from sirtgp.cli import main, read_mask_csv, write_mask_csv
from sirtgp.eegdata import SessionData, assemble_design, load_session, save_session
from sirtgp.errors import DegenerateSignalWarning, InvalidInputError, NumericalFailure
from sirtgp.kernel import KLBasis
from sirtgp.rtgp import RtgpConfig, load_draws, save_draws
from sirtgp.rtgp.draws import PosteriorDraws
from sirtgp.runconfig import RunConfig
from sirtgp.sim import SimConfig, generate_session, make_templates

SIM_INI = """\
[sim]
alpha = 2.5
tau2 = 9.0
sigma2 = 20.0
seed = 4
text = HI
S = 3
T = 20
"""

FAST_SAMPLER = """
[sampler]
iterations = 80
burn_in = 40
thin = 4
warm_iters = 20
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def tiny_session(seed=0, labeled=True):
    """K=2, T=10, n=96 session cut from a simulated one."""
    cfg = SimConfig(K=2, T=20, S=4, text="AB", centers=(0.35,), Sigma1=((1.0, 0.3), (0.3, 1.0)),
                    Sigma0=((1.0, 0.0), (0.0, 1.0)), alpha=3.0, seed=seed)
    s = generate_session(cfg)
    sess = SessionData(s.signals[:, :, 2:12], s.r, s.s, s.j, s.y, s.R, s.S)
    return sess if labeled else sess.unlabeled()


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = write(root, "sim.ini", SIM_INI + FAST_SAMPLER)
    assert main(["simulate", str(cfg), str(root / "out")]) == 0
    return root, cfg


@pytest.fixture(scope="module")
def fitted(simulated):
    root, cfg = simulated
    assert main(["fit", str(cfg), "--session", str(root / "out" / "calibration.eegs"),
                 "--out", str(root / "fit")]) == 0
    return root


# --- simulate ------------------------------------------------------------------

def test_simulate_outputs(simulated):
    root, _ = simulated
    out = root / "out"
    for name in ("calibration.eegs", "test.eegs", "truth_mask.csv", "config.ini", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert (manifest["sim"]["alpha"], manifest["sim"]["tau2"], manifest["sim"]["sigma2"]) == (2.5, 9.0, 20.0)
    assert manifest["seed"] == 4
    assert load_session(out / "calibration.eegs").R == 2


def test_simulate_byte_identical(simulated, tmp_path):
    root, cfg = simulated
    assert main(["simulate", str(cfg), str(tmp_path / "again")]) == 0
    for name in ("calibration.eegs", "test.eegs", "truth_mask.csv", "manifest.json", "config.ini"):
        assert (tmp_path / "again" / name).read_bytes() == (root / "out" / name).read_bytes()


def test_simulate_from_echo(simulated, tmp_path):
    root, _ = simulated
    assert main(["simulate", str(root / "out" / "config.ini"), str(tmp_path / "echo")]) == 0
    assert (tmp_path / "echo" / "test.eegs").read_bytes() == (root / "out" / "test.eegs").read_bytes()


def test_missing_required_key(tmp_path, caplog):
    cfg = write(tmp_path, "bad.ini", SIM_INI.replace("tau2 = 9.0\n", ""))
    assert main(["simulate", str(cfg), str(tmp_path / "o")]) == 1
    assert "sim.tau2" in caplog.text
    assert not (tmp_path / "o").exists()


def test_unknown_key(tmp_path):
    cfg = write(tmp_path, "bad.ini", SIM_INI + "colour = blue\n")
    assert main(["simulate", str(cfg), str(tmp_path / "o")]) == 1


def test_missing_config_file(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.ini"), str(tmp_path / "o")]) == 2


def test_seed_override(simulated, tmp_path):
    _, cfg = simulated
    assert main(["simulate", str(cfg), str(tmp_path / "s9"), "--seed", "9"]) == 0
    assert json.loads((tmp_path / "s9" / "manifest.json").read_text())["seed"] == 9
    assert "seed = 9" in (tmp_path / "s9" / "config.ini").read_text()


def test_mask_csv_round_trip(tmp_path):
    mask = make_templates(SimConfig()).support()
    write_mask_csv(tmp_path / "m.csv", mask)
    assert np.array_equal(read_mask_csv(tmp_path / "m.csv"), mask)
    (tmp_path / "bad.csv").write_text("channel,time\n1,1\n")
    with pytest.raises(InvalidInputError):
        read_mask_csv(tmp_path / "bad.csv")


# --- fit --------------------------------------------------------------------------

def test_fit_outputs(fitted):
    report = json.loads((fitted / "fit" / "fit_report.json").read_text())
    assert report["draws"] == 10
    assert report["L"] >= 1 and report["rho"] > 0
    assert "wall_seconds" in json.loads((fitted / "fit" / "timing.json").read_text())
    assert "wall" not in json.dumps(report)
    assert load_draws(fitted / "fit" / "draws.rtgp").D == 10


def test_refit_from_echo_identical(fitted, tmp_path):
    assert main(["fit", str(fitted / "fit" / "config.ini"), "--session",
                 str(fitted / "out" / "calibration.eegs"), "--out", str(tmp_path / "f")]) == 0
    for name in ("draws.rtgp", "fit_report.json", "config.ini"):
        assert (tmp_path / "f" / name).read_bytes() == (fitted / "fit" / name).read_bytes()


def test_tiny_fit_draw_count(tmp_path):
    sess = tiny_session()
    assert (sess.K, sess.T, sess.n) == (2, 10, 96)
    save_session(sess, tmp_path / "tiny.eegs")
    cfg = write(tmp_path, "fit.ini", "[sampler]\niterations = 500\nburn_in = 250\nthin = 5\nwarm_iters = 100\n")
    assert main(["fit", str(cfg), "--session", str(tmp_path / "tiny.eegs"), "--out", str(tmp_path / "f")]) == 0
    assert load_draws(tmp_path / "f" / "draws.rtgp").D == (500 - 250) // 5


def test_unlabeled_session_rejected(tmp_path):
    save_session(tiny_session(labeled=False), tmp_path / "u.eegs")
    assert main(["fit", "--session", str(tmp_path / "u.eegs"), "--out", str(tmp_path / "f")]) == 1
    assert not (tmp_path / "f").exists()


def test_link_choice_keeps_shapes(tmp_path):
    save_session(tiny_session(1), tmp_path / "t.eegs")
    shapes = []
    for link in ("probit", "logit"):
        cfg = write(tmp_path, f"{link}.ini", FAST_SAMPLER + f"link = {link}\n")
        assert main(["fit", str(cfg), "--session", str(tmp_path / "t.eegs"), "--out", str(tmp_path / link)]) == 0
        d = load_draws(tmp_path / link / "draws.rtgp")
        assert d.config.link == link
        shapes.append((d.beta.shape, d.zeta.shape))
    assert shapes[0] == shapes[1]


def test_corrupt_session_is_io_error(tmp_path):
    (tmp_path / "junk.eegs").write_bytes(b"not a session")
    assert main(["fit", "--session", str(tmp_path / "junk.eegs"), "--out", str(tmp_path / "f")]) == 2


def test_numeric_failure_exit_code(tmp_path, monkeypatch, caplog):
    import sirtgp.cli as cli

    def failing_chain(*a, **k):
        raise NumericalFailure("field cache drifted", sweep=17)
    monkeypatch.setattr(cli, "run_chain", failing_chain)
    save_session(tiny_session(), tmp_path / "t.eegs")
    code = main(["fit", "--session", str(tmp_path / "t.eegs"), "--out", str(tmp_path / "f")])
    assert code == 3
    assert "sweep 17" in caplog.text
    assert not (tmp_path / "f").exists()


# --- evaluate ---------------------------------------------------------------------

def test_evaluate_outputs(fitted):
    out = fitted / "eval"
    assert main(["evaluate", "--draws", str(fitted / "fit" / "draws.rtgp"),
                 "--session", str(fitted / "out" / "test.eegs"), "--out", str(out),
                 "--truth", str(fitted / "out" / "truth_mask.csv")]) == 0
    acc = read_csv(out / "accuracy.csv")
    util = read_csv(out / "utility.csv")
    assert len(acc) == len(util) == 3
    assert list(util[0]) == ["budget", "bits_per_sec"]
    assert len(read_csv(out / "selection.csv")) == 6 * 20
    assert len(read_csv(out / "pairs.csv")) == 15
    support = read_csv(out / "support.csv")
    assert [r["eswr"] for r in support[4:]] == ["", ""]


def test_evaluate_repeatable(fitted, tmp_path):
    args = ["evaluate", "--draws", str(fitted / "fit" / "draws.rtgp"),
            "--session", str(fitted / "out" / "test.eegs")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--config", str(tmp_path / "a" / "config.ini"), "--out", str(tmp_path / "b")]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_evaluate_dimension_mismatch(fitted, tmp_path):
    save_session(tiny_session(), tmp_path / "t.eegs")
    assert main(["evaluate", "--draws", str(fitted / "fit" / "draws.rtgp"),
                 "--session", str(tmp_path / "t.eegs"), "--out", str(tmp_path / "e")]) == 1


def test_unlabeled_test_session_needs_text(fitted, tmp_path):
    test = load_session(fitted / "out" / "test.eegs")
    save_session(test.unlabeled(), tmp_path / "u.eegs")
    base = ["evaluate", "--draws", str(fitted / "fit" / "draws.rtgp"), "--session", str(tmp_path / "u.eegs")]
    assert main(base + ["--out", str(tmp_path / "a")]) == 1
    assert main(base + ["--out", str(tmp_path / "b"), "--text", "HI"]) == 0
    labeled = tmp_path / "c"
    assert main(["evaluate", "--draws", str(fitted / "fit" / "draws.rtgp"),
                 "--session", str(fitted / "out" / "test.eegs"), "--out", str(labeled)]) == 0
    assert (tmp_path / "b" / "accuracy.csv").read_bytes() == (labeled / "accuracy.csv").read_bytes()


def test_oracle_draws_decode_perfectly(tmp_path):
    cfg = SimConfig(tau2=0.0, sigma2=0.0, text="HELLO", S=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSignalWarning)
        calib = generate_session(cfg)
        design = assemble_design(calib)
    support = make_templates(cfg).support().astype(bool)
    D = 3
    beta = np.broadcast_to(np.where(support, 50.0, 0.0), (D, cfg.K, cfg.T)).astype(np.float32)
    draws = PosteriorDraws(beta.copy(), np.zeros((D, 15), np.float32),
                           np.broadcast_to(support, beta.shape).copy(), np.zeros((D, 15), bool),
                           RtgpConfig(iterations=D + 1, burn_in=1, thin=1, warm_iters=0,
                                      use_interactions=False),
                           KLBasis.identity(cfg.T), design.standardizer)
    save_draws(draws, tmp_path / "oracle.rtgp")
    test = generate_session(SimConfig(tau2=0.0, sigma2=0.0, text="WORLD", S=4, seed=3))
    save_session(test, tmp_path / "test.eegs")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSignalWarning)
        assert main(["evaluate", "--draws", str(tmp_path / "oracle.rtgp"),
                     "--session", str(tmp_path / "test.eegs"), "--out", str(tmp_path / "e")]) == 0
    acc = [float(r["accuracy"]) for r in read_csv(tmp_path / "e" / "accuracy.csv")]
    assert acc == [1.0] * 4


# --- grid ---------------------------------------------------------------------------

GRID_INI = SIM_INI + FAST_SAMPLER + """
[grid]
replicates = 2
methods = RTGP-P, SWLDA
workers = {workers}
"""


def test_grid_rows_and_schema(tmp_path):
    cfg = write(tmp_path, "g.ini", GRID_INI.format(workers=1))
    assert main(["grid", str(cfg), str(tmp_path / "g")]) == 0
    rows = read_csv(tmp_path / "g" / "grid_results.csv")
    assert len(rows) == 4
    assert list(rows[0])[:6] == ["alpha", "tau2", "sigma2", "replicate", "method", "accuracy"]
    assert list(rows[0])[-1] == "error"
    summary = read_csv(tmp_path / "g" / "grid_summary.csv")
    assert {r["method"] for r in summary} == {"RTGP-P", "SWLDA"}
    manifest = json.loads((tmp_path / "g" / "manifest.json").read_text())
    assert manifest["long_running"] is False and manifest["failed_cells"] == 0


def test_grid_workers_identical(tmp_path):
    for w in (1, 4):
        cfg = write(tmp_path, f"g{w}.ini", GRID_INI.format(workers=w))
        assert main(["grid", str(cfg), str(tmp_path / f"g{w}")]) == 0
    a = (tmp_path / "g1" / "grid_results.csv").read_bytes()
    assert a == (tmp_path / "g4" / "grid_results.csv").read_bytes()


def test_full_grid_flagged_long_running():
    cfg = RunConfig.from_text(SIM_INI + "[grid]\nreplicates = 50\nmethods = SIRTGP-P, SIRTGP-L, "
                              "RTGP-P, RTGP-L, SWLDA\nalphas = 1.5, 2.5, 3.5\ntau2s = 1.0, 4.0, 9.0\n"
                              "sigma2s = 10.0, 20.0, 30.0\n", "grid")
    from sirtgp.grid import expand_configs
    g = cfg.get("grid")
    assert len(expand_configs(cfg.get("sim"), g.alphas, g.tau2s, g.sigma2s, g.layout)) == 7
    fact = RunConfig.from_text(SIM_INI + "[grid]\nreplicates = 50\nmethods = SIRTGP-P\n"
                               "alphas = 1.5, 2.5, 3.5\ntau2s = 1.0, 9.0, 4.0\nlayout = factorial\n", "grid")
    g = fact.get("grid")
    n = len(expand_configs(fact.get("sim"), g.alphas, g.tau2s, g.sigma2s, g.layout))
    assert n == 9 and n * g.replicates > 100


def test_grid_manifest_marks_long_run(tmp_path, monkeypatch):
    import sirtgp.cli as cli
    monkeypatch.setattr(cli, "LONG_RUNNING_CHAINS", 1)
    cfg = write(tmp_path, "g.ini", GRID_INI.format(workers=1))
    assert main(["grid", str(cfg), str(tmp_path / "g")]) == 0
    assert json.loads((tmp_path / "g" / "manifest.json").read_text())["long_running"] is True


def test_grid_requires_replicates(tmp_path):
    cfg = write(tmp_path, "g.ini", SIM_INI + "[grid]\nmethods = SWLDA\n")
    assert main(["grid", str(cfg), str(tmp_path / "g")]) == 1


# --- config and entry point ---------------------------------------------------------

def test_echo_round_trip():
    cfg = RunConfig.from_text(SIM_INI + FAST_SAMPLER + "[kernel]\nrho = 12.5\n")
    again = RunConfig.from_text(cfg.to_text())
    assert again.to_text() == cfg.to_text()
    assert again.get("kernel").rho == 12.5
    assert RunConfig.from_text("").get("kernel").rho is None


def test_unknown_section_rejected():
    with pytest.raises(InvalidInputError):
        RunConfig.from_text("[plots]\ncolour = red\n")


def test_version_command(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


@pytest.mark.skipif(shutil.which("sirtgp") is None, reason="console script not installed")
def test_console_script():
    out = subprocess.run(["sirtgp", "version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == __version__
