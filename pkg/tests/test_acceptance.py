"""Acceptance suite.  Each test records one PASS/FAIL line, repeated in the
terminal summary.

Criteria 6 to 8 use the desk run in ``runs/desk`` (configs/desk.ini).  When
its checkpoints are missing the run is trained first, which takes about an
hour on one core.
"""
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from numpy.polynomial import polynomial

from capa_inr import cli, harness, nn
from capa_inr.baselines import discretize_channel, fourier_solve, spda_solve, svd_waterfill, wmmse_solve
from capa_inr.channel import scalar_channel
from capa_inr.config import RunConfig
from capa_inr.geometry import PhysicalConfig
from capa_inr.inr import (BEAINR, COEFINR, INRModel, NetworkConfig, SamplingConfig, TrainSampleGL, evaluate_model,
                          make_model, sample_loss_gl)
from capa_inr.integration import SobolSampler, gl_grid, gl_rule
from capa_inr.objective import (BeamformerSamples, RankDeficiencyWarning, beamformer_se, effective_signal,
                                normalize_power, project_onto_channel_subspace, transmit_power)

from conftest import desk_phys, desk_setup, random_complex, random_position, report

pytestmark = pytest.mark.filterwarnings("ignore::capa_inr.objective.RankDeficiencyWarning")

ROOT = Path(__file__).resolve().parent.parent
DESK_CONFIG = ROOT / "configs" / "desk.ini"


# --- 1. quadrature ---------------------------------------------------------------

def net_violations(u, m):
    x = (u * 2**m).astype(np.int64)
    bad = 0
    for a in range(m + 1):
        ix, iy = x[:, 0] >> (m - a), x[:, 1] >> a
        bad += int(np.sum(np.bincount(ix * 2 ** (m - a) + iy, minlength=2**m) != 1))
    return bad


def smooth_integrand(u):
    return np.cos(2.3 * u[:, 0] + 0.3) * np.cos(1.7 * u[:, 1] - 0.2)


SMOOTH_EXACT = ((np.sin(2.6) - np.sin(0.3)) / 2.3) * ((np.sin(1.5) - np.sin(-0.2)) / 1.7)


def test_criterion_1_quadrature():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for order in range(1, 65):
        rule = gl_rule(order)
        for _ in range(5):
            coef = rng.standard_normal(2 * order)
            anti = polynomial.polyint(coef)
            exact = polynomial.polyval(1.0, anti) - polynomial.polyval(-1.0, anti)
            approx = np.dot(rule.weights, polynomial.polyval(rule.nodes, coef))
            worst = max(worst, abs(approx - exact) / np.sum(np.abs(coef)))
    violations = sum(net_violations(SobolSampler(seed).points(2**m), m) for m in range(13) for seed in range(20))
    n, seeds = 1024, 50
    sobol_err = [np.mean(smooth_integrand(SobolSampler(s).points(n))) - SMOOTH_EXACT for s in range(seeds)]
    mc_err = [np.mean(smooth_integrand(rng.random((n, 2)))) - SMOOTH_EXACT for _ in range(seeds)]
    rmse_sobol, rmse_mc = np.sqrt(np.mean(np.square(sobol_err))), np.sqrt(np.mean(np.square(mc_err)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and violations == 0 and rmse_sobol < rmse_mc and elapsed < 60
    report(1, ok, f"GL worst rel err {worst:.1e}; Sobol net violations {violations}; "
                  f"RMSE sobol {rmse_sobol:.1e} vs random {rmse_mc:.1e}; {elapsed:.1f}s")
    assert ok


# --- 2. channel --------------------------------------------------------------------

def test_criterion_2_channel():
    cfg = PhysicalConfig(2.4e9, 1.0, 1.0)
    h = scalar_channel([0.0, 0.0, 25.0], [0.0, 0.0, 0.0], cfg)
    expected = -1j * 120 * np.pi / (2 * 0.125 * 25)
    rel = abs(h - expected) / abs(expected)
    rng = np.random.default_rng(2)
    r = rng.uniform(-5, 5, (1000, 3)) + [0, 0, 20]
    s = rng.uniform(-1, 1, (1000, 3))
    a, b = scalar_channel(r, s, cfg), scalar_channel(s, r, cfg)
    asym = np.max(np.abs(a - b) / np.abs(a))
    ok = rel <= 1e-12 and asym <= 1e-12
    report(2, ok, f"boresight rel err {rel:.1e}; max asymmetry {asym:.1e} over 1000 pairs")
    assert ok


# --- 3. projection oracle -------------------------------------------------------------

def test_criterion_3_projection():
    t0 = time.perf_counter()
    phys = desk_phys()
    rng = np.random.default_rng(3)
    tx, rx = gl_grid(desk_setup().bs, 24), gl_grid(desk_setup().ue, 6)
    signal_err, power_ok, se_ok = 0.0, True, True
    for _ in range(100):
        rx_o = rx.translated(random_position(rng))
        w = BeamformerSamples(tx, random_complex(rng, len(tx), 2))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            w_par = project_onto_channel_subspace(w, rx_o, phys).parallel
        e = effective_signal(w, rx_o.points, phys).values
        e_par = effective_signal(w_par, rx_o.points, phys).values
        signal_err = max(signal_err, np.linalg.norm(e_par - e) / np.linalg.norm(e))
        power_ok &= transmit_power(w_par) <= transmit_power(w)
        se = beamformer_se(normalize_power(w, phys.power_budget), rx_o, phys)
        se_par = beamformer_se(normalize_power(w_par, phys.power_budget), rx_o, phys)
        se_ok &= se_par >= se
    elapsed = time.perf_counter() - t0
    ok = signal_err <= 1e-8 and power_ok and se_ok and elapsed < 120
    report(3, ok, f"signal rel err {signal_err:.1e}; power never increased {power_ok}; "
                  f"SE never decreased {se_ok}; {elapsed:.1f}s")
    assert ok


# --- 4. gradient -------------------------------------------------------------------

def test_criterion_4_gradient():
    t0 = time.perf_counter()
    setup = desk_setup()
    sampling = SamplingConfig(m_ug=6, m_bg=10, m_us=36, m_bs=100, sobol_seed=1)
    errors = {}
    for kind, carrier in [(BEAINR, "none"), (BEAINR, "focus"), (COEFINR, "none")]:
        net = NetworkConfig(hidden_width=6, hidden_layers=2, num_frequencies=1, activation="tanh", carrier=carrier)
        model = make_model(kind, setup, net, seed=12)
        grid = gl_grid(setup.bs, 10) if kind == BEAINR else gl_grid(setup.ue, 6)
        sample = TrainSampleGL(grid, np.array([1.0, -2.0, 23.0]), 0)
        _, grads = sample_loss_gl(model, sample, setup, sampling)

        def f(params, kind=kind, model=model, carrier=carrier, sample=sample):
            return sample_loss_gl(INRModel(kind, params, model.encoder, carrier), sample, setup, sampling)[0]

        fd = nn.finite_difference_gradient(f, model.params, 3e-4)
        analytic = np.concatenate([g.ravel() for g in grads])
        errors[f"{kind}/{carrier}"] = np.linalg.norm(analytic - fd) / np.linalg.norm(fd)
    elapsed = time.perf_counter() - t0
    ok = max(errors.values()) <= 1e-4 and elapsed < 300
    report(4, ok, "; ".join(f"{k} rel err {v:.1e}" for k, v in errors.items()) + f"; {elapsed:.1f}s")
    assert ok


# --- 5. baselines ------------------------------------------------------------------

def test_criterion_5_baselines():
    t0 = time.perf_counter()
    setup = desk_setup()
    phys = setup.phys
    rng = np.random.default_rng(5)
    tx, rx = gl_grid(setup.bs, 24), gl_grid(setup.ue, 6)
    wmmse_err, monotone = 0.0, True
    for k in range(20):
        Hd = discretize_channel(tx, rx.translated(random_position(rng)), phys)
        opt, _ = svd_waterfill(Hd, phys.power_budget, phys.noise_sigma2, 2)
        res = wmmse_solve(Hd, phys.power_budget, phys.noise_sigma2, 2, seed=k)
        wmmse_err = max(wmmse_err, abs(res.se_bits - opt.se_bits) / opt.se_bits)
        v0 = random_complex(rng, len(tx), 2)
        cold = wmmse_solve(Hd, phys.power_budget, phys.noise_sigma2, 2, v0=v0, max_iter=40, tol=0.0)
        monotone &= bool(np.all(np.diff(cold.se_history) >= -1e-9 * cold.se_history[-1]))

    tx12 = gl_grid(setup.bs, 12)
    Hd = discretize_channel(tx12, rx.translated(random_position(rng)), phys)
    fourier = [fourier_solve(Hd, setup.bs, phys, (n, n)).se_bits for n in range(7)]
    fourier_monotone = bool(np.all(np.diff(fourier) >= -1e-9 * fourier[-1]))
    opt, _ = svd_waterfill(Hd, phys.power_budget, phys.noise_sigma2, 2)
    parity = abs(fourier[-1] - opt.se_bits) / opt.se_bits

    dense_tx, dense_rx = gl_grid(setup.bs, 40), gl_grid(setup.ue, 10)
    spda_ratio = np.inf
    for _ in range(5):
        r_o = random_position(rng)
        rx_o = dense_rx.translated(r_o)
        best, _ = svd_waterfill(discretize_channel(dense_tx, rx_o, phys), phys.power_budget, phys.noise_sigma2, 2)
        w = normalize_power(spda_solve(setup.bs, setup.ue, r_o, phys, phys.wavelength / 8).evaluate(dense_tx),
                            phys.power_budget)
        spda_ratio = min(spda_ratio, beamformer_se(w, rx_o, phys) / best.se_bits)
    elapsed = time.perf_counter() - t0
    ok = (wmmse_err <= 1e-4 and monotone and fourier_monotone and parity <= 1e-6 and spda_ratio >= 0.98
          and elapsed < 600)
    report(5, ok, f"WMMSE vs SVD rel {wmmse_err:.1e}; WMMSE monotone {monotone}; Fourier monotone "
                  f"{fourier_monotone}, full-basis rel {parity:.1e}; SPDA lambda/8 worst ratio {spda_ratio:.4f}; "
                  f"{elapsed:.1f}s")
    assert ok


# --- desk run ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk(request):
    """Desk configuration with trained checkpoints, training them if absent."""
    cfg = RunConfig.load(DESK_CONFIG)
    cfg = cfg.replace("output", "dir", str(ROOT / cfg["output"]["dir"]))
    out = cfg.out_dir
    needed = [out / f"{kind}.ckpt" for kind in cfg["training"]["models"]]
    logs = [out / f"train_{kind}.csv" for kind in cfg["training"]["models"]]
    complete = all(p.exists() for p in needed + logs) and all(
        len(harness.read_csv(p)) == cfg["training"]["epochs"] for p in logs)
    if not complete:
        harness.cmd_gen(cfg)
        harness.cmd_train(cfg, resume=True)
    models = {kind: harness.load_model(cfg, kind) for kind in cfg["training"]["models"]}
    return cfg, models


@pytest.fixture(scope="module")
def desk_sweep(desk):
    cfg, models = desk
    t0 = time.perf_counter()
    rows = harness.sweep(cfg, "power", cfg["eval"]["sweep_values"], cfg["eval"]["sweep_methods"], models=models)
    harness.write_csv(cfg.out_dir / "sweep_power.csv", harness.SWEEP_HEADER, [r.as_list() for r in rows])
    return rows, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_6_desk_training(desk, desk_sweep):
    cfg, models = desk
    rows, _ = desk_sweep
    power = cfg["physics"]["power_budget"]
    at_power = {r.method: r for r in rows if r.value == power}
    wmmse = at_power["wmmse"].mean_se_bits
    positions = harness.eval_positions(cfg)
    residual = max(r.power_residual for kind in models
                   for r in evaluate_model(models[kind], positions, cfg.setup(), cfg["eval"]["m_ug"],
                                           cfg.eval_m_bg))
    train_s = sum(float(r["wall_s"]) for kind in models
                  for r in harness.read_csv(cfg.out_dir / f"train_{kind}.csv"))
    ratios = {kind: at_power[kind].mean_se_bits / wmmse for kind in models}
    thresholds = {BEAINR: 0.90, COEFINR: 0.85}
    ok = all(ratios[k] >= thresholds[k] for k in ratios) and residual <= 1e-8
    report(6, ok, f"WMMSE {wmmse:.3f} bits; " + "; ".join(
        f"{k} {at_power[k].mean_se_bits:.3f} bits ({100 * v:.1f}%, need {100 * thresholds[k]:.0f}%)"
        for k, v in ratios.items()) + f"; max power residual {residual:.1e}; "
        f"training wall time {train_s / 60:.1f} min (target 60)")
    assert ok


@pytest.mark.slow
def test_criterion_7_power_sweep(desk, desk_sweep):
    cfg, _ = desk
    rows, elapsed = desk_sweep
    values = sorted({r.value for r in rows})
    se = {(r.value, r.method): r.mean_se_bits for r in rows}
    methods = sorted({r.method for r in rows})
    failures = []
    for v in values:
        for m in ("wmmse", BEAINR, COEFINR):
            for ref in ("fourier", "spda"):
                if se[(v, m)] < se[(v, ref)]:
                    failures.append(f"{m} < {ref} at P={v:g}")
    for m in methods:
        curve = [se[(v, m)] for v in values]
        if not np.all(np.diff(curve) > 0):
            failures.append(f"{m} not increasing")
    table = "; ".join(f"{m}: " + "/".join(f"{se[(v, m)]:.2f}" for v in values) for m in methods)
    ok = not failures and elapsed < 600
    report(7, ok, f"mean SE at P={'/'.join(f'{v:g}' for v in values)}: {table}; sweep {elapsed:.0f}s"
           + (f"; violations: {', '.join(failures)}" if failures else ""))
    assert not failures


@pytest.mark.slow
def test_criterion_8_aperture_generalization(desk):
    cfg, models = desk
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", nn.OutOfRangeWarning)
        rows = harness.sweep(cfg, "aperture_bs", (3.0, 4.0, 5.0), ("wmmse", BEAINR), models=models)
    ratio = {r.value: r.ratio_to_wmmse for r in rows if r.method == BEAINR}
    trained = cfg.setup().bs.area
    ok = all(v >= 0.8 for v in ratio.values())
    report(8, ok, "BeaINR / WMMSE at A_B " + ", ".join(f"{a:g} m2: {100 * v:.1f}%" for a, v in ratio.items())
           + " (informational outside the trained aperture)")
    # only the trained aperture is binding
    assert ratio[trained] >= 0.8


# --- 9. reproducibility ------------------------------------------------------------

REPRO_CONFIG = """
[physics]
freq_hz = 300e6
num_streams = 2
[sampling]
m_ug = 3
m_us = 16
sobol_seed = 1
[training]
num_positions = 6
batch_size = 3
epochs = 2
root_seed = 11
[network]
hidden_width = 8
hidden_layers = 2
num_frequencies = 2
[eval]
positions = 3
m_ug = 4
sweep_values = 100, 1000
[output]
dir = out
"""


def test_criterion_9_reproducibility(tmp_path, monkeypatch):
    trees = []
    for name in ("a", "b"):
        run = tmp_path / name
        run.mkdir()
        monkeypatch.chdir(run)
        (run / "run.ini").write_text(REPRO_CONFIG, encoding="utf-8")
        for argv in (["gen"], ["train"], ["eval"], ["baseline", "--method", "wmmse"], ["sweep"]):
            assert cli.main(argv + ["--config", "run.ini", "--deterministic"]) == 0
        trees.append({p.name: p.read_bytes() for p in sorted((run / "out").iterdir())})
    identical = trees[0] == trees[1]
    report(9, identical, f"{len(trees[0])} artifacts compared bytewise: "
                         f"{'identical' if identical else 'differ'}")
    assert identical
