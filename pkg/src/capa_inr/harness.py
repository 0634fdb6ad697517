"""Experiment harness behind the ``capa`` command: dataset manifests,
training with checkpoints, evaluation, baselines, sweeps and timing.

Every command writes plain CSV/JSON into the output directory.  CSV files
use ``\\n`` line endings and a fixed column order; rows that are computed in
a work pool are sorted before writing.  With ``deterministic`` set the pool
runs sequentially and every wall-time column is written as 0.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .baselines import discretize_channel, fourier_solve, spda_solve, wmmse_solve
from .checkpoint import (Checkpoint, ResumeState, load_checkpoint, load_state, save_checkpoint,
                         save_state)
from .config import RunConfig
from .errors import CapaError, ConfigError
from .geometry import Aperture
from .inr import (BEAINR, COEFINR, DatasetPair, INRModel, SystemSetup, TrainingDiverged, TrainState,
                  build_datasets, dataset_names, evaluate_model, init_state, make_encoder, model_beamformer, train,
                  user_positions)
from .integration import QuadratureGrid, gl_grid
from .objective import BeamformerSamples, beamformer_se, normalize_power, transmit_power
from .seeding import subseed

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RESOLVED_CONFIG_NAME = "config.resolved.ini"
POSITIONS_TAG = "positions"
TIMING_NOTE = "non-normative"


class MissingArtifactError(CapaError, OSError):
    """A required input file (manifest, checkpoint) is absent."""


# --- small utilities ----------------------------------------------------------------

def pool_size(deterministic: bool = False) -> int:
    """Work-pool width: ``CAPA_THREADS`` if set, else the CPU count; 1 when
    ``deterministic``."""
    if deterministic:
        return 1
    raw = os.environ.get("CAPA_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"CAPA_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError("CAPA_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def run_pool(fn, items, deterministic: bool = False) -> list:
    """``[fn(x) for x in items]``, possibly in threads; result order follows ``items``."""
    items = list(items)
    workers = min(pool_size(deterministic), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def write_csv(path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _timing(seconds: float, deterministic: bool) -> float:
    return 0.0 if deterministic else seconds


def prepare_out_dir(cfg: RunConfig) -> Path:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG_NAME).write_text(cfg.dump(), encoding="utf-8")
    return out


# --- gen ------------------------------------------------------------------------------

def make_manifest(cfg: RunConfig) -> dict:
    """Seeds, counts and grid specs from which every dataset is regenerated."""
    setup, sampling = cfg.setup(), cfg.sampling()
    n = cfg["training"]["num_positions"]
    region = setup.region
    datasets = []
    for kind in cfg["training"]["models"]:
        g_name, s_name = dataset_names(kind)
        if kind == BEAINR:
            ap, gl_order, sobol_count = setup.bs, sampling.m_bg, sampling.m_bs
        else:
            ap, gl_order, sobol_count = setup.ue, sampling.m_ug, sampling.m_us
        aperture = {"len_x": ap.len_x, "len_y": ap.len_y}
        datasets.append({"name": g_name, "model": kind, "type": "gl", "count": n, "aperture": aperture,
                         "order": gl_order})
        datasets.append({"name": s_name, "model": kind, "type": "sobol", "count": n, "aperture": aperture,
                         "points": sobol_count, "seed": sampling.sobol_seed,
                         "seed_rule": f"subseed(seed, '{s_name}', k)"})
    return {
        "format": "capa-manifest-1",
        "positions": {"root_seed": cfg.root_seed, "tag": POSITIONS_TAG, "count": n,
                      "region": {"x": list(region.x_range), "y": list(region.y_range), "z": list(region.z_range)}},
        "sampling": {"m_ug": sampling.m_ug, "m_bg": sampling.m_bg, "m_us": sampling.m_us, "m_bs": sampling.m_bs,
                     "sobol_seed": sampling.sobol_seed},
        "datasets": datasets,
    }


def cmd_gen(cfg: RunConfig) -> Path:
    out = prepare_out_dir(cfg)
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(make_manifest(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(cfg: RunConfig) -> dict:
    path = cfg.out_dir / MANIFEST_NAME
    if not path.exists():
        raise MissingArtifactError(f"no dataset manifest at {path}; run 'capa gen' first")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest != make_manifest(cfg):
        raise ConfigError(f"{path} was generated from a different configuration; rerun 'capa gen'")
    return manifest


def datasets_from_manifest(manifest: dict, kind: str, setup: SystemSetup, sampling) -> tuple[np.ndarray, DatasetPair]:
    """Regenerate the training positions and paired datasets of ``kind``."""
    p = manifest["positions"]
    positions = user_positions(setup.region, p["count"], p["root_seed"], p["tag"])
    return positions, build_datasets(kind, setup, sampling, positions)


# --- models and checkpoints ---------------------------------------------------------------

def checkpoint_paths(out: Path, kind: str) -> dict[str, Path]:
    return {"final": out / f"{kind}.ckpt", "best": out / f"{kind}.best.ckpt", "state": out / f"{kind}.state",
            "log": out / f"train_{kind}.csv"}


def model_from_checkpoint(ckpt: Checkpoint, cfg: RunConfig) -> INRModel:
    """Attach the configured encoder to checkpoint parameters, checking that
    the two agree."""
    setup = cfg.setup()
    if ckpt.num_streams != setup.phys.num_streams:
        raise ConfigError(f"checkpoint has N={ckpt.num_streams}, config resolves N={setup.phys.num_streams}")
    net = cfg.network(ckpt.kind)
    enc = make_encoder(ckpt.kind, setup, ckpt.num_frequencies, net.frequency_scale)
    if ckpt.widths[0] != enc.output_dim:
        raise ConfigError(f"checkpoint input width {ckpt.widths[0]} does not match the encoder ({enc.output_dim})")
    params = nn.MLPParams(ckpt.params.weights, ckpt.params.biases, net.activation)
    return INRModel(ckpt.kind, params, enc, net.carrier)


def load_model(cfg: RunConfig, kind: str, path=None) -> INRModel:
    path = Path(path) if path is not None else checkpoint_paths(cfg.out_dir, kind)["final"]
    if not path.exists():
        raise MissingArtifactError(f"no {kind} checkpoint at {path}")
    ckpt = load_checkpoint(path, cfg.network(kind).activation)
    if ckpt.kind != kind:
        raise ConfigError(f"{path} holds a {ckpt.kind} model, expected {kind}")
    return model_from_checkpoint(ckpt, cfg)


def _to_checkpoint(model: INRModel) -> Checkpoint:
    return Checkpoint(model.kind, model.n_streams, model.encoder.num_frequencies, model.params)


# --- train ------------------------------------------------------------------------------

TRAIN_LOG_HEADER = ["epoch", "mean_train_loss", "eval_se_bits", "wall_s"]


def _write_train_log(path: Path, rows: list[dict]) -> None:
    write_csv(path, TRAIN_LOG_HEADER, [[r[h] for h in TRAIN_LOG_HEADER] for r in rows])


def eval_positions(cfg: RunConfig) -> np.ndarray:
    return user_positions(cfg.setup().region, cfg["eval"]["positions"], cfg.root_seed, cfg["eval"]["position_tag"])


def cmd_train(cfg: RunConfig, resume: bool = False) -> dict[str, Path]:
    """Train every configured model; returns the final checkpoint paths.

    ``<kind>.ckpt`` and the resume state are rewritten after every epoch,
    ``<kind>.best.ckpt`` whenever the held-out SE improves.  With ``resume``
    an existing state continues where it stopped.
    """
    out = prepare_out_dir(cfg)
    manifest = load_manifest(cfg)
    setup, sampling = cfg.setup(), cfg.sampling()
    train_cfg = cfg.train_config()
    det = cfg.deterministic
    ev = eval_positions(cfg)
    results = {}
    for kind in cfg["training"]["models"]:
        net = cfg.network(kind)
        dtype = np.float32 if cfg.network_values(kind)["precision"] == "float32" else np.float64
        paths = checkpoint_paths(out, kind)
        positions, _ = datasets_from_manifest(manifest, kind, setup, sampling)
        state = None
        best = -math.inf
        if resume and paths["state"].exists() and paths["final"].exists():
            model = load_model(cfg, kind, paths["final"])
            rs = load_state(paths["state"], model.params)
            state = TrainState(model, rs.adam, rs.epoch, rs.log)
            best = max((r["eval_se_bits"] for r in rs.log), default=-math.inf)
            log.info("%s: resuming at epoch %d", kind, rs.epoch)

        def on_epoch(st: TrainState, row, _paths=paths, _kind=kind):
            nonlocal best
            st.log[-1]["wall_s"] = _timing(st.log[-1]["wall_s"], det)
            save_checkpoint(_paths["final"], _to_checkpoint(st.model))
            save_state(_paths["state"], ResumeState(st.epoch, st.log, st.adam))
            _write_train_log(_paths["log"], st.log)
            if row.eval_se_bits > best:
                best = row.eval_se_bits
                save_checkpoint(_paths["best"], _to_checkpoint(st.model))

        if state is None:
            state = init_state(kind, setup, net, train_cfg)
            save_checkpoint(paths["final"], _to_checkpoint(state.model))
            save_checkpoint(paths["best"], _to_checkpoint(state.model))
            save_state(paths["state"], ResumeState(0, [], state.adam))
            _write_train_log(paths["log"], [])
        try:
            train(kind, setup, sampling, net, train_cfg, state=state, on_epoch=on_epoch, positions=positions,
                  eval_positions=ev, dtype=dtype)
        except TrainingDiverged:
            log.error("%s: training diverged; last good checkpoint kept at %s", kind, paths["final"])
            raise
        results[kind] = paths["final"]
    return results


# --- eval -------------------------------------------------------------------------------

EVAL_HEADER = ["index", "r_x", "r_y", "r_z", "se_bits", "power_residual", "degenerate", "wall_s"]


def cmd_eval(cfg: RunConfig, checkpoint=None) -> dict[str, Path]:
    """Per-position SE of each trained model on the high-resolution grids."""
    out = prepare_out_dir(cfg)
    setup = cfg.setup()
    positions = eval_positions(cfg)
    det = cfg.deterministic
    results = {}
    kinds = cfg["training"]["models"]
    if checkpoint is not None:
        kinds = (load_checkpoint(checkpoint).kind,)
    for kind in kinds:
        model = load_model(cfg, kind, checkpoint)

        def one(k, _model=model):
            return evaluate_model(_model, positions[k:k + 1], setup, cfg["eval"]["m_ug"], cfg.eval_m_bg)[0]

        rows = run_pool(one, range(len(positions)), det)
        table = [[k, *r.r_o, r.se_bits, r.power_residual, r.degenerate, _timing(r.wall_s, det)]
                 for k, r in enumerate(rows)]
        results[kind] = write_csv(out / f"eval_{kind}.csv", EVAL_HEADER, table)
    return results


# --- baselines ----------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalContext:
    """Everything needed to score a method at one user position."""

    setup: SystemSetup
    tx: QuadratureGrid        # high-resolution BS grid
    ue_local: QuadratureGrid  # high-resolution user grid in local coordinates
    wmmse_tol: float = 1e-6
    wmmse_max_iter: int = 200
    truncation: int | None = None
    spacing: float | None = None
    models: tuple = ()

    @classmethod
    def from_config(cls, cfg: RunConfig, setup: SystemSetup | None = None, models: dict | None = None, **kw):
        setup = setup or cfg.setup()
        opts = dict(wmmse_tol=cfg["eval"]["wmmse_tol"], wmmse_max_iter=cfg["eval"]["wmmse_max_iter"],
                    truncation=cfg.fourier_truncation, spacing=cfg.spda_spacing)
        opts.update({k: v for k, v in kw.items() if v is not None})
        return cls(setup, gl_grid(setup.bs, cfg.eval_m_bg), gl_grid(setup.ue, cfg["eval"]["m_ug"]),
                   models=tuple(sorted((models or {}).items())), **opts)

    def model(self, kind: str) -> INRModel:
        for k, m in self.models:
            if k == kind:
                return m
        raise MissingArtifactError(f"no trained {kind} model available")


@dataclass
class MethodResult:
    se_bits: float
    power_residual: float
    wall_s: float
    iterations: int = 0
    converged: bool = True


def _score(w: BeamformerSamples, rx: QuadratureGrid, setup: SystemSetup) -> tuple[float, float]:
    p_max = setup.phys.power_budget
    v = normalize_power(w, p_max)
    residual = abs(transmit_power(v) - p_max) / p_max
    return beamformer_se(v, rx, setup.phys), residual


def run_method(method: str, ctx: EvalContext, r_o: np.ndarray, seed: int = 0) -> MethodResult:
    """Solve (or infer) ``method`` at ``r_o`` and score it on the context grids."""
    setup = ctx.setup
    phys = setup.phys
    rx = ctx.ue_local.translated(r_o)
    t0 = time.perf_counter()
    iterations, converged = 0, True
    if method == "wmmse":
        Hd = discretize_channel(ctx.tx, rx, phys)
        res = wmmse_solve(Hd, phys.power_budget, phys.noise_sigma2, phys.num_streams, ctx.wmmse_tol,
                          ctx.wmmse_max_iter, seed=seed)
        w = Hd.to_samples(res.v)
        iterations, converged = res.iterations, res.converged
    elif method == "fourier":
        Hd = discretize_channel(ctx.tx, rx, phys)
        t = ctx.truncation
        w = fourier_solve(Hd, setup.bs, phys, None if t is None else (t, t)).w
    elif method == "spda":
        w = spda_solve(setup.bs, setup.ue, r_o, phys, ctx.spacing).evaluate(ctx.tx)
    elif method in (BEAINR, COEFINR):
        w = model_beamformer(ctx.model(method), r_o, ctx.tx, ctx.ue_local, phys)
        if not transmit_power(w) > 0:
            return MethodResult(0.0, 1.0, time.perf_counter() - t0, 0, False)
    else:
        raise ConfigError(f"unknown method {method!r}")
    wall = time.perf_counter() - t0
    se, residual = _score(w, rx, setup)
    return MethodResult(se, residual, wall, iterations, converged)


BASELINE_HEADER = ["index", "r_x", "r_y", "r_z", "se_bits", "power_residual", "iterations", "converged", "wall_s"]


def cmd_baseline(cfg: RunConfig, method: str, tol=None, max_iter=None, truncation=None, spacing=None) -> Path:
    out = prepare_out_dir(cfg)
    if method not in ("wmmse", "fourier", "spda"):
        raise ConfigError(f"unknown baseline method {method!r}")
    ctx = EvalContext.from_config(cfg, wmmse_tol=tol, wmmse_max_iter=max_iter, truncation=truncation,
                                  spacing=spacing)
    positions = eval_positions(cfg)
    det = cfg.deterministic
    rows = run_pool(lambda k: run_method(method, ctx, positions[k], subseed(cfg.root_seed, "wmmse", k)),
                    range(len(positions)), det)
    table = [[k, *positions[k], r.se_bits, r.power_residual, r.iterations, r.converged, _timing(r.wall_s, det)]
             for k, r in enumerate(rows)]
    return write_csv(out / f"baseline_{method}.csv", BASELINE_HEADER, table)


# --- sweep --------------------------------------------------------------------------------

SWEEP_HEADER = ["sweep_param", "value", "method", "mean_se_bits", "std_se_bits", "n_positions",
                "ratio_to_wmmse", "wall_s"]


def swept_setup(setup: SystemSetup, axis: str, value: float) -> SystemSetup:
    """Setup with one parameter replaced; aperture values are areas of a
    square aperture."""
    if axis == "power":
        return replace(setup, phys=setup.phys.with_power(value))
    side = math.sqrt(value)
    if axis == "aperture_bs":
        return replace(setup, bs=Aperture(setup.bs.center, side, side))
    if axis == "aperture_ue":
        return replace(setup, ue=Aperture(setup.ue.center, side, side))
    raise ConfigError(f"unknown sweep axis {axis!r}")


@dataclass
class SweepRow:
    sweep_param: str
    value: float
    method: str
    mean_se_bits: float
    std_se_bits: float
    n_positions: int
    ratio_to_wmmse: float
    wall_s: float
    per_position: list[float]

    def as_list(self) -> list:
        return [self.sweep_param, self.value, self.method, self.mean_se_bits, self.std_se_bits,
                self.n_positions, self.ratio_to_wmmse, self.wall_s]


def sweep(cfg: RunConfig, axis: str, values, methods, positions: np.ndarray | None = None,
          models: dict | None = None) -> list[SweepRow]:
    """Mean SE per (value, method) over a shared position set.

    INR methods re-evaluate fixed checkpoints; on the aperture axes the
    networks keep the coordinate normalization they were trained with.
    """
    methods = list(methods)
    positions = eval_positions(cfg) if positions is None else positions
    if models is None:
        models = {m: load_model(cfg, m) for m in methods if m in (BEAINR, COEFINR)}
    det = cfg.deterministic
    base = cfg.setup()
    contexts = {v: EvalContext.from_config(cfg, swept_setup(base, axis, v), models) for v in values}
    cells = [(v, m, k) for v in values for m in methods for k in range(len(positions))]
    results = run_pool(lambda c: run_method(c[1], contexts[c[0]], positions[c[2]],
                                            subseed(cfg.root_seed, "wmmse", c[2])), cells, det)
    by_cell = {c: r for c, r in zip(cells, results)}
    rows = []
    for v in values:
        means = {}
        for m in methods:
            se = np.array([by_cell[(v, m, k)].se_bits for k in range(len(positions))])
            means[m] = float(np.mean(se)) if len(se) else float("nan")
            wall = sum(by_cell[(v, m, k)].wall_s for k in range(len(positions)))
            rows.append(SweepRow(axis, float(v), m, means[m], float(np.std(se)) if len(se) else float("nan"),
                                 len(positions), float("nan"), _timing(wall, det), se.tolist()))
        if "wmmse" in means:
            for row in rows[-len(methods):]:
                row.ratio_to_wmmse = row.mean_se_bits / means["wmmse"] if means["wmmse"] > 0 else float("nan")
    rows.sort(key=lambda r: (r.value, r.method))
    return rows


def cmd_sweep(cfg: RunConfig, axis=None, values=None, methods=None) -> Path:
    out = prepare_out_dir(cfg)
    axis = axis or cfg["eval"]["sweep_axis"]
    values = tuple(values or cfg["eval"]["sweep_values"])
    methods = tuple(methods or cfg["eval"]["sweep_methods"])
    rows = sweep(cfg, axis, values, methods)
    return write_csv(out / f"sweep_{axis}.csv", SWEEP_HEADER, [r.as_list() for r in rows])


# --- bench --------------------------------------------------------------------------------

BENCH_HEADER = ["method", "n_repeats", "min_s", "median_s", "max_s", "note"]


def cmd_bench(cfg: RunConfig, methods=None) -> Path:
    """Median-of-``bench_repeats`` inference wall time at the first
    evaluation position.  Timings are hardware-bound and non-normative."""
    out = prepare_out_dir(cfg)
    methods = tuple(methods or cfg["eval"]["sweep_methods"])
    models = {m: load_model(cfg, m) for m in methods if m in (BEAINR, COEFINR)}
    ctx = EvalContext.from_config(cfg, models=models)
    positions = eval_positions(cfg)
    r_o = positions[0] if len(positions) else np.array([0.0, 0.0, np.mean(cfg.setup().region.z_range)])
    rows = []
    for m in methods:
        times = [run_method(m, ctx, r_o).wall_s for _ in range(cfg["eval"]["bench_repeats"])]
        rows.append([m, len(times), min(times), float(np.median(times)), max(times), TIMING_NOTE])
    return write_csv(out / "bench.csv", BENCH_HEADER, rows)
