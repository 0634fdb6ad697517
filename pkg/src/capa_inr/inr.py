"""BeaINR / CoefINR models, their GL and Sobol training sets, the mixed
loss and the training loop."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .channel import channel_matrix
from .errors import DegenerateBeamformerError, NumericalError
from .geometry import Aperture, PhysicalConfig, UserRegion, sample_user_position
from .integration import QuadratureGrid, gl_grid, sobol_grid
from .objective import BeamformerSamples, normalized_se_and_grad, spectral_efficiency, covariance
from .seeding import rng_for, subseed

log = logging.getLogger(__name__)

BEAINR = "beainr"
COEFINR = "coefinr"
MODEL_KINDS = (BEAINR, COEFINR)

ZERO_POWER_FRACTION = 1e-12
ZERO_POWER_PENALTY = 1e3


@dataclass(frozen=True)
class SystemSetup:
    """Physical parameters plus the two apertures (both centred at the origin)
    and the user-position region."""

    phys: PhysicalConfig
    bs: Aperture
    ue: Aperture
    region: UserRegion


@dataclass(frozen=True)
class SamplingConfig:
    m_ug: int
    m_bg: int
    m_us: int
    m_bs: int
    sobol_seed: int


@dataclass(frozen=True)
class NetworkConfig:
    hidden_width: int = 256
    hidden_layers: int = 4
    num_frequencies: int = 6
    frequency_scale: float = 1.0
    activation: str = "relu"
    carrier: str = "none"


CARRIERS = ("none", "focus")


@dataclass(frozen=True)
class TrainConfig:
    num_positions: int = 2000
    batch_size: int = 64
    epochs: int = 50
    lr: float = 1e-4
    lr_decay: float = 1.0
    lambda_mix: float = 0.1
    root_seed: int = 0
    eval_positions: int = 200
    eval_m_ug: int = 10
    eval_m_bg: int = 40


# --- models ---------------------------------------------------------------------

@dataclass
class INRModel:
    """A coordinate network plus the encoder that feeds it.

    BeaINR inputs are ``(s_x, s_y, r_ox, r_oy, r_oz)`` over the BS aperture;
    CoefINR inputs are ``(r_hat_x, r_hat_y, r_ox, r_oy, r_oz)`` over the user
    aperture in local coordinates.
    """

    kind: str
    params: nn.MLPParams
    encoder: nn.FourierFeatureMap
    carrier: str = "none"

    def __post_init__(self):
        if self.carrier not in CARRIERS:
            raise ValueError(f"unknown carrier {self.carrier!r}")
        if self.carrier != "none" and self.kind != BEAINR:
            raise ValueError("a carrier applies to BeaINR only")

    @property
    def n_streams(self) -> int:
        return self.params.n_outputs_complex


def focus_carrier(s: np.ndarray, r_o, phys: PhysicalConfig) -> np.ndarray:
    """``exp(j k (|r_o - s| - |r_o|))``: the phase of a beam focused on ``r_o``.

    With the ``"focus"`` carrier BeaINR outputs the envelope that multiplies
    this phase, so the network only has to represent a slowly varying
    function.
    """
    r_o = np.asarray(r_o, dtype=np.float64)
    d = np.linalg.norm(np.atleast_2d(s) - r_o, axis=1) - np.linalg.norm(r_o)
    return np.exp(1j * phys.wavenumber * d)


def make_encoder(kind: str, setup: SystemSetup, num_frequencies: int = 6, scale: float = 1.0) -> nn.FourierFeatureMap:
    ap = setup.bs if kind == BEAINR else setup.ue
    c = ap.center_array
    b = setup.region.bounds
    lower = (c[0] - ap.len_x / 2, c[1] - ap.len_y / 2, *b[:, 0])
    upper = (c[0] + ap.len_x / 2, c[1] + ap.len_y / 2, *b[:, 1])
    return nn.FourierFeatureMap(tuple(map(float, lower)), tuple(map(float, upper)), num_frequencies, scale)


def make_model(kind: str, setup: SystemSetup, net: NetworkConfig, seed: int, zero: bool = False) -> INRModel:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    enc = make_encoder(kind, setup, net.num_frequencies, net.frequency_scale)
    widths = [enc.output_dim] + [net.hidden_width] * net.hidden_layers + [2 * setup.phys.num_streams]
    return INRModel(kind, nn.init_mlp(widths, seed, net.activation, zero=zero), enc, net.carrier)


POINT_COLUMNS = (0, 1)
POSITION_COLUMNS = (2, 3, 4)


def network_input(encoder: nn.FourierFeatureMap, point_sets, centers, shared_points: bool = False) -> nn.FactoredInput:
    """Encoded input for one or more samples.

    ``point_sets`` is a list of ``(n_k, 3)`` aperture point arrays (a single
    array when ``shared_points``), ``centers`` the matching user centres.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    group = nn.encode(centers, encoder, POSITION_COLUMNS)
    if shared_points:
        pts = np.atleast_2d(point_sets)
        sizes = (len(pts),) * len(centers)
        point = nn.encode(pts[:, :2], encoder, POINT_COLUMNS)
    else:
        sizes = tuple(len(p) for p in point_sets)
        point = nn.encode(np.concatenate([np.atleast_2d(p)[:, :2] for p in point_sets]), encoder, POINT_COLUMNS)
    return nn.FactoredInput(point, group, sizes, shared_points)


def _eval(model: INRModel, points, r_o) -> np.ndarray:
    out, _ = nn.forward(model.params, network_input(model.encoder, np.atleast_2d(points), [r_o], shared_points=True))
    return out


def beainr_eval(model: INRModel, s, r_o, phys: PhysicalConfig | None = None) -> np.ndarray:
    """Beamformer values ``w(s)`` for BS points ``s``; shape ``(n, N)``.

    ``phys`` is needed only when the model uses a carrier.
    """
    out = _eval(model, s, r_o)
    if model.carrier == "focus":
        if phys is None:
            raise ValueError("a model with a carrier needs the physical config")
        out = out * focus_carrier(s, r_o, phys)[:, None]
    return out


def coefinr_eval(model: INRModel, r_hat, r_o) -> np.ndarray:
    """Coefficient values ``c(r)`` at local user points ``r_hat``; shape ``(n, N)``."""
    return _eval(model, r_hat, r_o)


def reconstruct_beamformer(c_samples: np.ndarray, ue_grid: QuadratureGrid, tx_grid: QuadratureGrid,
                           phys: PhysicalConfig, conjugate: bool = True) -> BeamformerSamples:
    """Beamformer as a channel-weighted integral of a coefficient function.

    ``w(s_j) = sum_i q_i k(r_i, s_j) c(r_i)`` over the (global) user grid,
    with kernel ``k = conj(h)`` by default so that the result lies in the
    range of the adjoint channel.  ``conjugate=False`` uses ``h`` itself.
    """
    return BeamformerSamples(tx_grid, _reconstruction_operator(ue_grid, tx_grid, phys, conjugate) @ c_samples)


def _reconstruction_operator(ue_grid, tx_grid, phys, conjugate=True, H=None):
    if H is None:
        H = channel_matrix(ue_grid.points, tx_grid.points, phys)
    K = H.conj() if conjugate else H
    return K.T * ue_grid.weights[None, :]


# --- datasets -------------------------------------------------------------------

def user_positions(region: UserRegion, count: int, root_seed: int, tag: str = "positions") -> np.ndarray:
    """``count`` user centres; position ``k`` depends only on ``(root_seed, tag, k)``."""
    out = np.empty((count, 3))
    for k in range(count):
        out[k] = sample_user_position(region, rng_for(root_seed, tag, k))
    return out


@dataclass(frozen=True)
class TrainSampleGL:
    grid: QuadratureGrid  # shared by every sample of the dataset
    r_o: np.ndarray
    index: int


@dataclass(frozen=True)
class TrainSampleSobol:
    aperture: Aperture
    count: int
    seed: int
    r_o: np.ndarray
    index: int

    @property
    def grid(self) -> QuadratureGrid:
        return sobol_grid(self.aperture, self.count, self.seed)


@dataclass
class DatasetPair:
    """Paired GL and Sobol datasets for one model; entry ``k`` of each shares
    the same user centre."""

    kind: str
    gl: list[TrainSampleGL]
    sobol: list[TrainSampleSobol]

    def __len__(self):
        return len(self.gl)


def dataset_names(kind: str) -> tuple[str, str]:
    return ("D_BG", "D_BS") if kind == BEAINR else ("D_UG", "D_US")


def build_datasets(kind: str, setup: SystemSetup, sampling: SamplingConfig, positions: np.ndarray) -> DatasetPair:
    g_name, s_name = dataset_names(kind)
    if kind == BEAINR:
        shared, ap, count = gl_grid(setup.bs, sampling.m_bg), setup.bs, sampling.m_bs
    else:
        shared, ap, count = gl_grid(setup.ue, sampling.m_ug), setup.ue, sampling.m_us
    gl = [TrainSampleGL(shared, r_o, k) for k, r_o in enumerate(positions)]
    sob = [TrainSampleSobol(ap, count, subseed(sampling.sobol_seed, s_name, k), r_o, k)
           for k, r_o in enumerate(positions)]
    return DatasetPair(kind, gl, sob)


# --- per-sample geometry and loss ---------------------------------------------------

@dataclass
class SampleGeometry:
    """Grids used to evaluate one sample.

    ``net_points`` are the coordinates fed to the network (tx points for
    BeaINR, local user points for CoefINR).
    """

    tx: QuadratureGrid
    rx: QuadratureGrid
    net_points: np.ndarray
    r_o: np.ndarray
    H: np.ndarray = field(default=None, repr=False)  # scalar channel h(rx, tx)
    carrier: np.ndarray | None = field(default=None, repr=False)  # per-tx-point factor on the output


def sample_geometry(kind: str, sample, setup: SystemSetup, sampling: SamplingConfig,
                    tx_grid: QuadratureGrid | None = None, ue_grid: QuadratureGrid | None = None,
                    carrier: str = "none") -> SampleGeometry:
    """Resolve the tx grid, global rx grid and network inputs for a sample.

    Sobol samples randomize the aperture the network lives on; the other
    side uses its GL grid.
    """
    r_o = np.asarray(sample.r_o, dtype=np.float64)
    if kind == BEAINR:
        tx = sample.grid
        local_rx = ue_grid if ue_grid is not None else gl_grid(setup.ue, sampling.m_ug)
        net_points = tx.points
    else:
        local_rx = sample.grid
        tx = tx_grid if tx_grid is not None else gl_grid(setup.bs, sampling.m_bg)
        net_points = local_rx.points
    rx = local_rx.translated(r_o)
    c = focus_carrier(tx.points, r_o, setup.phys) if carrier == "focus" else None
    return SampleGeometry(tx, rx, net_points, r_o, channel_matrix(rx.points, tx.points, setup.phys), c)


def objective_from_output(kind: str, out: np.ndarray, geo: SampleGeometry, phys: PhysicalConfig):
    """Loss ``-SE`` and its gradient w.r.t. the raw complex network output.

    Returns ``(loss, grad, degenerate, se)``.  A (near) zero-power beamformer
    yields the fixed penalty loss with zero gradient.
    """
    p = geo.tx.weights
    Hw = geo.H * p[None, :]
    if kind == BEAINR:
        V = out if geo.carrier is None else out * geo.carrier[:, None]
    else:
        R = _reconstruction_operator(geo.rx, geo.tx, phys, H=geo.H)
        V = R @ out
    power = float(np.sum(p[:, None] * (V.real**2 + V.imag**2)))
    if not power >= ZERO_POWER_FRACTION * phys.power_budget:
        return ZERO_POWER_PENALTY, np.zeros_like(out), True, 0.0
    se, g_v, _ = normalized_se_and_grad(V, p, Hw, geo.rx.weights, phys)
    if kind == BEAINR:
        g = g_v if geo.carrier is None else g_v * geo.carrier.conj()[:, None]
    else:
        g = R.conj().T @ g_v
    return -se, -g, False, se


@dataclass
class BatchResult:
    losses: np.ndarray
    grads: list[np.ndarray]  # gradient of the mean loss
    degenerate: int


def batch_loss_and_grad(model: INRModel, samples, setup: SystemSetup, sampling: SamplingConfig,
                        cache: dict | None = None, dtype=np.float64) -> BatchResult:
    """Mean loss over ``samples`` with one stacked forward/backward pass.

    Per-sample terms are reduced in sample order, so results are
    deterministic.
    """
    cache = {} if cache is None else cache
    if "tx" not in cache:
        cache["tx"] = gl_grid(setup.bs, sampling.m_bg)
        cache["ue"] = gl_grid(setup.ue, sampling.m_ug)
    geos = [sample_geometry(model.kind, s, setup, sampling, cache["tx"], cache["ue"], model.carrier)
            for s in samples]
    shared = all(g.net_points is geos[0].net_points for g in geos)
    x = network_input(model.encoder, geos[0].net_points if shared else [g.net_points for g in geos],
                      [g.r_o for g in geos], shared_points=shared)
    out, tape = nn.forward(model.params, x, dtype)
    losses = np.empty(len(geos))
    grad_out = np.empty_like(out)
    degenerate, pos = 0, 0
    for i, g in enumerate(geos):
        n = len(g.net_points)
        loss, grad, degen, _ = objective_from_output(model.kind, out[pos:pos + n], g, setup.phys)
        losses[i] = loss
        grad_out[pos:pos + n] = grad / len(geos)
        degenerate += degen
        pos += n
    return BatchResult(losses, nn.backward(tape, grad_out), degenerate)


def sample_loss_gl(model: INRModel, sample: TrainSampleGL, setup: SystemSetup, sampling: SamplingConfig):
    """``(loss, grads)`` for a single GL sample."""
    res = batch_loss_and_grad(model, [sample], setup, sampling)
    return float(res.losses[0]), res.grads


def sample_loss_sobol(model: INRModel, sample: TrainSampleSobol, setup: SystemSetup, sampling: SamplingConfig):
    """``(loss, grads)`` for a single Sobol sample."""
    res = batch_loss_and_grad(model, [sample], setup, sampling)
    return float(res.losses[0]), res.grads


def total_loss(gl_losses, sobol_losses, lambda_mix: float) -> float:
    """``mean(L_GL) + lambda_mix * mean(L_Sobol)``."""
    gl_part = float(np.mean(gl_losses)) if len(gl_losses) else 0.0
    sobol_part = float(np.mean(sobol_losses)) if len(sobol_losses) else 0.0
    return gl_part + lambda_mix * sobol_part


def mixed_loss_and_grad(model: INRModel, gl_samples, sobol_samples, setup, sampling, lambda_mix: float,
                        cache: dict | None = None, dtype=np.float64):
    """Combined loss and gradient for a batch of paired samples."""
    gl = batch_loss_and_grad(model, gl_samples, setup, sampling, cache, dtype)
    if lambda_mix == 0 or not sobol_samples:
        return total_loss(gl.losses, [], lambda_mix), gl.grads, gl.degenerate
    sob = batch_loss_and_grad(model, sobol_samples, setup, sampling, cache, dtype)
    grads = [a + lambda_mix * b for a, b in zip(gl.grads, sob.grads)]
    return total_loss(gl.losses, sob.losses, lambda_mix), grads, gl.degenerate + sob.degenerate


# --- evaluation -------------------------------------------------------------------

@dataclass
class EvalRow:
    r_o: np.ndarray
    se_bits: float
    power_residual: float
    degenerate: bool
    wall_s: float


def model_beamformer(model: INRModel, r_o, tx_grid: QuadratureGrid, ue_grid_local: QuadratureGrid,
                     phys: PhysicalConfig) -> BeamformerSamples:
    """Un-normalized beamformer samples of ``model`` on ``tx_grid`` for user ``r_o``."""
    if model.kind == BEAINR:
        return BeamformerSamples(tx_grid, beainr_eval(model, tx_grid.points, r_o, phys))
    c = coefinr_eval(model, ue_grid_local.points, r_o)
    return reconstruct_beamformer(c, ue_grid_local.translated(r_o), tx_grid, phys)


def evaluate_model(model: INRModel, positions: np.ndarray, setup: SystemSetup, m_ug: int, m_bg: int,
                   bs: Aperture | None = None, ue: Aperture | None = None) -> list[EvalRow]:
    """Per-position SE of the power-normalized model beamformer on GL grids.

    ``bs``/``ue`` override the physical apertures (the encoder keeps the
    normalization it was built with).
    """
    tx = gl_grid(bs or setup.bs, m_bg)
    ue_local = gl_grid(ue or setup.ue, m_ug)
    phys = setup.phys
    rows = []
    for r_o in positions:
        t0 = time.perf_counter()
        w = model_beamformer(model, r_o, tx, ue_local, phys)
        p = tx.weights
        power = float(np.sum(p[:, None] * np.abs(w.values) ** 2))
        if not power >= ZERO_POWER_FRACTION * phys.power_budget:
            rows.append(EvalRow(np.asarray(r_o), 0.0, 1.0, True, time.perf_counter() - t0))
            continue
        v = w.values * math.sqrt(phys.power_budget / power)
        new_power = float(np.sum(p[:, None] * np.abs(v) ** 2))
        rx = ue_local.translated(r_o)
        e = (channel_matrix(rx.points, tx.points, phys) * p[None, :]) @ v
        se = spectral_efficiency(covariance(e, rx), phys.noise_sigma2)
        rows.append(EvalRow(np.asarray(r_o), se, abs(new_power - phys.power_budget) / phys.power_budget, False,
                            time.perf_counter() - t0))
    return rows


# --- training ---------------------------------------------------------------------

@dataclass
class TrainState:
    model: INRModel
    adam: nn.AdamState
    epoch: int = 0
    log: list[dict] = field(default_factory=list)


@dataclass
class LogRow:
    epoch: int
    mean_train_loss: float
    eval_se_bits: float
    wall_s: float


class TrainingDiverged(NumericalError):
    """Training hit a non-finite value; ``last_good`` holds the last model
    whose loss was finite."""

    def __init__(self, message: str, last_good: TrainState):
        super().__init__(message)
        self.last_good = last_good


def init_state(kind: str, setup: SystemSetup, net: NetworkConfig, train_cfg: TrainConfig) -> TrainState:
    model = make_model(kind, setup, net, subseed(train_cfg.root_seed, f"init:{kind}"))
    return TrainState(model, nn.AdamState(lr=train_cfg.lr))


def train(kind: str, setup: SystemSetup, sampling: SamplingConfig, net: NetworkConfig, train_cfg: TrainConfig,
          state: TrainState | None = None, on_epoch=None, positions: np.ndarray | None = None,
          eval_positions: np.ndarray | None = None, dtype=np.float64) -> TrainState:
    """Train (or resume training of) a BeaINR/CoefINR model.

    ``on_epoch(state, row)`` is called after each epoch.  Every random choice
    (initial weights, positions, Sobol scrambles, batch order) derives from
    ``train_cfg.root_seed`` and ``sampling.sobol_seed``, so a resumed run is
    bitwise identical to an uninterrupted one.  ``dtype`` is the network
    compute precision.
    """
    state = state or init_state(kind, setup, net, train_cfg)
    if positions is None:
        positions = user_positions(setup.region, train_cfg.num_positions, train_cfg.root_seed)
    if eval_positions is None:
        eval_positions = user_positions(setup.region, train_cfg.eval_positions, train_cfg.root_seed, "eval")
    data = build_datasets(kind, setup, sampling, positions)
    cache: dict = {}
    n = len(data)
    while state.epoch < train_cfg.epochs:
        t0 = time.perf_counter()
        epoch = state.epoch
        lr = train_cfg.lr * train_cfg.lr_decay ** epoch
        order = rng_for(train_cfg.root_seed, f"shuffle:{kind}", epoch).permutation(n) if n else np.arange(0)
        batch_losses = []
        good_model = state.model
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            try:
                loss, grads, _ = mixed_loss_and_grad(state.model, [data.gl[i] for i in idx],
                                                     [data.sobol[i] for i in idx], setup, sampling,
                                                     train_cfg.lambda_mix, cache, dtype)
            except NumericalError as exc:
                state.model = good_model
                raise TrainingDiverged(f"epoch {epoch}: {exc}", state) from exc
            if not (math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)):
                state.model = good_model
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", state)
            good_model = state.model
            new_params = nn.adam_step(state.model.params, grads, state.adam, lr)
            state.model = dataclasses.replace(state.model, params=new_params)
            batch_losses.append(loss)
        rows = evaluate_model(state.model, eval_positions, setup, train_cfg.eval_m_ug, train_cfg.eval_m_bg)
        eval_se = float(np.mean([r.se_bits for r in rows])) if rows else float("nan")
        row = LogRow(epoch + 1, float(np.mean(batch_losses)) if batch_losses else float("nan"), eval_se,
                     time.perf_counter() - t0)
        state.epoch += 1
        state.log.append(row.__dict__)
        log.info("%s epoch %d: train loss %.4f, eval SE %.4f bits (%.1fs)", kind, row.epoch,
                 row.mean_train_loss, row.eval_se_bits, row.wall_s)
        if on_epoch is not None:
            on_epoch(state, row)
    return state
