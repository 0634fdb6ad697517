"""Numerical baselines on quadrature-discretized apertures: SVD with
water-filling, matrix WMMSE, truncated Fourier series and a discrete
(SPDA) array."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import channel_matrix
from .geometry import Aperture, PhysicalConfig
from .integration import QuadratureGrid
from .objective import BeamformerSamples, spectral_efficiency

WMMSE_TOL = 1e-6
WMMSE_MAX_ITER = 200
WMMSE_INIT_ITERS = 500
POWER_BISECTION_RTOL = 1e-10


@dataclass(frozen=True)
class DiscretizedChannel:
    """``H_d[i, j] = sqrt(q_i) h(r_i, s_j) sqrt(p_j)``.

    With ``v = sqrt(p) * w`` the covariance is ``(H_d v)^H (H_d v)`` and the
    transmit power is ``|v|^2``.
    """

    matrix: np.ndarray
    tx_grid: QuadratureGrid
    rx_grid: QuadratureGrid

    @property
    def sqrt_p(self) -> np.ndarray:
        return np.sqrt(self.tx_grid.weights)

    def to_samples(self, v: np.ndarray) -> BeamformerSamples:
        return BeamformerSamples(self.tx_grid, v / self.sqrt_p[:, None])

    def to_weighted(self, w: BeamformerSamples) -> np.ndarray:
        return self.sqrt_p[:, None] * w.values


def discretize_channel(tx_grid: QuadratureGrid, rx_grid: QuadratureGrid, cfg: PhysicalConfig) -> DiscretizedChannel:
    H = channel_matrix(rx_grid.points, tx_grid.points, cfg)
    return DiscretizedChannel(np.sqrt(rx_grid.weights)[:, None] * H * np.sqrt(tx_grid.weights)[None, :],
                              tx_grid, rx_grid)


def weighted_se(H: np.ndarray, v: np.ndarray, sigma2: float) -> float:
    E = H @ v
    return spectral_efficiency(E.conj().T @ E, sigma2)


@dataclass
class WaterfillResult:
    singular_values: np.ndarray
    powers: np.ndarray
    water_level: float
    se_bits: float


def waterfill(gains: np.ndarray, p_max: float) -> tuple[np.ndarray, float]:
    """Maximize ``sum log(1 + p_k g_k)`` s.t. ``sum p_k = p_max``, ``p_k >= 0``.

    ``gains`` are channel-to-noise ratios.  Exact: the active set is the
    largest prefix of the sorted gains whose water level exceeds every
    included ``1/g_k``.  Returns ``(powers, water_level)``.
    """
    gains = np.asarray(gains, dtype=np.float64)
    powers = np.zeros_like(gains)
    order = np.argsort(-gains, kind="stable")
    g = gains[order]
    positive = g > 0
    if not positive.any():
        return powers, 0.0
    inv = 1.0 / g[positive]
    mu = 0.0
    k = len(inv)
    while k > 0:
        mu = (p_max + inv[:k].sum()) / k
        if mu > inv[k - 1]:
            break
        k -= 1
    alloc = np.maximum(mu - inv[:k], 0.0)
    alloc *= p_max / alloc.sum()
    powers[order[:k]] = alloc
    return powers, float(mu)


def svd_waterfill(H: DiscretizedChannel | np.ndarray, p_max: float, sigma2: float, n_streams: int):
    """Capacity-achieving beamformer of a discretized channel.

    Returns ``(WaterfillResult, v)`` where ``v`` (``n_tx x n_streams``) is the
    beamformer in weighted coordinates; use
    :meth:`DiscretizedChannel.to_samples` to map it back to function samples.
    """
    M = H.matrix if isinstance(H, DiscretizedChannel) else np.asarray(H)
    _, s, vh = np.linalg.svd(M, full_matrices=False)
    s_top = np.zeros(n_streams)
    m = min(n_streams, len(s))
    s_top[:m] = s[:m]
    powers, mu = waterfill(s_top**2 / sigma2, p_max)
    v = np.zeros((M.shape[1], n_streams), dtype=np.complex128)
    v[:, :m] = vh[:m].conj().T * np.sqrt(powers[:m])[None, :]
    se = float(np.sum(np.log2(1.0 + powers * s_top**2 / sigma2)))
    return WaterfillResult(s_top, powers, mu, se), v


@dataclass
class WMMSEResult:
    v: np.ndarray
    se_bits: float
    se_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _orthonormal_row_space(M: np.ndarray, rcond: float = 1e-13) -> np.ndarray:
    """Orthonormal basis of range(M^H) by column-pivoted QR (rank-revealing)."""
    import scipy.linalg

    q, r, _ = scipy.linalg.qr(M.conj().T, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > rcond * d[0])) if d.size and d[0] > 0 else 0
    return q[:, :rank]


def _block_power_init(Hr: np.ndarray, n_streams: int, iters: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    r = Hr.shape[1]
    X = rng.standard_normal((r, n_streams)) + 1j * rng.standard_normal((r, n_streams))
    Q, _ = np.linalg.qr(X)
    for _ in range(iters):
        Q, _ = np.linalg.qr(Hr.conj().T @ (Hr @ Q))
    return Q


def _power_constrained_update(G: np.ndarray, omega: np.ndarray, B: np.ndarray, p_max: float) -> np.ndarray:
    """``V = (G Omega G^H + mu I)^-1 B`` with ``mu >= 0`` meeting ``|V|^2 = p_max``."""
    A = G @ omega @ G.conj().T
    A = 0.5 * (A + A.conj().T)
    lam, U = np.linalg.eigh(A)
    lam = np.clip(lam, 0.0, None)
    C = U.conj().T @ B
    c2 = np.sum(np.abs(C) ** 2, axis=1)

    def power(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(c2 > 0, c2 / (lam + mu) ** 2, 0.0)
        return float(np.sum(terms))

    floor = 1e-14 * max(lam[-1], 1e-300)
    if lam[0] > floor and power(0.0) <= p_max:
        mu = 0.0
    else:
        lo, hi = 0.0, max(lam[-1], 1e-300)
        while power(hi) > p_max:
            hi *= 2.0
        while hi - lo > POWER_BISECTION_RTOL * hi:
            mid = 0.5 * (lo + hi)
            if power(mid) > p_max:
                lo = mid
            else:
                hi = mid
        mu = hi
    V = U @ (C / (lam + mu)[:, None])
    return V * math.sqrt(p_max / max(float(np.sum(np.abs(V) ** 2)), 1e-300))


def wmmse_solve(H: DiscretizedChannel | np.ndarray, p_max: float, sigma2: float, n_streams: int,
                tol: float = WMMSE_TOL, max_iter: int = WMMSE_MAX_ITER, seed: int = 0,
                v0: np.ndarray | None = None, init_iters: int = WMMSE_INIT_ITERS) -> WMMSEResult:
    """Single-user matrix WMMSE on the discretized channel.

    Iterates the receive filter ``U = (H V V^H H^H + s2 I)^-1 H V``, the MSE
    weight ``W = (I - U^H H V)^-1`` and the transmit update
    ``V = (H^H U W U^H H + mu I)^-1 H^H U W`` with ``mu`` bisected so the power
    constraint holds with equality.  Iterates live in ``range(H^H)`` (all
    updates preserve it), which is spanned by an orthonormal QR basis.
    Stops when the SE gain of an iteration falls below ``tol`` bits.

    At high SNR the WMMSE fixed point moves stream powers by only ~1/SNR per
    iteration, so the default start is an equal-power orthonormal block from
    ``init_iters`` steps of orthogonal (block power) iteration on ``H^H H``.
    """
    M = H.matrix if isinstance(H, DiscretizedChannel) else np.asarray(H)
    basis = _orthonormal_row_space(M)
    Hr = M @ basis
    n_rx, r = Hr.shape
    if v0 is None:
        V = _block_power_init(Hr, n_streams, init_iters, seed)
    else:
        V = basis.conj().T @ v0
    V *= math.sqrt(p_max / float(np.sum(np.abs(V) ** 2)))
    history = [weighted_se(Hr, V, sigma2)]
    best_V, best_se = V, history[0]
    converged = False
    it = 0
    eye_rx = np.eye(n_rx)
    eye_n = np.eye(n_streams)
    for it in range(1, max_iter + 1):
        HV = Hr @ V
        U = np.linalg.solve(HV @ HV.conj().T + sigma2 * eye_rx, HV)
        omega = np.linalg.inv(eye_n - U.conj().T @ HV)
        omega = 0.5 * (omega + omega.conj().T)
        G = Hr.conj().T @ U
        V = _power_constrained_update(G, omega, G @ omega, p_max)
        se = weighted_se(Hr, V, sigma2)
        history.append(se)
        if se > best_se:
            best_V, best_se = V, se
        if abs(se - history[-2]) < tol:
            converged = True
            break
    return WMMSEResult(basis @ best_V, best_se, history, it, converged)


# --- Fourier ---------------------------------------------------------------------

def fourier_basis(tx_grid: QuadratureGrid, ap: Aperture, truncation: tuple[int, int]) -> np.ndarray:
    """Samples of ``exp(j 2 pi (n_x s_x / L_x + n_y s_y / L_y))``, ``|n_x| <= N_x``, ``|n_y| <= N_y``."""
    nx_max, ny_max = truncation
    nx, ny = np.meshgrid(np.arange(-nx_max, nx_max + 1), np.arange(-ny_max, ny_max + 1), indexing="ij")
    rel = tx_grid.points - ap.center_array
    phase = np.outer(rel[:, 0], nx.ravel() / ap.len_x) + np.outer(rel[:, 1], ny.ravel() / ap.len_y)
    return np.exp(2j * np.pi * phase)


def default_truncation(ap: Aperture, wavelength: float) -> tuple[int, int]:
    return math.ceil(ap.len_x / wavelength - 1e-12), math.ceil(ap.len_y / wavelength - 1e-12)


@dataclass
class SubspaceSolution:
    w: BeamformerSamples
    se_bits: float
    dimension: int


def fourier_solve(Hd: DiscretizedChannel, ap: Aperture, cfg: PhysicalConfig,
                  truncation: tuple[int, int] | None = None, rcond: float = 1e-12) -> SubspaceSolution:
    """Optimal beamformer restricted to a truncated Fourier series.

    The basis is orthonormalized in the tx-quadrature inner product (SVD,
    dropping directions below ``rcond``), then the reduced channel is solved
    by SVD + water-filling, so the power constraint is exact on the grid.
    """
    if truncation is None:
        truncation = default_truncation(ap, cfg.wavelength)
    F = Hd.sqrt_p[:, None] * fourier_basis(Hd.tx_grid, ap, truncation)
    u, s, _ = np.linalg.svd(F, full_matrices=False)
    rank = int(np.sum(s > rcond * s[0]))
    Qf = u[:, :rank]
    res, b = svd_waterfill(Hd.matrix @ Qf, cfg.power_budget, cfg.noise_sigma2, cfg.num_streams)
    return SubspaceSolution(Hd.to_samples(Qf @ b), res.se_bits, rank)


# --- SPDA ------------------------------------------------------------------------

@dataclass
class SPDASolution:
    """Discrete-array beamformer: one complex weight per patch and stream."""

    aperture: Aperture
    spacing_x: float
    spacing_y: float
    centers: np.ndarray
    weights: np.ndarray  # (n_patches, N), current density per patch
    se_bits: float       # SE of the discrete array model

    def patch_index(self, points: np.ndarray) -> np.ndarray:
        nx = round(self.aperture.len_x / self.spacing_x)
        ny = round(self.aperture.len_y / self.spacing_y)
        rel = points - self.aperture.center_array
        ix = np.clip(np.floor((rel[:, 0] + self.aperture.len_x / 2) / self.spacing_x), 0, nx - 1).astype(int)
        iy = np.clip(np.floor((rel[:, 1] + self.aperture.len_y / 2) / self.spacing_y), 0, ny - 1).astype(int)
        return ix * ny + iy

    def evaluate(self, tx_grid: QuadratureGrid) -> BeamformerSamples:
        """Piecewise-constant current on an arbitrary tx grid."""
        return BeamformerSamples(tx_grid, self.weights[self.patch_index(tx_grid.points)])


def patch_grid(ap: Aperture, spacing: float) -> QuadratureGrid:
    """Patch centres of ``ap`` with area weights.

    Patches have edge ``L / round(L / spacing)`` (at least one per axis).
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    nx = max(1, round(ap.len_x / spacing))
    ny = max(1, round(ap.len_y / spacing))
    dx, dy = ap.len_x / nx, ap.len_y / ny
    cx = ap.center_array[0] - ap.len_x / 2 + (np.arange(nx) + 0.5) * dx
    cy = ap.center_array[1] - ap.len_y / 2 + (np.arange(ny) + 0.5) * dy
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel(), np.full(nx * ny, ap.center_array[2])], axis=1)
    return QuadratureGrid(centers, np.full(nx * ny, dx * dy), "spda", ap)


def spda_solve(bs: Aperture, ue: Aperture, r_o, cfg: PhysicalConfig, spacing: float | None = None) -> SPDASolution:
    """Discretize both apertures into patches and solve the resulting array.

    ``ue`` is given in local coordinates and placed at ``r_o``.  Each patch
    is represented by its centre with weight equal to its area (default
    spacing ``lambda / 2``).  The returned ``se_bits`` is the SE of the
    discrete model; use :meth:`SPDASolution.evaluate` to score the current
    on a continuous-aperture grid.
    """
    spacing = cfg.wavelength / 2 if spacing is None else spacing
    tx = patch_grid(bs, spacing)
    rx = patch_grid(ue, spacing).translated(np.asarray(r_o, dtype=np.float64))
    Hd = discretize_channel(tx, rx, cfg)
    res, v = svd_waterfill(Hd, cfg.power_budget, cfg.noise_sigma2, cfg.num_streams)
    nx = max(1, round(bs.len_x / spacing))
    ny = max(1, round(bs.len_y / spacing))
    return SPDASolution(bs, bs.len_x / nx, bs.len_y / ny, tx.points, v / Hd.sqrt_p[:, None], res.se_bits)
