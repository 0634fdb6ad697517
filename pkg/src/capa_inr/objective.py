"""Spectral-efficiency objective over quadrature-discretized apertures.

Beamformers are sampled on a transmit grid; the effective received signal,
its covariance, transmit power and spectral efficiency are all weighted sums
over the corresponding grids.  :func:`normalized_se_and_grad` is the
differentiable core used for training.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import channel_matrix
from .errors import DegenerateBeamformerError, NumericalPSDError
from .geometry import PhysicalConfig
from .integration import QuadratureGrid

PSD_TOL = 1e-10
LN2 = math.log(2.0)


@dataclass(frozen=True)
class BeamformerSamples:
    """Beamformer values on ``tx_grid``: one row per point, one column per stream."""

    tx_grid: QuadratureGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.tx_grid):
            raise ValueError(f"beamformer shape {self.values.shape} does not match grid of {len(self.tx_grid)} points")

    @property
    def n_streams(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "BeamformerSamples":
        return BeamformerSamples(self.tx_grid, np.asarray(values, dtype=np.complex128))


@dataclass(frozen=True)
class EffectiveSignal:
    rx_points: np.ndarray
    values: np.ndarray


class RankDeficiencyWarning(RuntimeWarning):
    """The channel Gram matrix was numerically rank deficient."""


def weighted_channel(rx_points, tx_grid: QuadratureGrid, cfg: PhysicalConfig) -> np.ndarray:
    """``H[i, j] = h(r_i, s_j) * p_j`` so that ``e = H @ w``."""
    return channel_matrix(rx_points, tx_grid.points, cfg) * tx_grid.weights[None, :]


def effective_signal(w: BeamformerSamples, rx_points, cfg: PhysicalConfig) -> EffectiveSignal:
    rx_points = np.atleast_2d(np.asarray(rx_points, dtype=np.float64))
    return EffectiveSignal(rx_points, weighted_channel(rx_points, w.tx_grid, cfg) @ w.values)


def covariance(e: EffectiveSignal | np.ndarray, rx_grid: QuadratureGrid) -> np.ndarray:
    """``Q = sum_i q_i e(r_i)^H e(r_i)``."""
    values = e.values if isinstance(e, EffectiveSignal) else np.asarray(e)
    if values.shape[0] != len(rx_grid):
        raise ValueError(f"effective signal has {values.shape[0]} rows, rx grid has {len(rx_grid)} points")
    q = rx_grid.weights
    return values.conj().T @ (q[:, None] * values)


def _checked_eigvals(Q: np.ndarray) -> np.ndarray:
    Q = 0.5 * (Q + Q.conj().T)
    lam = np.linalg.eigvalsh(Q)
    scale = max(float(np.real(np.trace(Q))), 0.0)
    if lam.size and lam[0] < -PSD_TOL * max(scale, np.finfo(float).tiny):
        raise NumericalPSDError(f"covariance has eigenvalue {lam[0]:.3e} (trace {scale:.3e})")
    return np.clip(lam, 0.0, None)


def spectral_efficiency(Q: np.ndarray, sigma2: float) -> float:
    """``log2 det(I + Q / sigma2)`` in bits, via the Hermitian eigenvalues."""
    lam = _checked_eigvals(np.asarray(Q, dtype=np.complex128))
    return float(np.sum(np.log2(1.0 + lam / sigma2)))


def transmit_power(w: BeamformerSamples) -> float:
    return float(np.sum(w.tx_grid.weights[:, None] * np.abs(w.values) ** 2))


def normalize_power(w: BeamformerSamples, p_max: float) -> BeamformerSamples:
    power = transmit_power(w)
    if not power > 0:
        raise DegenerateBeamformerError("cannot normalize a beamformer with zero transmit power")
    return w.with_values(w.values * math.sqrt(p_max / power))


def beamformer_se(w: BeamformerSamples, rx_grid: QuadratureGrid, cfg: PhysicalConfig) -> float:
    """Spectral efficiency of ``w`` as given (no normalization)."""
    e = effective_signal(w, rx_grid.points, cfg)
    return spectral_efficiency(covariance(e, rx_grid), cfg.noise_sigma2)


@dataclass(frozen=True)
class Projection:
    parallel: BeamformerSamples
    perpendicular: BeamformerSamples
    rank: int
    rank_deficient: bool


def project_onto_channel_subspace(w: BeamformerSamples, rx_grid: QuadratureGrid, cfg: PhysicalConfig,
                                  rcond: float = 1e-12) -> Projection:
    """Split ``w`` into a part spanned by the channel and a part it cannot see.

    The subspace is spanned by ``conj(h(r_i, .))`` for the rx grid points,
    i.e. the range of the adjoint of ``w -> e``.  The projection is orthogonal
    in the tx-quadrature inner product ``<f, g> = sum_j p_j f_j conj(g_j)``, so
    ``w_perp`` produces exactly zero effective signal on the rx grid and
    ``power(w) = power(w_par) + power(w_perp)``.

    Singular directions below ``rcond`` times the largest are dropped (a
    truncated-SVD pseudo-inverse of the Gram matrix); ``rank_deficient`` flags
    that this happened.
    """
    sqrt_p = np.sqrt(w.tx_grid.weights)
    K = channel_matrix(rx_grid.points, w.tx_grid.points, cfg) * sqrt_p[None, :]
    _, s, vh = np.linalg.svd(K, full_matrices=False)
    rank = int(np.sum(s > rcond * s[0])) if s.size and s[0] > 0 else 0
    deficient = rank < min(K.shape)
    if deficient:
        warnings.warn(f"channel Gram matrix rank {rank} < {min(K.shape)}; using truncated pseudo-inverse",
                      RankDeficiencyWarning, stacklevel=2)
    basis = vh[:rank].conj().T
    v = sqrt_p[:, None] * w.values
    v_par = basis @ (basis.conj().T @ v)
    w_par = v_par / sqrt_p[:, None]
    return Projection(w.with_values(w_par), w.with_values(w.values - w_par), rank, deficient)


# --- differentiable core ------------------------------------------------------

def se_and_grad(W: np.ndarray, H: np.ndarray, q: np.ndarray, sigma2: float):
    """SE of beamformer samples ``W`` and its gradient.

    ``H`` is the weighted channel (``e = H @ W``) and ``q`` the rx weights.
    The gradient is returned in the form ``dSE/dRe(W) + 1j * dSE/dIm(W)``.
    """
    E = H @ W
    qE = q[:, None] * E
    Q = E.conj().T @ qE
    A = np.eye(Q.shape[0]) + Q / sigma2
    A = 0.5 * (A + A.conj().T)
    lam = _checked_eigvals(Q)
    se = float(np.sum(np.log2(1.0 + lam / sigma2)))
    grad_E = (2.0 / (sigma2 * LN2)) * np.linalg.solve(A, qE.conj().T).conj().T  # q E A^{-1}
    return se, H.conj().T @ grad_E


def normalized_se_and_grad(V: np.ndarray, p: np.ndarray, H: np.ndarray, q: np.ndarray,
                           cfg: PhysicalConfig):
    """SE after scaling ``V`` to the power budget, with gradient w.r.t. ``V``.

    Returns ``(se, grad, power)``; the gradient flows through the
    normalization factor.
    """
    power = float(np.sum(p[:, None] * (V.real**2 + V.imag**2)))
    if not power > 0:
        raise DegenerateBeamformerError("cannot normalize a beamformer with zero transmit power")
    alpha = math.sqrt(cfg.power_budget / power)
    se, g_w = se_and_grad(alpha * V, H, q, cfg.noise_sigma2)
    inner = float(np.real(np.vdot(g_w, V)))
    grad = alpha * g_w - (alpha * inner / power) * (p[:, None] * V)
    return se, grad, power
