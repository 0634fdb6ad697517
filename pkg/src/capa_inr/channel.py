"""Line-of-sight dyadic Green's function channel between two apertures."""
from __future__ import annotations

import numpy as np

from .errors import SingularityError
from .geometry import PhysicalConfig

SINGULARITY_EPS = 1e-9

POLARIZATION = np.array([0.0, 1.0, 0.0])


def _separation(r, s):
    d = np.asarray(r, dtype=np.float64) - np.asarray(s, dtype=np.float64)
    dist = np.sqrt(np.einsum("...i,...i->...", d, d))
    if np.any(dist < SINGULARITY_EPS):
        raise SingularityError(f"channel evaluated at coincident points (|r - s| < {SINGULARITY_EPS} m)")
    return d, dist


def _prefactor(dist, cfg: PhysicalConfig):
    lam = cfg.wavelength
    return -1j * cfg.impedance_eta * np.exp(-2j * np.pi * dist / lam) / (2.0 * lam * dist)


def dyadic_green(r, s, cfg: PhysicalConfig) -> np.ndarray:
    """Full 3x3 dyadic channel ``h(r, s)``.

    Broadcasts over leading axes of ``r`` and ``s``; the result has shape
    ``broadcast(r, s).shape[:-1] + (3, 3)``.
    """
    d, dist = _separation(r, s)
    proj = np.eye(3) - d[..., :, None] * d[..., None, :] / (dist**2)[..., None, None]
    return _prefactor(dist, cfg)[..., None, None] * proj


def scalar_channel(r, s, cfg: PhysicalConfig) -> complex | np.ndarray:
    """Polarization-projected channel ``u^T h(r, s) u`` with ``u = y-hat``."""
    h = dyadic_green(r, s, cfg)
    out = np.einsum("i,...ij,j->...", POLARIZATION, h, POLARIZATION)
    return out[()] if out.ndim == 0 else out


def channel_matrix(rx_points: np.ndarray, tx_points: np.ndarray, cfg: PhysicalConfig) -> np.ndarray:
    """Scalar channel for every (rx, tx) pair, shape ``(n_rx, n_tx)``.

    Evaluates ``u^T (I - d d^T / |d|^2) u = 1 - d_y^2 / |d|^2`` directly rather
    than forming the 3x3 dyadic per pair; identical to :func:`scalar_channel`.
    """
    rx = np.asarray(rx_points, dtype=np.float64)
    tx = np.asarray(tx_points, dtype=np.float64)
    dx = rx[:, None, 0] - tx[None, :, 0]
    dy = rx[:, None, 1] - tx[None, :, 1]
    dz = rx[:, None, 2] - tx[None, :, 2]
    dy *= dy
    dist2 = dx * dx
    dist2 += dy
    dz *= dz
    dist2 += dz
    dist = np.sqrt(dist2)
    if dist.size and dist.min() < SINGULARITY_EPS:
        raise SingularityError(f"channel evaluated at coincident points (|r - s| < {SINGULARITY_EPS} m)")
    amp = np.divide(dy, dist2, out=dy)
    np.subtract(1.0, amp, out=amp)
    amp /= dist
    amp *= cfg.impedance_eta / (2.0 * cfg.wavelength)
    out = np.exp(np.multiply(dist, -1j * cfg.wavenumber))
    # -j (c + j s) = s - j c
    cos_kd = out.real.copy()
    np.multiply(amp, out.imag, out=out.real)
    np.multiply(amp, cos_kd, out=out.imag)
    np.negative(out.imag, out=out.imag)
    return out
