"""Coordinates, aperture geometry and system constants.

Points are plain ``numpy`` arrays whose last axis holds ``(x, y, z)`` in
meters.  Apertures are axis-aligned rectangles parallel to the global
xy-plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 3.0e8
FREE_SPACE_IMPEDANCE = 120.0 * math.pi


def point(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=np.float64)


@dataclass(frozen=True)
class Aperture:
    """Rectangular planar aperture centred at ``center``."""

    center: tuple[float, float, float]
    len_x: float
    len_y: float

    def __post_init__(self):
        if not (self.len_x > 0 and self.len_y > 0):
            raise ValueError(f"aperture edge lengths must be positive, got {self.len_x}, {self.len_y}")
        if not np.all(np.isfinite(self.center)):
            raise ValueError("aperture center must be finite")

    @property
    def area(self) -> float:
        return self.len_x * self.len_y

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def moved_to(self, center) -> "Aperture":
        return Aperture(tuple(float(c) for c in center), self.len_x, self.len_y)

    def contains(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        c = self.center_array
        inside_x = np.abs(pts[:, 0] - c[0]) <= self.len_x / 2 + tol
        inside_y = np.abs(pts[:, 1] - c[1]) <= self.len_y / 2 + tol
        in_plane = np.abs(pts[:, 2] - c[2]) <= tol
        return inside_x & inside_y & in_plane


@dataclass(frozen=True)
class PhysicalConfig:
    """Carrier, impedance, noise and power settings.

    ``num_streams`` of 0 means "not yet resolved"; use :func:`stream_count`
    and :meth:`with_streams` to fill it in.
    """

    freq_hz: float
    noise_sigma2: float
    power_budget: float
    num_streams: int = 1
    impedance_eta: float = FREE_SPACE_IMPEDANCE
    speed_of_light: float = SPEED_OF_LIGHT
    wavelength: float = field(init=False)

    def __post_init__(self):
        for name in ("freq_hz", "noise_sigma2", "power_budget", "impedance_eta", "speed_of_light"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if self.num_streams < 1:
            raise ValueError(f"num_streams must be >= 1, got {self.num_streams}")
        object.__setattr__(self, "wavelength", self.speed_of_light / self.freq_hz)

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    def with_power(self, power_budget: float) -> "PhysicalConfig":
        return PhysicalConfig(self.freq_hz, self.noise_sigma2, power_budget, self.num_streams,
                              self.impedance_eta, self.speed_of_light)

    def with_streams(self, num_streams: int) -> "PhysicalConfig":
        return PhysicalConfig(self.freq_hz, self.noise_sigma2, self.power_budget, num_streams,
                              self.impedance_eta, self.speed_of_light)


@dataclass(frozen=True)
class UserRegion:
    """Box from which user-aperture centres are drawn uniformly."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.z_range[0] <= 0:
            raise ValueError("z_range must be strictly positive (user in front of the BS plane)")

    @property
    def bounds(self) -> np.ndarray:
        """(3, 2) array of [low, high] per axis."""
        return np.array([self.x_range, self.y_range, self.z_range], dtype=np.float64)


def local_to_global(r_hat: np.ndarray, r_o: np.ndarray) -> np.ndarray:
    """Map user-aperture local points (z = 0) to the global frame."""
    r_hat = np.asarray(r_hat, dtype=np.float64)
    r_o = np.asarray(r_o, dtype=np.float64)
    if np.any(r_hat[..., 2] != 0):
        raise ValueError("local user-aperture points must have z == 0")
    return r_hat + r_o


def _modes(len_x: float, len_y: float, wavelength: float) -> int:
    nx = math.ceil(len_x / wavelength - 1e-12)
    ny = math.ceil(len_y / wavelength - 1e-12)
    return (2 * nx + 1) * (2 * ny + 1)


def stream_count(bs: Aperture, ue: Aperture, wavelength: float,
                 override: int | None = None) -> tuple[int, int, int]:
    """Spatial degrees of freedom on each side and the resulting stream count.

    Returns ``(M_B, M_U, N)`` with ``N = min(M_B, M_U)`` unless ``override``
    (which may not exceed that minimum) is given.
    """
    if not wavelength > 0:
        raise ValueError("wavelength must be positive")
    m_b = _modes(bs.len_x, bs.len_y, wavelength)
    m_u = _modes(ue.len_x, ue.len_y, wavelength)
    n = min(m_b, m_u)
    if override:
        if override > n:
            raise ValueError(f"stream override {override} exceeds min(M_B, M_U) = {n}")
        n = int(override)
    return m_b, m_u, n


def sample_user_position(region: UserRegion, rng_seed) -> np.ndarray:
    """Draw one user centre uniformly from ``region``.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    b = region.bounds
    return b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random(3)
