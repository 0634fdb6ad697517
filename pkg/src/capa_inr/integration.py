"""Gauss-Legendre tensor grids, Owen-scrambled Sobol point sets and the
weighted-sum integral estimator used for every aperture integral."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Aperture

GL_RESIDUAL_TOL = 1e-14
SOBOL_BITS = 32


@dataclass(frozen=True)
class GLRule1D:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)


def _legendre_with_derivative(order: int, x: np.ndarray):
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, order + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = order * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


@lru_cache(maxsize=64)
def _gl_rule_cached(order: int):
    half = (order + 1) // 2
    i = np.arange(1, half + 1)
    # Tricomi-style initial guess, descending from the largest root.
    x = np.cos(np.pi * (i - 0.25) / (order + 0.5))
    for _ in range(100):
        p, dp = _legendre_with_derivative(order, x)
        step = p / dp
        x = x - step
        if np.all(np.abs(step) <= 1e-16 * np.maximum(1.0, np.abs(x))) or np.all(np.abs(p) < GL_RESIDUAL_TOL):
            break
    # one more step once converged so the residual is at rounding level
    p, dp = _legendre_with_derivative(order, x)
    x = x - p / dp
    _, dp = _legendre_with_derivative(order, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    if order % 2:
        x[-1] = 0.0
        _, dp0 = _legendre_with_derivative(order, np.zeros(1))
        w[-1] = 2.0 / dp0[0] ** 2
        nodes = np.concatenate([-x[:-1], [0.0], x[-2::-1]])
        weights = np.concatenate([w, w[-2::-1]])
    else:
        nodes = np.concatenate([-x, x[::-1]])
        weights = np.concatenate([w, w[::-1]])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gl_rule(order: int) -> GLRule1D:
    """Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration."""
    if int(order) != order or order < 1:
        raise ValueError(f"Gauss-Legendre order must be a positive integer, got {order!r}")
    nodes, weights = _gl_rule_cached(int(order))
    return GLRule1D(nodes, weights)


@dataclass(frozen=True)
class QuadratureGrid:
    """Weighted sample points on an aperture.

    ``points`` has shape ``(n, 3)`` and ``weights`` shape ``(n,)``; weights sum
    to the aperture area.
    """

    points: np.ndarray
    weights: np.ndarray
    kind: str
    aperture: Aperture

    def __len__(self):
        return len(self.weights)

    def translated(self, offset) -> "QuadratureGrid":
        """Same grid shifted rigidly (used to place local user grids)."""
        offset = np.asarray(offset, dtype=np.float64)
        return QuadratureGrid(self.points + offset, self.weights, self.kind,
                              self.aperture.moved_to(self.aperture.center_array + offset))


def gl_grid(ap: Aperture, order: int) -> QuadratureGrid:
    rule = gl_rule(order)
    c = ap.center_array
    gx, gy = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
    pts = np.empty((order * order, 3))
    pts[:, 0] = c[0] + gx.ravel() * ap.len_x / 2
    pts[:, 1] = c[1] + gy.ravel() * ap.len_y / 2
    pts[:, 2] = c[2]
    weights = np.outer(rule.weights, rule.weights).ravel() * ap.area / 4
    return QuadratureGrid(pts, weights, "gl", ap)


# --- Sobol ------------------------------------------------------------------

# Joe-Kuo table, first two dimensions: dimension 1 is van der Corput,
# dimension 2 uses primitive polynomial x + 1 (s = 1, a = 0) with m_1 = 1.
_JOE_KUO_2D = ((0, 0, ()), (1, 0, (1,)))


def _direction_numbers(s: int, a: int, m_init: tuple) -> np.ndarray:
    v = np.zeros(SOBOL_BITS, dtype=np.uint64)
    if s == 0:
        for k in range(SOBOL_BITS):
            v[k] = 1 << (SOBOL_BITS - 1 - k)
        return v.astype(np.uint32)
    m = list(m_init)
    for k in range(s, SOBOL_BITS):
        new = m[k - s] ^ (m[k - s] << s)
        for j in range(1, s):
            if (a >> (s - 1 - j)) & 1:
                new ^= m[k - j] << j
        m.append(new)
    for k in range(SOBOL_BITS):
        v[k] = m[k] << (SOBOL_BITS - 1 - k)
    return v.astype(np.uint32)


DIRECTIONS = np.stack([_direction_numbers(*row) for row in _JOE_KUO_2D])


def sobol_integers(indices: np.ndarray) -> np.ndarray:
    """Unscrambled 2D Sobol points as 32-bit integers, gray-code ordering."""
    idx = np.asarray(indices, dtype=np.uint64)
    gray = (idx ^ (idx >> np.uint64(1))).astype(np.uint64)
    out = np.zeros((len(idx), 2), dtype=np.uint32)
    for k in range(SOBOL_BITS):
        bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        if not bit.any():
            continue
        out[bit] ^= DIRECTIONS[:, k]
    return out


def _reverse_bits(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint32)
    x = ((x >> np.uint32(1)) & np.uint32(0x55555555)) | ((x & np.uint32(0x55555555)) << np.uint32(1))
    x = ((x >> np.uint32(2)) & np.uint32(0x33333333)) | ((x & np.uint32(0x33333333)) << np.uint32(2))
    x = ((x >> np.uint32(4)) & np.uint32(0x0F0F0F0F)) | ((x & np.uint32(0x0F0F0F0F)) << np.uint32(4))
    x = ((x >> np.uint32(8)) & np.uint32(0x00FF00FF)) | ((x & np.uint32(0x00FF00FF)) << np.uint32(8))
    return (x >> np.uint32(16)) | (x << np.uint32(16))


def _laine_karras(x: np.ndarray, seed: int) -> np.ndarray:
    # Each output bit depends only on the same and lower input bits, so after
    # bit reversal this is a nested (Owen) digit scramble.
    x = x + np.uint32(seed)
    x ^= x * np.uint32(0x6C50B47C)
    x ^= x * np.uint32(0xB82F1E52)
    x ^= x * np.uint32(0xC7AFE638)
    x ^= x * np.uint32(0x8D22F6E6)
    return x


def owen_scramble(x: np.ndarray, seed: int) -> np.ndarray:
    """Hash-based nested uniform scramble of 32-bit fixed-point values."""
    with np.errstate(over="ignore"):
        return _reverse_bits(_laine_karras(_reverse_bits(x), seed))


def _dimension_seeds(seed: int) -> tuple[int, int]:
    out = []
    for dim in range(2):
        digest = hashlib.blake2b(f"owen:{int(seed)}:{dim}".encode(), digest_size=4).digest()
        out.append(int.from_bytes(digest, "little"))
    return tuple(out)


@dataclass(frozen=True)
class SobolSampler:
    """Two-dimensional Sobol generator with optional Owen scrambling.

    Unscrambled sequences start at index 1 so the origin is never returned;
    scrambled sequences start at index 0 (the scramble moves it off the
    corner) so that the first ``2**m`` points keep the net property.
    """

    scramble_seed: int = 0
    owen_enabled: bool = True

    def integers(self, count: int) -> np.ndarray:
        start = 0 if self.owen_enabled else 1
        raw = sobol_integers(np.arange(start, start + count, dtype=np.uint64))
        if not self.owen_enabled:
            return raw
        s0, s1 = _dimension_seeds(self.scramble_seed)
        return np.stack([owen_scramble(raw[:, 0], s0), owen_scramble(raw[:, 1], s1)], axis=1)

    def points(self, count: int) -> np.ndarray:
        """``count`` points in ``[0, 1)^2``."""
        return self.integers(count).astype(np.float64) / 2.0**SOBOL_BITS


def sobol_grid(ap: Aperture, count: int, seed: int, owen: bool = True) -> QuadratureGrid:
    if count < 1:
        raise ValueError(f"Sobol point count must be >= 1, got {count}")
    u = SobolSampler(seed, owen).points(count)
    c = ap.center_array
    pts = np.empty((count, 3))
    pts[:, 0] = c[0] + (u[:, 0] - 0.5) * ap.len_x
    pts[:, 1] = c[1] + (u[:, 1] - 0.5) * ap.len_y
    pts[:, 2] = c[2]
    return QuadratureGrid(pts, np.full(count, ap.area / count), "sobol", ap)


def integrate(grid: QuadratureGrid, f) -> np.ndarray:
    """Weighted sum ``sum_i w_i f(p_i)``.

    ``f`` is either a callable taking the ``(n, 3)`` point array and returning
    values with leading axis ``n``, or such an array of samples already.
    """
    values = f(grid.points) if callable(f) else f
    values = np.asarray(values)
    if values.shape[0] != len(grid):
        raise ValueError(f"integrand has {values.shape[0]} samples for a grid of {len(grid)} points")
    return np.tensordot(grid.weights, values, axes=(0, 0))
