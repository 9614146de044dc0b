"""Heightmap terrain with a shape-preserving piecewise-cubic ground model.

Knot slopes follow the monotone (PCHIP) rule, so the interpolant is C1,
passes through every sample and never overshoots its bounding samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEIGHT_BOUND = 0.2


class TerrainError(ValueError):
    pass


@dataclass(frozen=True)
class Heightmap:
    x_samples: np.ndarray
    z_samples: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_samples, dtype=float)
        z = np.asarray(self.z_samples, dtype=float)
        if x.ndim != 1 or z.ndim != 1 or len(x) != len(z):
            raise TerrainError("x_samples and z_samples must be 1-D of equal length")
        if len(x) < 2:
            raise TerrainError("heightmap needs at least two samples")
        dx = np.diff(x)
        if np.any(dx <= 0):
            raise TerrainError("x_samples must be strictly increasing")
        if not np.allclose(dx, dx[0], rtol=1e-9, atol=1e-12):
            raise TerrainError("x_samples must be uniformly spaced")
        x.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "x_samples", x)
        object.__setattr__(self, "z_samples", z)

    @property
    def spacing(self) -> float:
        return float(self.x_samples[1] - self.x_samples[0])

    @property
    def x_min(self) -> float:
        return float(self.x_samples[0])

    @property
    def x_max(self) -> float:
        return float(self.x_samples[-1])

    def with_heights(self, indices, heights) -> "Heightmap":
        z = self.z_samples.copy()
        z[np.asarray(indices, dtype=int)] = heights
        return Heightmap(self.x_samples, z)


def flat_heightmap(x_min: float = -0.5, x_max: float = 1.5, spacing: float = 0.1) -> Heightmap:
    n = int(round((x_max - x_min) / spacing)) + 1
    return Heightmap(np.linspace(x_min, x_max, n), np.zeros(n))


def load_heightmap(path) -> Heightmap:
    """Read a two-column ``x z`` text file; ``#`` starts a comment."""
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as exc:
        raise TerrainError(f"cannot parse heightmap {path}: {exc}") from exc
    if data.shape[1] != 2:
        raise TerrainError(f"{path}: expected two columns, got {data.shape[1]}")
    return Heightmap(data[:, 0], data[:, 1])


def save_heightmap(heightmap: Heightmap, path, comment: str | None = None) -> None:
    header = "x z" if comment is None else f"{comment}\nx z"
    np.savetxt(Path(path), np.column_stack([heightmap.x_samples, heightmap.z_samples]),
               fmt="%.10g", header=header, comments="# ")


def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Monotone knot derivatives (weighted harmonic mean, 3-point ends)."""
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d

    w1 = 2.0 * h[1:] + h[:-1]
    w2 = h[1:] + 2.0 * h[:-1]
    same_sign = np.sign(delta[:-1]) * np.sign(delta[1:]) > 0
    # multiplied-out form stays finite for vanishing secants
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        harmonic = (w1 + w2) * delta[:-1] * delta[1:] / (w1 * delta[1:] + w2 * delta[:-1])
    d[1:-1] = np.where(same_sign, harmonic, 0.0)

    d[0] = _end_slope(h[0], h[1], delta[0], delta[1])
    d[-1] = _end_slope(h[-1], h[-2], delta[-1], delta[-2])
    return d


def _end_slope(h0, h1, m0, m1):
    d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3.0 * m0):
        return 3.0 * m0
    return d


@dataclass(frozen=True)
class TerrainModel:
    heightmap: Heightmap
    # per interval: (c0, c1, c2, c3) for z = c0 + c1 t + c2 t^2 + c3 t^3, t = x - x_k
    segment_coefficients: np.ndarray = field(repr=False)

    @property
    def x_min(self) -> float:
        return self.heightmap.x_min

    @property
    def x_max(self) -> float:
        return self.heightmap.x_max

    def _segments(self, x):
        xr = np.real(x)
        k = np.floor((xr - self.x_min) / self.heightmap.spacing).astype(int)
        k = np.clip(k, 0, len(self.segment_coefficients) - 1)
        t = x - self.heightmap.x_samples[k]
        return k, t

    def evaluate(self, x, derivative: int = 0):
        """Evaluate the interpolant (or a derivative) without range checks.

        Beyond the sampled range the end cubics are continued, which only the
        NLP uses while an iterate is outside the terrain; converged solutions
        are constrained to stay inside. Accepts complex input for
        complex-step differentiation.
        """
        k, t = self._segments(x)
        c0, c1, c2, c3 = np.moveaxis(self.segment_coefficients[k], -1, 0)
        if derivative == 0:
            return c0 + t * (c1 + t * (c2 + t * c3))
        if derivative == 1:
            return c1 + t * (2.0 * c2 + 3.0 * t * c3)
        if derivative == 2:
            return 2.0 * c2 + 6.0 * t * c3
        raise ValueError("derivative must be 0, 1 or 2")

    def _check_range(self, x):
        xa = np.asarray(x, dtype=float)
        tol = 1e-12 * max(1.0, abs(self.x_max))
        if np.any(xa < self.x_min - tol) or np.any(xa > self.x_max + tol):
            raise TerrainError(
                f"query outside terrain range [{self.x_min}, {self.x_max}]")
        return xa


def build_terrain(heightmap: Heightmap) -> TerrainModel:
    x, z = heightmap.x_samples, heightmap.z_samples
    h = np.diff(x)
    delta = np.diff(z) / h
    d = pchip_slopes(x, z)
    c2 = (3.0 * delta - 2.0 * d[:-1] - d[1:]) / h
    c3 = (d[:-1] + d[1:] - 2.0 * delta) / h**2
    coeffs = np.column_stack([z[:-1], d[:-1], c2, c3])
    coeffs.setflags(write=False)
    return TerrainModel(heightmap, coeffs)


def height_at(terrain: TerrainModel, x):
    xa = terrain._check_range(x)
    out = terrain.evaluate(xa)
    return float(out) if np.ndim(x) == 0 else out


def gradient_at(terrain: TerrainModel, x):
    """Return ``(slope, normal)``; ``normal`` is the unit vector along (-slope, 1)."""
    xa = terrain._check_range(x)
    slope = terrain.evaluate(xa, derivative=1)
    normal = surface_normal(slope)
    if np.ndim(x) == 0:
        return float(slope), normal
    return slope, normal


def surface_normal(slope):
    slope = np.asarray(slope)
    inv = 1.0 / np.sqrt(1.0 + slope**2)
    return np.stack([-slope * inv, inv], axis=-1)


def variable_node_indices(heightmap: Heightmap, positions=(0.4, 0.5, 0.6)) -> np.ndarray:
    """Indices of the knots nearest to each requested position."""
    idx = [int(np.argmin(np.abs(heightmap.x_samples - p))) for p in positions]
    if len(set(idx)) != len(idx):
        raise TerrainError("variable node positions map onto the same knot")
    return np.asarray(idx, dtype=int)


def sample_random_terrain(rng: np.random.Generator, n_terrain: int, base: Heightmap,
                          indices=None, sigma: float = 0.1):
    """Replace ``n_terrain`` designated knots by clipped Gaussian heights.

    Returns the new heightmap and the drawn heights (the terrain features).
    """
    if n_terrain == 0:
        return base, np.zeros(0)
    if indices is None:
        indices = variable_node_indices(base)
    indices = np.asarray(indices, dtype=int)
    if len(indices) != n_terrain:
        raise TerrainError(f"expected {n_terrain} variable knots, got {len(indices)}")
    heights = np.clip(rng.normal(0.0, sigma, size=n_terrain), -HEIGHT_BOUND, HEIGHT_BOUND)
    return base.with_heights(indices, heights), heights
