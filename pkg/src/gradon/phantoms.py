"""Test phantoms sampled on a :class:`~gradon.transform.Grid`.

All phantoms are supported inside the inner domain M so that they vanish on
the padding region.
"""
from __future__ import annotations

import numpy as np

from .transform import Grid, ScalarField

__all__ = ["SHEPP_LOGAN", "disk", "ball", "gaussian", "shepp_logan", "make_phantom", "PHANTOMS"]

# Modified Shepp-Logan table (Toft): intensity, semi-axes a, b, centre x, y, angle (deg).
SHEPP_LOGAN = np.array([
    [1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0],
    [-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0],
    [-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0],
    [-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0],
    [0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0],
    [0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0],
    [0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0],
    [0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0],
    [0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0],
    [0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0],
])


def _supersampled(grid: Grid, indicator, supersample: int) -> np.ndarray:
    """Cell averages of ``indicator`` using ``supersample`` points per axis."""
    h = grid.spacing
    if supersample <= 1:
        return indicator(grid.points()).reshape(grid.shape).astype(float)
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    subs = np.stack(np.meshgrid(*([off] * grid.n), indexing="ij"), axis=-1).reshape(-1, grid.n) * h
    pts = grid.points()
    acc = np.zeros(len(pts))
    for d in subs:
        acc += indicator(pts + d)
    return (acc / len(subs)).reshape(grid.shape)


def disk(grid: Grid, radius: float = 1.0, center=None, supersample: int = 1) -> ScalarField:
    """Indicator of the ball ``|x - c| <= radius`` (a disk for n = 2)."""
    c = np.zeros(grid.n) if center is None else np.asarray(center, float)
    vals = _supersampled(grid, lambda p: np.sum((p - c) ** 2, axis=-1) <= radius**2, supersample)
    return ScalarField(grid, vals)


def ball(grid: Grid, radius: float = 1.0, center=None, supersample: int = 1) -> ScalarField:
    if grid.n != 3:
        raise ValueError("ball phantom requires n = 3")
    return disk(grid, radius, center, supersample)


def gaussian(grid: Grid, sigma: float = 0.3, center=None, cutoff: float | None = None) -> ScalarField:
    """``exp(-|x - c|^2 / (2 sigma^2))`` cut off outside M (default ``cutoff = L``).

    The truncation error at the cutoff is ``exp(-L^2 / (2 sigma^2))``, below
    4e-3 for the default ``sigma = 0.3, L = 1`` and supported on M.
    """
    c = np.zeros(grid.n) if center is None else np.asarray(center, float)
    p = grid.points()
    r2 = np.sum((p - c) ** 2, axis=-1)
    vals = np.exp(-0.5 * r2 / sigma**2)
    vals = np.where(grid.domain.in_inner(p), vals, 0.0)
    if cutoff is not None:
        vals = np.where(r2 <= cutoff**2, vals, 0.0)
    return ScalarField(grid, vals.reshape(grid.shape))


def shepp_logan(grid: Grid, supersample: int = 1) -> ScalarField:
    """Modified ten-ellipse Shepp-Logan head, scaled to the inner half-width."""
    if grid.n != 2:
        raise ValueError("shepp-logan phantom requires n = 2")
    L = grid.domain.half_width

    def field(p):
        q = p / L
        out = np.zeros(len(p))
        for rho, a, b, x0, y0, ang in SHEPP_LOGAN:
            t = np.deg2rad(ang)
            dx, dy = q[:, 0] - x0, q[:, 1] - y0
            u = dx * np.cos(t) + dy * np.sin(t)
            v = -dx * np.sin(t) + dy * np.cos(t)
            out += rho * ((u / a) ** 2 + (v / b) ** 2 <= 1.0)
        # overlapping intensities cancel only up to rounding
        return np.where(np.abs(out) < 1e-12, 0.0, out)

    return ScalarField(grid, _supersampled(grid, field, supersample))


PHANTOMS = ("disk", "gaussian", "shepp-logan", "ball")


def make_phantom(name: str, grid: Grid, **kw) -> ScalarField:
    if name == "disk":
        return disk(grid, **kw)
    if name == "gaussian":
        return gaussian(grid, **kw)
    if name == "shepp-logan":
        return shepp_logan(grid, **kw)
    if name == "ball":
        return ball(grid, **kw)
    raise ValueError(f"unknown phantom {name!r}; choose from {PHANTOMS}")
