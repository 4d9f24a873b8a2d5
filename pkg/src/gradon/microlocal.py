"""FBI-transform decay scans and a conormal consistency probe.

The FBI transform used here is

    F(lambda) = sum_y exp(i lambda (x0 - y).xi) exp(-lambda |x0 - y|^2 / 2) chi(y) f(y) h^n

with a fixed smooth cutoff ``chi`` around ``x0``. Decay in ``lambda`` is
classified by model selection. Magnitudes below a floor relative to
``||chi f||_1`` are treated as unresolved. A direction is wavefront-suspect
when at least three magnitudes are resolved, the last one is, and a
straight-line fit of ``log|F|`` against ``log lambda`` (polynomial) beats one
against ``lambda`` (exponential) in residual sum of squares.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DefiningFunction, Weight, smooth_step
from .io import write_csv
from .transform import Grid, Projector, ScalarField, make_layout

__all__ = [
    "DEFAULT_LADDER",
    "fbi_window",
    "fbi",
    "FbiScan",
    "decay_scan",
    "level_set_points",
    "sinogram_regularity",
    "ConormalReport",
    "conormal_probe",
]

DEFAULT_LADDER = (8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0)


def fbi_window(grid: Grid, x0, inner: float | None = None, outer: float | None = None) -> np.ndarray:
    """Cutoff equal to 1 within ``inner`` of ``x0`` and 0 beyond ``outer`` (defaults 0.4L, 0.8L)."""
    L = grid.domain.half_width
    inner = 0.4 * L if inner is None else inner
    outer = 0.8 * L if outer is None else outer
    r = np.linalg.norm(grid.points() - np.asarray(x0, float), axis=-1)
    return smooth_step((outer - r) / (outer - inner)).reshape(grid.shape)


def _check(grid: Grid, x0, lambdas):
    lam = np.atleast_1d(np.asarray(lambdas, float))
    if np.any(lam * grid.spacing > np.pi / 2):
        raise ValueError(f"Nyquist violation: lambda * h = {lam.max() * grid.spacing:.3f} > pi/2")
    if not np.all(np.abs(np.asarray(x0, float)) < grid.domain.outer_half_width):
        raise ValueError("x0 must be interior to M1")
    return lam


def fbi(f: ScalarField, x0, xi_hat, lam: float, chi: np.ndarray | None = None) -> complex:
    grid = f.grid
    _check(grid, x0, lam)
    x0 = np.asarray(x0, float)
    xi = np.asarray(xi_hat, float)
    xi = xi / np.linalg.norm(xi)
    chi = fbi_window(grid, x0) if chi is None else chi
    d = x0 - grid.points()
    kern = np.exp(1j * lam * (d @ xi) - 0.5 * lam * np.sum(d * d, axis=-1))
    return complex(np.sum(kern * (chi * f.values).ravel()) * grid.cell_volume)


@dataclass
class FbiScan:
    """Magnitudes ``|F|`` per direction (rows) and ladder value (columns)."""

    x0: np.ndarray
    directions: np.ndarray
    lambdas: np.ndarray
    magnitudes: np.ndarray
    floor: float
    rate: np.ndarray = field(default=None)
    exponent: np.ndarray = field(default=None)
    score: np.ndarray = field(default=None)
    n_above: np.ndarray = field(default=None)
    suspect: np.ndarray = field(default=None)

    def __post_init__(self):
        if np.any(np.diff(self.lambdas) <= 0):
            raise ValueError("lambda ladder must be strictly increasing")
        if not np.all(np.isfinite(self.magnitudes)):
            raise ValueError("FBI magnitudes must be finite")

    @property
    def verdicts(self) -> list[str]:
        return ["wavefront-suspect" if s else "analytic-regular" for s in self.suspect]

    def rows(self):
        for i, d in enumerate(self.directions):
            for j, lam in enumerate(self.lambdas):
                yield (i, *d, lam, self.magnitudes[i, j], self.rate[i], self.exponent[i],
                       self.verdicts[i])

    def to_csv(self, path):
        n = self.directions.shape[1]
        header = ["direction"] + [f"xi_{k}" for k in range(n)] + [
            "lambda", "abs_F", "exp_rate", "poly_exponent", "verdict"]
        return write_csv(path, header, self.rows())


def _classify(lam, mag, floor):
    """Return (rate 1/C, exponent q, score, n_above, suspect)."""
    above = mag > floor
    k = int(np.count_nonzero(above))
    y = np.log(np.maximum(mag, 1e-300))
    A_exp = np.column_stack([np.ones_like(lam), lam])
    A_pol = np.column_stack([np.ones_like(lam), np.log(lam)])
    ce, rss_e = np.linalg.lstsq(A_exp, y, rcond=None)[:2]
    cp, rss_p = np.linalg.lstsq(A_pol, y, rcond=None)[:2]
    rate, q = -ce[1], -cp[1]
    if k < 3:
        return rate, q, -np.inf, k, False
    # refit on the resolved part only
    sel = above
    ce, _ = np.linalg.lstsq(A_exp[sel], y[sel], rcond=None)[:2]
    cp, _ = np.linalg.lstsq(A_pol[sel], y[sel], rcond=None)[:2]
    rss_e = float(np.sum((A_exp[sel] @ ce - y[sel]) ** 2))
    rss_p = float(np.sum((A_pol[sel] @ cp - y[sel]) ** 2))
    rate, q = -ce[1], -cp[1]
    # positive score favours the polynomial model
    score = float(np.log((rss_e + 1e-30) / (rss_p + 1e-30)))
    # exponentially small signals fall below the floor by the end of the ladder
    return rate, q, score, k, bool(score > 0 and above[-1])


def decay_scan(f: ScalarField, x0, directions, lambdas=DEFAULT_LADDER, floor_rel: float = 1e-3,
               chi: np.ndarray | None = None) -> FbiScan:
    """FBI magnitudes over the ladder and a regular / suspect verdict per direction."""
    grid = f.grid
    lam = _check(grid, x0, lambdas)
    if lam.size < 4:
        raise ValueError("decay_scan needs at least 4 lambda values")
    dirs = np.atleast_2d(np.asarray(directions, float))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    chi = fbi_window(grid, x0) if chi is None else chi
    mags = np.array([[abs(fbi(f, x0, d, l, chi)) for l in lam] for d in dirs])
    if np.all(mags < 1e-300):
        raise ValueError("degenerate fit: all FBI magnitudes vanish")
    floor = floor_rel * float(np.sum(np.abs(chi * f.values)) * grid.cell_volume)
    out = [_classify(lam, m, floor) for m in mags]
    rate, q, score, k, sus = (np.array(c) for c in zip(*out))
    return FbiScan(np.asarray(x0, float), dirs, lam, mags, floor, rate, q, score, k, sus)


# -- conormal probe ----------------------------------------------------------

def level_set_points(df: DefiningFunction, grid: Grid, s0: float, theta0, count: int = 8) -> np.ndarray:
    """``count`` points of ``{phi(., theta0) = s0}`` inside M from grid-line crossings.

    Crossings are ordered along the first tangent direction of ``theta0``;
    points are taken at spacing ``length / count`` around the crossing
    nearest the domain centre.
    """
    if grid.n != 2:
        raise ValueError("level-set sampling is implemented for n = 2")
    th = np.asarray(theta0, float)
    th = th / np.linalg.norm(th)
    L = grid.domain.half_width
    fine = max(4 * grid.size, 256)
    ax = np.linspace(-L, L, fine)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    val = df.eval(pts, th) - s0
    found = []
    for axis in (0, 1):
        a = np.moveaxis(val, axis, 0)
        p = np.moveaxis(pts, axis, 0)
        sgn = a[:-1] * a[1:] <= 0
        diff = a[:-1] - a[1:]
        t = np.where(diff != 0, a[:-1] / np.where(diff == 0, 1, diff), 0.0)
        cross = p[:-1] + t[..., None] * (p[1:] - p[:-1])
        found.append(cross[sgn])
    found = np.concatenate(found)
    found = found[grid.domain.in_inner(found)]
    if len(found) == 0:
        raise ValueError(f"level set phi = {s0} does not meet M")
    tang = np.array([-th[1], th[0]])
    foot = found[np.argmin(np.linalg.norm(found, axis=1))]
    t = (found - foot) @ tang
    length = t.max() - t.min()
    targets = np.arange(-count // 2, count - count // 2) * (length / count)
    return np.array([found[np.argmin(np.abs(t - tk))] for tk in targets])


def sinogram_regularity(values: np.ndarray, s_axis: np.ndarray, s0: float, scales) -> tuple[float, np.ndarray]:
    """Hoelder-type exponent of a sinogram row near ``s0``.

    ``D2(d) = max |g(s + d) - 2 g(s) + g(s - d)|`` over nodes with
    ``|s - s0| <= d``; the exponent is the slope of ``log D2`` against ``log d``
    (2 for smooth rows, 1/2 for a square-root tangency).
    """
    ds = s_axis[1] - s_axis[0]
    d2 = []
    for d in scales:
        k = max(1, int(round(d / ds)))
        idx = np.flatnonzero(np.abs(s_axis - s0) <= k * ds)
        idx = idx[(idx - k >= 0) & (idx + k < len(values))]
        d2.append(np.max(np.abs(values[idx + k] - 2 * values[idx] + values[idx - k])))
    d2 = np.array(d2)
    if np.all(d2 == 0):
        return np.inf, d2
    alpha = np.polyfit(np.log(scales), np.log(np.maximum(d2, 1e-300)), 1)[0]
    return float(alpha), d2


@dataclass
class ConormalReport:
    s0: float
    theta0: np.ndarray
    points: np.ndarray
    covectors: np.ndarray
    suspect: np.ndarray
    alpha: float
    d2: np.ndarray
    kinked: bool
    scans: list = field(repr=False, default_factory=list)

    @property
    def agree(self) -> np.ndarray:
        """Contrapositive check per point: suspect conormal implies a kinked sinogram."""
        return ~self.suspect | self.kinked

    @property
    def agreement(self) -> int:
        return int(np.count_nonzero(self.agree))

    def rows(self):
        for i, p in enumerate(self.points):
            yield (*p, *self.covectors[i], int(self.suspect[i]), self.alpha, int(self.kinked),
                   int(self.agree[i]))

    def to_csv(self, path):
        n = self.points.shape[1]
        header = [f"x_{k}" for k in range(n)] + [f"xi_{k}" for k in range(n)] + [
            "suspect", "alpha", "kinked", "agree"]
        return write_csv(path, header, self.rows())


def conormal_probe(df: DefiningFunction, f: ScalarField, s0: float, theta0, lambdas=DEFAULT_LADDER,
                   weight: Weight | None = None, n_theta: int = 180, count: int = 8,
                   kink_alpha: float = 1.5, floor_rel: float = 1e-3,
                   projector: Projector | None = None) -> ConormalReport:
    """Correlate conormal FBI verdicts on ``H_{s0, theta0}`` with sinogram regularity."""
    grid = f.grid
    th = np.asarray(theta0, float)
    th = th / np.linalg.norm(th)
    pts = level_set_points(df, grid, s0, th, count)
    cov = df.grad_x(pts, th)
    cov = cov / np.linalg.norm(cov, axis=1, keepdims=True)
    scans = [decay_scan(f, p, np.stack([c, -c]), lambdas, floor_rel) for p, c in zip(pts, cov)]
    suspect = np.array([bool(np.any(s.suspect)) for s in scans])
    P = projector or Projector(df, weight, grid, make_layout(df, grid, n_theta))
    lay = P.layout
    a = int(np.argmax(lay.directions @ th))
    g = P.forward(f).values[:, a].real
    # sinogram coordinate of H_{s0, theta0} at the nearest sampled direction
    s_near = float(np.mean(df.eval(pts, lay.directions[a])))
    eta = P.delta.eta
    scales = np.array([2 * eta, 4 * eta, 8 * eta])
    alpha, d2 = sinogram_regularity(g, lay.s_axis(), s_near, scales)
    return ConormalReport(s0, th, pts, cov, suspect, alpha, d2, bool(alpha < kink_alpha), scans)
