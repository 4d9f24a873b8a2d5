"""Normal operator ``N = R^T R``, its principal symbol, and two oracles.

The symbol is

    p(x, xi) = (2 pi)^(1-n) (W(x, x, theta+) + W(x, x, theta-)) / |xi|^(n-1)

with ``W(x, y, theta) = conj(w J)(x, theta) (w J)(y, theta)`` and ``theta+-``
the sphere parameters whose unit covectors ``d_x phi / |d_x phi|`` equal
``+-xi/|xi|``. Under the usual quantisation ``Op(a) e^{ix.xi} = a e^{ix.xi}``
the discretised normal operator of a planar Euclidean transform acts on a
plane wave of frequency ``|xi|`` as ``4 pi / |xi|`` while ``p = 1/(pi |xi|)``;
the constant ``(2 pi)^(2(n-1))`` between the two is exposed as
:func:`operator_scale` so that measured amplitudes can be compared with ``p``.

Three evaluation variants are offered:

``"covector"``  ``theta`` from the unit-covector identification (default);
``"raw"``       ``theta = +-xi/|xi|`` used directly;
``"full"``      covector ``theta`` with the change-of-variables factor
                ``|d_x phi|^(n-1) / det(mixed Hessian)`` included in each term.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh

from .geometry import (ConstantWeight, DefiningFunction, Weight, sample_directions,
                       smooth_step)
from .io import write_csv
from .transform import Grid, Projector, ScalarField, SinogramLayout, make_layout

__all__ = [
    "SymbolError",
    "operator_scale",
    "PrincipalSymbol",
    "apply_normal",
    "principal_symbol",
    "DenseNormal",
    "assemble_dense",
    "ProbeResult",
    "probe_window",
    "probe_symbol",
    "fit_power",
    "DENSE_CAP",
]

DENSE_CAP = 24


class SymbolError(RuntimeError):
    """Raised when the covector equation for ``theta`` cannot be solved."""


def operator_scale(n: int) -> float:
    """Constant between the discrete normal operator's action and ``p``."""
    return (2 * np.pi) ** (2 * (n - 1))


def _tangent_basis(v: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``v^perp`` as columns, shape ``(n, n-1)``."""
    n = v.size
    if n == 2:
        return np.array([[-v[1]], [v[0]]])
    q, _ = np.linalg.qr(np.column_stack([v, np.eye(n)]))
    return q[:, 1:n]


class PrincipalSymbol:
    """Evaluable ``W`` and ``p`` for a defining function and weight."""

    VARIANTS = ("covector", "raw", "full")

    def __init__(self, df: DefiningFunction, weight: Weight | None = None,
                 variant: str = "covector", n_seed: int | None = None):
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown symbol variant {variant!r}")
        self.df = df
        self.n = df.n
        self.weight = weight if weight is not None else ConstantWeight(1.0, n=df.n)
        self.variant = variant
        self._seeds = sample_directions(self.n, n_seed or (72 if self.n == 2 else 400))

    def W(self, x, y, theta):
        x, y, theta = (np.asarray(a, float) for a in (x, y, theta))
        wx = self.weight.eval(x, theta) * self.df.jacobian(x, theta)
        wy = self.weight.eval(y, theta) * self.df.jacobian(y, theta)
        return np.conj(wx) * wy

    def theta_for(self, x, xi_hat, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        """Unit ``theta`` with ``d_x phi(x, theta) / |d_x phi|`` equal to ``xi_hat``.

        Projected Newton on the sphere, started from the sampled direction
        whose covector is closest to ``xi_hat``.
        """
        x = np.asarray(x, float)
        xi = np.asarray(xi_hat, float)
        xi = xi / np.linalg.norm(xi)
        g = self.df.grad_x(x[None, :], self._seeds)
        g = g / np.linalg.norm(g, axis=-1, keepdims=True)
        theta = self._seeds[int(np.argmax(g @ xi))].copy()
        B = _tangent_basis(xi)
        for _ in range(max_iter):
            gx = self.df.grad_x(x, theta)
            c = np.linalg.norm(gx)
            gh = gx / c
            r = B.T @ gh
            if np.linalg.norm(r) < tol and gh @ xi > 0:
                return theta
            T = _tangent_basis(theta)
            H = self.df.mixed_hessian(x, theta)
            Jac = B.T @ ((np.eye(self.n) - np.outer(gh, gh)) / c) @ H @ T
            step = np.linalg.lstsq(Jac, -r, rcond=None)[0]
            # damp steps beyond a quarter turn
            norm = np.linalg.norm(step)
            if norm > 0.5:
                step *= 0.5 / norm
            theta = theta + T @ step
            theta /= np.linalg.norm(theta)
        gh = self.df.grad_x(x, theta)
        gh = gh / np.linalg.norm(gh)
        if np.linalg.norm(B.T @ gh) < 1e-10 and gh @ xi > 0:
            return theta
        raise SymbolError(f"theta solve did not converge at x={x}, xi_hat={xi}")

    def _term(self, x, xi_hat):
        if self.variant == "raw":
            th = xi_hat
        else:
            th = self.theta_for(x, xi_hat)
        val = self.W(x, x, th)
        if self.variant == "full":
            c = np.linalg.norm(self.df.grad_x(x, th))
            val = val * c ** (self.n - 1) / np.linalg.det(self.df.mixed_hessian(x, th))
        return val, th

    def thetas(self, x, xi):
        xi = np.asarray(xi, float)
        xh = xi / np.linalg.norm(xi)
        return self._term(x, xh)[1], self._term(x, -xh)[1]

    def terms(self, x, xi):
        """The two summands ``(W(theta+), W(theta-))`` before the ``|xi|`` power."""
        xi = np.asarray(xi, float)
        xh = xi / np.linalg.norm(xi)
        return self._term(np.asarray(x, float), xh)[0], self._term(np.asarray(x, float), -xh)[0]

    def __call__(self, x, xi):
        xi = np.asarray(xi, float)
        k = np.linalg.norm(xi)
        if k == 0:
            raise ValueError("symbol undefined at xi = 0")
        a, b = self.terms(x, xi)
        # W(x, x, .) = |w J|^2 is real
        return float(np.real((2 * np.pi) ** (1 - self.n) * (a + b) / k ** (self.n - 1)))

    def min_on(self, points, n_dir: int = 32) -> float:
        """Smallest ``|xi|^(n-1) Re p`` over sample points and directions."""
        dirs = sample_directions(self.n, n_dir)
        return float(min(np.real(self(x, d)) for x in points for d in dirs))


def principal_symbol(df, w, x, xi, variant: str = "covector") -> float:
    return PrincipalSymbol(df, w, variant)(x, xi)


def apply_normal(projector: Projector, f) -> ScalarField:
    """``R^T R f`` through the exact transpose; ``f`` must vanish off M."""
    fv = f.values if isinstance(f, ScalarField) else np.asarray(f)
    grid = projector.grid
    if np.any(fv[~grid.inner_mask()] != 0):
        raise ValueError("field must vanish outside the inner domain M")
    return projector.normal(fv)


@dataclass
class DenseNormal:
    """Explicit ``N = A^H D A / h^n`` with ``A`` the forward matrix and ``D`` the sinogram weights."""

    grid: Grid
    layout: SinogramLayout
    forward_matrix: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)

    def apply(self, f) -> ScalarField:
        fv = f.values if isinstance(f, ScalarField) else np.asarray(f)
        return ScalarField(self.grid, (self.matrix @ fv.ravel()).reshape(self.grid.shape))

    def symmetry_defect(self) -> float:
        M = self.matrix
        return float(np.max(np.abs(M - M.conj().T)) / np.max(np.abs(M)))

    def restricted(self, mask: np.ndarray | None = None) -> np.ndarray:
        """Block of ``N`` acting on fields supported in ``mask`` (default M)."""
        m = (self.grid.inner_mask() if mask is None else mask).ravel()
        return self.matrix[np.ix_(m, m)]

    def eigenvalues(self, mask: np.ndarray | None = None) -> np.ndarray:
        return eigvalsh(self.restricted(mask))

    def envelope(self, bins: int = 24):
        """Per-distance-bin maximum of ``|N_ij|``; returns (bin centres, maxima)."""
        pts = self.grid.points()
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1).ravel()
        a = np.abs(self.matrix).ravel()
        edges = np.linspace(0, d.max() + 1e-12, bins + 1)
        idx = np.digitize(d, edges) - 1
        env = np.full(bins, np.nan)
        for b in range(bins):
            sel = idx == b
            if np.any(sel):
                env[b] = a[sel].max()
        return 0.5 * (edges[1:] + edges[:-1]), env

    def to_csv(self, path):
        rows = ([i, j, self.matrix[i, j].real] for i in range(self.matrix.shape[0])
                for j in range(self.matrix.shape[1]))
        return write_csv(path, ["row", "col", "value"], rows)


def assemble_dense(df, weight, grid: Grid, n_theta: int | None = None,
                   delta_factor: float = 2.0, layout: SinogramLayout | None = None) -> DenseNormal:
    """Assemble ``N`` column by column from matrix-free forwards of unit vectors."""
    if grid.size > DENSE_CAP:
        raise ValueError(f"dense assembly capped at {DENSE_CAP}^n cells (got {grid.size}^{grid.n})")
    layout = layout or make_layout(df, grid, n_theta or 4 * grid.size, delta_factor)
    P = Projector(df, weight, grid, layout, delta_factor, max_nnz=0)
    cells = grid.size ** grid.n
    cols = []
    e = np.zeros(cells)
    for k in range(cells):
        e[k] = 1.0
        cols.append(P.forward(e.reshape(grid.shape), check_leakage=False).values.ravel())
        e[k] = 0.0
    A = np.stack(cols, axis=1)
    D = np.repeat(layout.weights[None, :] * layout.ds, layout.n_s, axis=0).ravel()
    N = (A.conj().T * D) @ A / grid.cell_volume
    return DenseNormal(grid, layout, A, N)


# -- oscillatory probe -------------------------------------------------------

def probe_window(grid: Grid, x0, radius: float) -> np.ndarray:
    """Smooth bump equal to 1 within ``radius/2`` of ``x0`` and 0 beyond ``radius``."""
    r = np.linalg.norm(grid.points() - np.asarray(x0, float), axis=-1)
    return smooth_step(2.0 - 2.0 * r / radius).reshape(grid.shape)


def fit_power(x, y) -> tuple[float, float]:
    """Least-squares fit ``log y = q log x + c``; returns ``(q, exp(c))``."""
    q, c = np.polyfit(np.log(x), np.log(y), 1)
    return float(q), float(np.exp(c))


@dataclass
class ProbeResult:
    """Measured normal-operator amplitudes on windowed plane waves.

    ``m_raw`` is ``<N e, e> / <e, e>``; ``m`` divides out the smoothed-delta
    transfer ``tau``. ``ratio`` compares ``m`` with ``operator_scale * p``.
    """

    x0: np.ndarray
    xi_hat: np.ndarray
    lambdas: np.ndarray
    m_raw: np.ndarray
    transfer: np.ndarray
    p: np.ndarray
    p_raw: np.ndarray
    p_full: np.ndarray
    scale: float

    @property
    def m(self) -> np.ndarray:
        return self.m_raw / self.transfer

    @property
    def ratio(self) -> np.ndarray:
        return self.m / (self.scale * self.p)

    @property
    def ratio_raw_theta(self) -> np.ndarray:
        return self.m / (self.scale * self.p_raw)

    @property
    def ratio_full(self) -> np.ndarray:
        return self.m / (self.scale * self.p_full)

    @property
    def q(self) -> float:
        return fit_power(self.lambdas, self.m)[0]

    @property
    def q_uncorrected(self) -> float:
        return fit_power(self.lambdas, self.m_raw)[0]

    def rows(self):
        for i, lam in enumerate(self.lambdas):
            yield (lam, self.m_raw[i], self.transfer[i], self.m[i], self.p[i], self.ratio[i],
                   self.ratio_raw_theta[i], self.ratio_full[i])

    def to_csv(self, path):
        return write_csv(path, ["lambda", "m_raw", "transfer", "m", "p", "ratio",
                                "ratio_raw_theta", "ratio_full"], self.rows())


def probe_symbol(df, weight, grid: Grid, x0, xi_hat, lambdas, n_theta: int = 360,
                 window_radius: float | None = None, delta_factor: float = 2.0) -> ProbeResult:
    """Measure ``m(lambda) = <N e, e> / <e, e>`` for ``e = cos(lambda (x - x0).xi) chi``.

    Through the exact transpose ``<N e, e> = <R e, R e>``, so only the
    forward map over the window support is evaluated.
    """
    lambdas = np.asarray(lambdas, float)
    h = grid.spacing
    if np.any(lambdas * h > np.pi / 2):
        raise ValueError(f"Nyquist violation: lambda_max * h = {lambdas.max() * h:.3f} > pi/2")
    if np.any(np.diff(lambdas) <= 0):
        raise ValueError("lambda ladder must be strictly increasing")
    x0 = np.asarray(x0, float)
    xi = np.asarray(xi_hat, float)
    xi = xi / np.linalg.norm(xi)
    radius = window_radius or 0.2 * grid.domain.half_width
    chi = probe_window(grid, x0, radius)
    if np.any(chi[~grid.inner_mask()] != 0):
        raise ValueError("probe window must lie inside M")
    layout = make_layout(df, grid, n_theta, delta_factor)
    P = Projector(df, weight, grid, layout, delta_factor, max_nnz=0)
    phase = ((grid.points() - x0) @ xi).reshape(grid.shape)
    sym = {v: PrincipalSymbol(df, weight, v) for v in PrincipalSymbol.VARIANTS}
    th_p, th_m = sym["covector"].thetas(x0, xi)
    wp, wm = (abs(t) for t in sym["full"].terms(x0, xi))
    m_raw, tau, p, p_raw, p_full = [], [], [], [], []
    for lam in lambdas:
        e = np.cos(lam * phase) * chi
        Re = P.forward(e)
        m_raw.append(Re.norm() ** 2 / ScalarField(grid, e).norm() ** 2)
        # the profile enters once through R and once through R^T
        taus = [P.delta.transfer(lam / np.linalg.norm(df.grad_x(x0, t))) ** 2 for t in (th_p, th_m)]
        tau.append((wp * taus[0] + wm * taus[1]) / (wp + wm))
        p.append(np.real(sym["covector"](x0, lam * xi)))
        p_raw.append(np.real(sym["raw"](x0, lam * xi)))
        p_full.append(np.real(sym["full"](x0, lam * xi)))
    return ProbeResult(x0, xi, lambdas, np.array(m_raw), np.array(tau), np.array(p),
                       np.array(p_raw), np.array(p_full), operator_scale(grid.n))
