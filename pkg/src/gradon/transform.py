"""Forward transform and backprojection over level sets of a defining function.

The forward map is the smoothed-delta coarea quadrature

    R_w f(s, theta) ~ sum_x psi(s - phi(x, theta)) w(x, theta) J(x, theta) f(x) h^n

with ``psi`` a triangular profile of half-width ``eta``. Two adjoints are
provided: :meth:`Projector.transpose` is the exact matrix transpose in the
weighted inner products (field: ``h^n``; sinogram: ``ds * sphere weight``),
and :meth:`Projector.backproject` is the continuous backprojection with
linear interpolation in ``s``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import (ConstantWeight, DefiningFunction, Domain, Weight,
                       sample_directions, sphere_weights)

__all__ = [
    "Grid",
    "ScalarField",
    "SinogramLayout",
    "Sinogram",
    "DeltaProfile",
    "Projector",
    "TransformError",
    "jacobian",
    "make_layout",
    "forward",
    "adjoint",
    "adjoint_transpose",
    "resolve_threads",
]


class TransformError(RuntimeError):
    """Raised when sinogram coverage is insufficient or layouts mismatch."""


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("GRADON_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(threads or 1))


@dataclass(frozen=True)
class Grid:
    """Cell-centred uniform grid with ``size`` cells per axis covering M1."""

    domain: Domain
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("grid needs at least two cells per axis")

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def spacing(self) -> float:
        return 2 * self.domain.outer_half_width / self.size

    @property
    def shape(self) -> tuple:
        return (self.size,) * self.n

    @property
    def origin(self) -> np.ndarray:
        return np.full(self.n, -self.domain.outer_half_width + 0.5 * self.spacing)

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n

    def axis(self) -> np.ndarray:
        return self.origin[0] + self.spacing * np.arange(self.size)

    def points(self) -> np.ndarray:
        """Cell centres, shape ``(size**n, n)``, C order."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis()] * self.n), indexing="ij")

    def inner_mask(self) -> np.ndarray:
        return self.domain.in_inner(self.points()).reshape(self.shape)


@dataclass
class ScalarField:
    """Samples of a function on a :class:`Grid` (``domain`` tags M vs M1 support)."""

    grid: Grid
    values: np.ndarray
    domain: str = "M1"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    @property
    def origin(self) -> np.ndarray:
        return self.grid.origin

    def inner(self, other: "ScalarField") -> complex:
        return complex(np.vdot(other.values, self.values) * self.grid.cell_volume)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume))

    def restrict_inner(self) -> "ScalarField":
        return ScalarField(self.grid, np.where(self.grid.inner_mask(), self.values, 0), domain="M")

    def vanishes_on_padding(self) -> bool:
        return not np.any(self.values[~self.grid.inner_mask()])

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.domain)


@dataclass(frozen=True)
class SinogramLayout:
    """Uniform ``s`` axis ``s0 + j * ds`` and a direction table with sphere weights."""

    s0: float
    ds: float
    n_s: int
    directions: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.directions.shape[1]

    @property
    def n_theta(self) -> int:
        return self.directions.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.n_s, self.n_theta)

    def s_axis(self) -> np.ndarray:
        return self.s0 + self.ds * np.arange(self.n_s)

    def same_as(self, other: "SinogramLayout") -> bool:
        return (self.n_s == other.n_s and self.n_theta == other.n_theta
                and self.s0 == other.s0 and self.ds == other.ds
                and np.array_equal(self.directions, other.directions))


@dataclass
class Sinogram:
    """Values indexed ``[j, a]`` for ``(s_j, theta_a)``."""

    layout: SinogramLayout
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.layout.shape:
            raise ValueError(f"values shape {self.values.shape} != layout {self.layout.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram values must be finite")

    def inner(self, other: "Sinogram") -> complex:
        w = self.layout.weights[None, :] * self.layout.ds
        return complex(np.sum(np.conj(other.values) * self.values * w))

    def norm(self) -> float:
        return float(np.sqrt(abs(self.inner(self))))


@dataclass(frozen=True)
class DeltaProfile:
    """Triangular mollifier ``max(0, 1 - |t| / eta) / eta``; unit mass."""

    eta: float

    def __call__(self, t):
        return np.maximum(0.0, 1.0 - np.abs(t) / self.eta) / self.eta

    def transfer(self, k):
        """Fourier transform ``sinc^2(k eta / 2)`` (unnormalised sinc)."""
        u = 0.5 * np.asarray(k, dtype=float) * self.eta
        return np.sinc(u / np.pi) ** 2


def jacobian(df: DefiningFunction, x, theta) -> np.ndarray:
    """``J = |d_x phi|``; raises if the gradient nearly vanishes."""
    J = np.asarray(df.jacobian(x, theta))
    if np.any(J < 1e-12):
        raise ValueError("|d_x phi| < 1e-12: defining function is degenerate here")
    return J


def make_layout(df: DefiningFunction, grid: Grid, n_theta: int, delta_factor: float = 2.0,
                ds: float | None = None, n_s: int | None = None) -> SinogramLayout:
    """Symmetric ``s`` grid (``s = 0`` is a node) covering every level set meeting M1.

    The default spacing is the field spacing ``h``.
    """
    n = grid.n
    dirs = sample_directions(n, n_theta)
    ds = grid.spacing if ds is None else float(ds)
    if n_s is None:
        pts = grid.points()
        # cell corners bound phi over M1 for the smooth families used here
        corner = grid.domain.outer_half_width
        smax = 0.0
        for chunk in np.array_split(dirs, max(1, n_theta // 32)):
            smax = max(smax, float(np.max(np.abs(df.eval(pts[:, None, :], chunk[None, :, :])))))
        corners = np.array(np.meshgrid(*([[-corner, corner]] * n), indexing="ij")).reshape(n, -1).T
        smax = max(smax, float(np.max(np.abs(df.eval(corners[:, None, :], dirs[None, :, :])))))
        K = int(np.ceil((smax + delta_factor * grid.spacing) / ds)) + 2
        n_s = 2 * K + 1
        s0 = -K * ds
    else:
        s0 = -0.5 * (n_s - 1) * ds
    return SinogramLayout(s0=s0, ds=ds, n_s=int(n_s), directions=dirs, weights=sphere_weights(n, n_theta))


class Projector:
    """Discretised ``R_w`` on a grid/layout pair, with its two adjoints.

    Work is split over direction chunks; each output cell is written by one
    chunk and partial backprojections are summed in chunk order, so results
    do not depend on the thread count. When the sparse matrix fits in
    ``max_nnz`` entries it is assembled once and reused.
    """

    def __init__(self, df: DefiningFunction, weight: Weight | None, grid: Grid,
                 layout: SinogramLayout, delta_factor: float = 2.0, threads: int | None = None,
                 max_nnz: int = 25_000_000, chunk: int = 16):
        if layout.n != grid.n or df.n != grid.n:
            raise ValueError("dimension mismatch between defining function, grid and layout")
        self.df = df
        self.weight = weight if weight is not None else ConstantWeight(1.0, n=grid.n)
        self.grid = grid
        self.layout = layout
        self.delta = DeltaProfile(delta_factor * grid.spacing)
        self.threads = resolve_threads(threads)
        self.chunk = chunk
        self._pts = grid.points()
        self._blocks = [np.arange(a, min(a + chunk, layout.n_theta))
                        for a in range(0, layout.n_theta, chunk)]
        self._matrix = None
        self._lost = None
        self._total = None
        reach = int(np.ceil(self.delta.eta / layout.ds)) + 1
        self._offsets = np.arange(-reach, reach + 1)
        est = grid.size**grid.n * layout.n_theta * (2 * self.delta.eta / layout.ds + 1)
        self.use_matrix = est <= max_nnz

    # -- per-block geometry ------------------------------------------------
    def _block(self, idx, cells=None):
        """Indices and values of the nonzeros for directions ``idx``.

        Returns (cell, j, a, value, inside) flattened, with ``value`` the
        forward matrix entry ``psi * w * J * h^n``. ``cells`` restricts the
        columns to a subset of flattened cell indices.
        """
        th = self.layout.directions[idx]
        cells = np.arange(len(self._pts)) if cells is None else cells
        X = self._pts[cells][:, None, :]
        T = th[None, :, :]
        t = self.df.eval(X, T)
        amp = self.weight.eval(X, T) * jacobian(self.df, X, T) * self.grid.cell_volume
        u = (t - self.layout.s0) / self.layout.ds
        base = np.floor(u).astype(np.int64)
        P, A = t.shape
        pix = np.broadcast_to(cells[:, None], (P, A))
        ang = np.broadcast_to(np.asarray(idx)[None, :], (P, A))
        out = []
        for o in self._offsets:
            j = base + o
            val = self.delta(self.layout.s0 + j * self.layout.ds - t)
            nz = val > 0
            out.append((pix[nz], j[nz], ang[nz], (val * amp)[nz]))
        pix, j, ang, val = (np.concatenate(c) for c in zip(*out))
        inside = (j >= 0) & (j < self.layout.n_s)
        return pix, j, ang, val, inside

    def _map(self, fn):
        if self.threads > 1 and len(self._blocks) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(fn, self._blocks))
        return [fn(b) for b in self._blocks]

    def _ensure_mass(self):
        if self._lost is not None:
            return
        P = len(self._pts)
        lost = np.zeros(P)
        total = np.zeros(P)
        for pix, j, ang, val, inside in self._map(self._block):
            mass = np.abs(val) * self.layout.ds
            total += np.bincount(pix, weights=mass, minlength=P)
            lost += np.bincount(pix[~inside], weights=mass[~inside], minlength=P)
        self._lost, self._total = lost, total

    def matrix(self) -> sp.csr_matrix:
        """Sparse forward matrix, rows ``j * n_theta + a``, columns flattened cells."""
        if self._matrix is None:
            rows, cols, vals = [], [], []
            P = len(self._pts)
            lost = np.zeros(P)
            total = np.zeros(P)
            for pix, j, ang, val, inside in self._map(self._block):
                mass = np.abs(val) * self.layout.ds
                total += np.bincount(pix, weights=mass, minlength=P)
                lost += np.bincount(pix[~inside], weights=mass[~inside], minlength=P)
                rows.append(j[inside] * self.layout.n_theta + ang[inside])
                cols.append(pix[inside])
                vals.append(val[inside])
            shape = (self.layout.n_s * self.layout.n_theta, P)
            M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=shape).tocsr()
            M.sum_duplicates()
            self._matrix = M
            self._lost, self._total = lost, total
        return self._matrix

    # -- public operators ----------------------------------------------------
    def leakage(self, f: np.ndarray) -> float:
        """Fraction of ``|f|``-weighted kernel mass falling outside the s grid."""
        self._ensure_mass()
        a = np.abs(np.asarray(f)).ravel()
        tot = float(a @ self._total)
        return float(a @ self._lost) / tot if tot > 0 else 0.0

    def _values(self, f) -> np.ndarray:
        if isinstance(f, ScalarField):
            if f.grid != self.grid:
                raise TransformError("field grid does not match the projector grid")
            return f.values
        f = np.asarray(f)
        if f.shape != self.grid.shape:
            raise TransformError(f"field shape {f.shape} does not match grid {self.grid.shape}")
        return f

    def forward(self, f, check_leakage: bool = True, leak_tol: float = 1e-6) -> Sinogram:
        fv = self._values(f)
        flat = fv.ravel()
        if self.use_matrix:
            if check_leakage:
                self._raise_on_leak(self.leakage(fv), leak_tol)
            vals = (self.matrix() @ flat).reshape(self.layout.shape)
            return Sinogram(self.layout, vals, meta=self._meta())
        cells = np.flatnonzero(flat)
        vals = np.zeros(self.layout.shape, dtype=np.result_type(flat, complex if self._complex() else float))
        lost = total = 0.0
        for pix, j, ang, val, inside in self._map(lambda b: self._block(b, cells)):
            contrib = val * flat[pix]
            mass = np.abs(contrib)
            total += float(np.sum(mass))
            lost += float(np.sum(mass[~inside]))
            key = j[inside] * self.layout.n_theta + ang[inside]
            vals += _bincount(key, contrib[inside], vals.size).reshape(vals.shape)
        if check_leakage and total > 0:
            self._raise_on_leak(lost / total, leak_tol)
        return Sinogram(self.layout, vals, meta=self._meta())

    @staticmethod
    def _raise_on_leak(leak, tol):
        if leak > tol:
            raise TransformError(f"s-range too small: {leak:.3e} of the mass leaks out")

    def transpose(self, g) -> ScalarField:
        """Exact adjoint of :meth:`forward` in the weighted inner products."""
        gv = self._sino_values(g)
        scaled = gv * (self.layout.weights[None, :] * self.layout.ds) / self.grid.cell_volume
        flat = scaled.ravel()
        P = len(self._pts)
        if self.use_matrix:
            out = self.matrix().conj().T @ flat
        else:
            parts = self._map(lambda b: _transpose_block(self._block(b), flat, self.layout.n_theta, P))
            out = parts[0]
            for p in parts[1:]:
                out = out + p
        return ScalarField(self.grid, out.reshape(self.grid.shape))

    def backproject(self, g, clip_tol: float = 1e-6) -> ScalarField:
        """Continuous backprojection ``sum_a omega_a conj(w J) g(phi(x, theta_a), theta_a)``.

        ``g`` is linearly interpolated in ``s``; evaluation points outside the
        s grid contribute zero and are counted.
        """
        gv = self._sino_values(g)
        lay = self.layout
        P = len(self._pts)
        out = np.zeros(P, dtype=np.result_type(gv, complex if self._complex() else float))
        clipped = 0
        for idx in self._blocks:
            th = lay.directions[idx]
            X, T = self._pts[:, None, :], th[None, :, :]
            t = self.df.eval(X, T)
            amp = np.conj(self.weight.eval(X, T) * jacobian(self.df, X, T))
            u = (t - lay.s0) / lay.ds
            i0 = np.floor(u).astype(np.int64)
            frac = u - i0
            ok = (i0 >= 0) & (i0 + 1 <= lay.n_s - 1)
            exact_end = np.isclose(u, lay.n_s - 1)
            i0 = np.where(exact_end, lay.n_s - 2, i0)
            frac = np.where(exact_end, 1.0, frac)
            ok |= exact_end
            clipped += int(np.count_nonzero(~ok))
            i0c = np.clip(i0, 0, lay.n_s - 2)
            cols = np.asarray(idx)[None, :]
            val = (1 - frac) * gv[i0c, cols] + frac * gv[i0c + 1, cols]
            val = np.where(ok, val, 0.0)
            out += np.sum(lay.weights[idx][None, :] * amp * val, axis=1)
        frac_clipped = clipped / (P * lay.n_theta)
        if frac_clipped > clip_tol:
            raise TransformError(f"{frac_clipped:.3e} of backprojection samples fall outside the s grid")
        return ScalarField(self.grid, out.reshape(self.grid.shape))

    def normal(self, f) -> ScalarField:
        return self.transpose(self.forward(f))

    # -- helpers -----------------------------------------------------------
    def _sino_values(self, g) -> np.ndarray:
        if isinstance(g, Sinogram):
            if not g.layout.same_as(self.layout):
                raise TransformError("sinogram layout does not match the projector layout")
            return g.values
        g = np.asarray(g)
        if g.shape != self.layout.shape:
            raise TransformError(f"sinogram shape {g.shape} does not match layout {self.layout.shape}")
        return g

    def _complex(self) -> bool:
        probe = np.asarray(self.weight.eval(self._pts[:1], self.layout.directions[:1]))
        return np.iscomplexobj(probe)

    def _meta(self) -> dict:
        return {"phi": self.df.describe(), "weight": self.weight.describe(),
                "eta": self.delta.eta}


def _bincount(key, vals, size):
    if np.iscomplexobj(vals):
        return (np.bincount(key, weights=vals.real, minlength=size)
                + 1j * np.bincount(key, weights=vals.imag, minlength=size))
    return np.bincount(key, weights=vals, minlength=size)


def _transpose_block(block, flat_g, n_theta, P):
    pix, j, ang, val, inside = block
    contrib = np.conj(val[inside]) * flat_g[j[inside] * n_theta + ang[inside]]
    return _bincount(pix[inside], contrib, P)


def forward(df, w, f: ScalarField, layout: SinogramLayout, delta_factor: float = 2.0) -> Sinogram:
    return Projector(df, w, f.grid, layout, delta_factor).forward(f)


def adjoint(df, w, g: Sinogram, grid: Grid, delta_factor: float = 2.0) -> ScalarField:
    return Projector(df, w, grid, g.layout, delta_factor).backproject(g)


def adjoint_transpose(df, w, g: Sinogram, grid: Grid, delta_factor: float = 2.0) -> ScalarField:
    return Projector(df, w, grid, g.layout, delta_factor).transpose(g)
