"""Sobolev norms, symbol preconditioning, CG inversion and stability experiments."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, svd

from .geometry import (ConstantWeight, Domain, GaussianBump, Weight, make_perturbed,
                       sample_directions, smooth_step)
from .io import write_csv
from .geometry import make_euclidean
from .normal import PrincipalSymbol, assemble_dense, operator_scale
from .phantoms import gaussian
from .transform import Grid, Projector, ScalarField, make_layout

__all__ = [
    "SobolevOrder",
    "sobolev_norm",
    "sobolev_weighting",
    "sobolev_matrix",
    "rolloff",
    "SymbolPreconditioner",
    "precondition",
    "ReconResult",
    "StagnationError",
    "cg_normal_solve",
    "StabilityReport",
    "estimate_stability_constant",
    "BumpScaledWeight",
    "ck_distance",
    "PerturbationSweep",
    "perturbation_sweep",
    "DEFAULT_DELTAS",
]

DEFAULT_DELTAS = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


@dataclass(frozen=True)
class SobolevOrder:
    m: float

    def __post_init__(self):
        if not np.isfinite(self.m) or self.m < 0:
            raise ValueError("Sobolev order must be finite and >= 0")


def rolloff(grid: Grid) -> np.ndarray:
    """Tensor roll-off equal to 1 on M, vanishing at the boundary of M1 over ``pad/2``."""
    L1 = grid.domain.outer_half_width
    width = 0.5 * grid.domain.pad * grid.domain.half_width
    out = np.ones(grid.shape)
    if width <= 0:
        return out
    for ax, c in enumerate(grid.mesh()):
        out = out * smooth_step((L1 - np.abs(c)) / width)
    return out


def _order(m) -> float:
    return m.m if isinstance(m, SobolevOrder) else SobolevOrder(float(m)).m


def sobolev_weighting(f, m, torus: bool = False, grid: Grid | None = None) -> np.ndarray:
    """Array whose Euclidean norm is the ``H^m`` norm of ``f``.

    ``f_hat`` is scaled by ``sqrt(h^n / N^n)`` so that ``m = 0`` reproduces
    the grid ``L^2`` norm (Parseval).
    """
    if isinstance(f, ScalarField):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f)
    m = _order(m)
    if not torus:
        vals = vals * rolloff(grid)
    h = grid.spacing
    F = np.fft.fftn(vals)
    ks = np.meshgrid(*([2 * np.pi * np.fft.fftfreq(grid.size, d=h)] * grid.n), indexing="ij")
    k2 = sum(k * k for k in ks)
    scale = np.sqrt(h**grid.n / grid.size**grid.n)
    return F * (1.0 + k2) ** (m / 2) * scale


def sobolev_norm(f, m, torus: bool = False, grid: Grid | None = None) -> float:
    """``(sum_k (1 + |k|^2)^m |f_hat(k)|^2)^(1/2)`` on the periodic box M1.

    Unless ``torus`` is set, ``f`` is first multiplied by :func:`rolloff`.
    """
    return float(np.linalg.norm(sobolev_weighting(f, m, torus, grid)))


def sobolev_matrix(grid: Grid, m, torus: bool = False) -> np.ndarray:
    """Dense ``S`` with ``||S f||_2 = sobolev_norm(f)``; small grids only."""
    cells = grid.size**grid.n
    cols = []
    e = np.zeros(cells)
    for k in range(cells):
        e[k] = 1.0
        cols.append(sobolev_weighting(e.reshape(grid.shape), m, torus, grid).ravel())
        e[k] = 0.0
    return np.stack(cols, axis=1)


# -- preconditioning ---------------------------------------------------------

class SymbolPreconditioner:
    """Fourier multiplier ``1 / (scale * p(x_c, xi))`` with ``x_c`` the domain centre.

    The multiplier is tabulated over directions and interpolated in angle
    (nearest Fibonacci direction for n = 3). At ``xi = 0`` the value at the
    lowest resolved frequency is used so the filter stays positive definite.
    Fields are zero-padded to twice the grid to suppress wrap-around.
    """

    def __init__(self, symbol: PrincipalSymbol, grid: Grid, center=None, n_table: int = 360,
                 scale: float | None = None):
        self.grid = grid
        n = grid.n
        self.scale = operator_scale(n) if scale is None else scale
        xc = np.zeros(n) if center is None else np.asarray(center, float)
        size = 2 * grid.size
        h = grid.spacing
        ks = np.meshgrid(*([2 * np.pi * np.fft.fftfreq(size, d=h)] * n), indexing="ij")
        kmag = np.sqrt(sum(k * k for k in ks))
        kmin = 2 * np.pi / (size * h)
        if n == 2:
            ang = 2 * np.pi * np.arange(n_table) / n_table
            table = np.array([symbol(xc, (np.cos(a), np.sin(a))) for a in ang])
            if np.min(table) <= 0:
                raise ValueError("symbol is not elliptic at the domain centre")
            a = np.mod(np.arctan2(ks[1], ks[0]), 2 * np.pi)
            unit = np.interp(a, np.append(ang, 2 * np.pi), np.append(table, table[0]))
        else:
            dirs = sample_directions(n, max(n_table, 400))
            table = np.array([symbol(xc, d) for d in dirs])
            if np.min(table) <= 0:
                raise ValueError("symbol is not elliptic at the domain centre")
            kv = np.stack([k.ravel() for k in ks], axis=-1)
            near = np.argmax(kv @ dirs.T, axis=1)
            unit = table[near].reshape(kmag.shape)
        # p(x, xi) = p(x, xi_hat) |xi|^(1-n)
        self.multiplier = np.maximum(kmag, kmin) ** (n - 1) / (self.scale * unit)
        self.size = size

    def __call__(self, g) -> np.ndarray:
        vals = g.values if isinstance(g, ScalarField) else np.asarray(g)
        N = self.grid.size
        padded = np.zeros((self.size,) * self.grid.n, dtype=vals.dtype)
        padded[(slice(0, N),) * self.grid.n] = vals
        out = np.fft.ifftn(np.fft.fftn(padded) * self.multiplier)
        out = out[(slice(0, N),) * self.grid.n]
        return out.real if np.isrealobj(vals) else out


def precondition(g: ScalarField, symbol: PrincipalSymbol, **kw) -> ScalarField:
    return ScalarField(g.grid, SymbolPreconditioner(symbol, g.grid, **kw)(g))


# -- conjugate gradients -----------------------------------------------------

class StagnationError(RuntimeError):
    """CG residual stopped decreasing."""


@dataclass
class ReconResult:
    field: ScalarField
    iterations: int
    converged: bool
    stagnated: bool
    log: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def relative_residual(self) -> float:
        return self.log[-1][1] if self.log else 0.0

    def to_csv(self, path):
        return write_csv(path, ["iteration", "relative_residual", "energy"], self.log)


def cg_normal_solve(projector: Projector, g, tol: float = 1e-6, max_iter: int = 200,
                    preconditioner=None, mask: np.ndarray | None = None,
                    stagnation_window: int = 25, raise_on_stagnation: bool = False) -> ReconResult:
    """Preconditioned CG for ``P_M N P_M f = P_M R^T g``.

    The log holds ``(iteration, |r| / |b|, energy)`` with energy
    ``0.5 <A f, f> - <b, f>``, which CG decreases monotonically. Stagnation is
    declared when the best residual fails to improve by 1% over
    ``stagnation_window`` iterations.
    """
    t0 = time.perf_counter()
    grid = projector.grid
    M = (grid.inner_mask() if mask is None else mask).astype(float)
    b = projector.transpose(g).values * M
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return ReconResult(ScalarField(grid, x), 0, True, False, [(0, 0.0, 0.0)],
                           time.perf_counter() - t0)

    def A(v):
        return projector.normal(v * M).values * M

    def Pc(v):
        return (preconditioner(v * M) * M) if preconditioner is not None else v

    r = b.copy()
    z = Pc(r)
    p = z.copy()
    rz = np.vdot(r, z).real
    log = [(0, 1.0, 0.0)]
    energy = 0.0
    best, best_it = 1.0, 0
    converged = stagnated = False
    it = 0
    for it in range(1, max_iter + 1):
        Ap = A(p)
        pAp = np.vdot(p, Ap).real
        if pAp <= 0:
            stagnated = True
            break
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        # energy drop of an exact line search: alpha^2 pAp / 2
        energy -= 0.5 * alpha * rz
        rel = float(np.linalg.norm(r) / bnorm)
        log.append((it, rel, float(energy)))
        if rel <= tol:
            converged = True
            break
        if rel < 0.99 * best:
            best, best_it = rel, it
        elif it - best_it >= stagnation_window:
            stagnated = True
            break
        z = Pc(r)
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    if stagnated and raise_on_stagnation:
        raise StagnationError(f"CG stagnated at relative residual {log[-1][1]:.3e} after {it} iterations")
    return ReconResult(ScalarField(grid, x), it, converged, stagnated, log, time.perf_counter() - t0)


# -- stability ---------------------------------------------------------------

@dataclass
class StabilityReport:
    """``C_est = 1 / sigma_min`` of ``f -> N f`` from ``L^2(M)`` to ``H^m(M1)``."""

    sigma_min: float
    sigma_max: float
    sigma_min_svd: float
    C_est: float
    m: float
    grid_size: int
    n_theta: int
    fingerprint: str
    noninjective: bool
    operator: np.ndarray = field(repr=False, default=None)

    def amplification_ok(self, f, normal_f, tol_factor: float = 0.1) -> bool:
        lhs = f.norm()
        rhs = (1 + tol_factor) * self.C_est * sobolev_norm(normal_f, self.m)
        return bool(lhs <= rhs)


def _scaled_operator(dense, S, mask):
    h_n = dense.grid.cell_volume
    cols = mask.ravel()
    return (S @ dense.matrix[:, cols]) / np.sqrt(h_n)


def _sigma_min_inverse_power(B: np.ndarray, iters: int = 200, seed: int = 0) -> float:
    G = (B.conj().T @ B)
    G = 0.5 * (G + G.conj().T).real if np.isrealobj(B) else 0.5 * (G + G.conj().T)
    try:
        c = cho_factor(G)
    except np.linalg.LinAlgError:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = cho_solve(c, v)
        lam_new = 1.0 / np.linalg.norm(u)
        v = u / np.linalg.norm(u)
        if abs(lam_new - lam) <= 1e-14 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def estimate_stability_constant(df, weight, grid: Grid, n_theta: int | None = None,
                                m: float | None = None, delta_factor: float = 2.0,
                                dense=None) -> StabilityReport:
    n = grid.n
    m = float(n - 1) if m is None else float(m)
    dense = dense or assemble_dense(df, weight, grid, n_theta, delta_factor)
    S = sobolev_matrix(grid, m)
    B = _scaled_operator(dense, S, grid.inner_mask())
    s = svd(B, compute_uv=False)
    smin_svd, smax = float(s[-1]), float(s[0])
    smin = _sigma_min_inverse_power(B)
    noninj = smin_svd < 1e-12 * smax or smin < 1e-12 * smax
    C = 1.0 / smin if smin > 0 else np.inf
    fp = f"{df.describe()}|{getattr(weight, 'describe', lambda: 'constant(1.0)')()}|{grid.size}^{n}|ntheta={dense.layout.n_theta}|m={m}"
    return StabilityReport(smin, smax, smin_svd, C, m, grid.size, dense.layout.n_theta, fp, noninj, B)


# -- perturbation sweep --------------------------------------------------------

@dataclass(frozen=True)
class BumpScaledWeight(Weight):
    """``w_delta = w * (1 + delta * a(x))`` for a bump ``a``."""

    base: Weight
    bump: GaussianBump
    delta: float
    n: int = 2

    def eval(self, x, theta):
        x = np.asarray(x, float)
        return self.base.eval(x, theta) * (1.0 + self.delta * self.bump.value(x))

    def describe(self) -> str:
        return f"{self.base.describe()}*(1+{self.delta}*bump)"


def _partials(fn, z, K, step):
    """All mixed central differences of ``fn`` up to order ``K`` at points ``z``.

    Returns ``{order: max |D^alpha fn|}``.
    """
    from itertools import combinations_with_replacement

    d = z.shape[-1]
    out = {}
    for k in range(K + 1):
        best = 0.0
        for alpha in combinations_with_replacement(range(d), k):
            acc = np.zeros(len(z))
            # tensor stencil of first central differences
            offsets = [np.zeros(d)]
            coefs = [1.0]
            for ax in alpha:
                new_off, new_c = [], []
                for o, c in zip(offsets, coefs):
                    for sgn in (1, -1):
                        e = o.copy()
                        e[ax] += sgn * step
                        new_off.append(e)
                        new_c.append(c * sgn / (2 * step))
                offsets, coefs = new_off, new_c
            for o, c in zip(offsets, coefs):
                acc += c * fn(z + o)
            best = max(best, float(np.max(np.abs(acc))))
        out[k] = best
    return out


def ck_distance(base_df, base_w, df, w, K: int = 4, samples: int = 9, n_angle: int = 8,
                step: float = 0.02, domain=None) -> dict:
    """Sampled ``C^k`` distances (k <= K) of ``(phi, w)`` from ``(phi0, w0)``.

    Derivatives are taken in ``(x, angle)`` on M1 x S^1 by central
    differences; the distance at order k is the largest derivative of order
    at most k of either difference.
    """
    n = base_df.n
    if n != 2:
        raise ValueError("ck_distance samples (x, angle) and supports n = 2")
    domain = domain or Domain(n=2)
    x = domain.sample_points(samples)
    a = 2 * np.pi * np.arange(n_angle) / n_angle
    z = np.array([[p[0], p[1], t] for p in x for t in a])

    def split(zz):
        th = np.stack([np.cos(zz[:, 2]), np.sin(zz[:, 2])], axis=-1)
        return zz[:, :2], th

    def dphi(zz):
        xx, th = split(zz)
        return df.eval(xx, th) - base_df.eval(xx, th)

    def dw_signed(zz):
        xx, th = split(zz)
        return np.real(np.asarray(w.eval(xx, th)) - np.asarray(base_w.eval(xx, th)))

    pp = _partials(dphi, z, K, step)
    pw = _partials(dw_signed, z, K, step)
    out = {}
    for k in range(K + 1):
        out[k] = max(max(pp[j] for j in range(k + 1)), max(pw[j] for j in range(k + 1)))
    return out


def _power_norm(B: np.ndarray, iters: int = 30, restarts: int = 3, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(restarts):
        v = rng.standard_normal(B.shape[1])
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(iters):
            u = B.conj().T @ (B @ v)
            nu = np.linalg.norm(u)
            if nu == 0:
                break
            v = u / nu
            est = float(np.linalg.norm(B @ v))
        best = max(best, est)
    return best


@dataclass
class PerturbationSweep:
    deltas: np.ndarray
    dist: dict
    opnorm: np.ndarray
    opnorm_svd: np.ndarray
    sigma_min: np.ndarray
    sigma_min_base: float
    recon_err: np.ndarray
    recon_err_base: float
    iters: np.ndarray
    slope: float
    intercept: float
    r2: float
    C1: float
    C2: float
    delta_abs: float

    @property
    def weyl_ok(self) -> np.ndarray:
        """``sigma_min(N_delta) >= sigma_min(N) - ||N - N_delta||`` per delta."""
        slack = 1e-9 * self.sigma_min_base
        return self.sigma_min + slack >= self.sigma_min_base - self.opnorm_svd

    @property
    def absorbed_positive(self) -> bool:
        below = self.deltas < self.delta_abs
        return bool(np.all(self.sigma_min[below] > 0)) and bool(
            np.all(self.sigma_min_base - self.opnorm_svd[below] > 0))

    def rows(self):
        for i, d in enumerate(self.deltas):
            yield (d, self.dist[2][i], self.dist[3][i], self.dist[4][i], self.opnorm[i],
                   self.sigma_min[i], self.recon_err[i], int(self.iters[i]))

    def to_csv(self, path):
        rows = list(self.rows())
        rows.append(("fit", "slope", self.slope, "r2", self.r2, "delta_abs", self.delta_abs, ""))
        return write_csv(path, ["delta", "dist_C2", "dist_C3", "dist_C4", "opnorm", "sigma_min",
                                "recon_err", "iters"], rows)


def perturbation_sweep(bump: GaussianBump, grid: Grid, deltas=DEFAULT_DELTAS, weight: Weight | None = None,
                       couple_weight: bool = True, n_theta: int | None = None, m: float | None = None,
                       phantom: np.ndarray | None = None, seed: int = 0, delta_factor: float = 2.0,
                       cg_tol: float = 1e-8, cg_max_iter: int = 300) -> PerturbationSweep:
    """Measure how ``N`` moves along ``phi_delta = x.theta + delta a(x)|theta|``.

    Reconstruction data are produced by the base operator and inverted with
    the perturbed one.
    """
    deltas = np.asarray(deltas, float)
    if np.any(np.diff(deltas) <= 0) or np.any(deltas < 0):
        raise ValueError("delta ladder must be nonnegative and strictly increasing")
    n = grid.n
    m = float(n - 1) if m is None else float(m)
    n_theta = n_theta or 4 * grid.size
    base_w = weight if weight is not None else ConstantWeight(1.0, n=n)
    base_df = make_euclidean(n)
    layout = make_layout(make_perturbed(bump, float(deltas.max())), grid, n_theta, delta_factor)
    base_dense = assemble_dense(base_df, base_w, grid, layout=layout, delta_factor=delta_factor)
    S = sobolev_matrix(grid, m)
    mask = grid.inner_mask()
    B0 = _scaled_operator(base_dense, S, mask)
    smin0 = float(svd(B0, compute_uv=False)[-1])
    f_true = phantom if phantom is not None else gaussian(grid, sigma=0.3).values
    base_proj = Projector(base_df, base_w, grid, layout, delta_factor)
    data = base_proj.forward(f_true)
    err0 = _recon_err(base_proj, data, f_true, cg_tol, cg_max_iter)[0]
    dist = {k: [] for k in range(5)}
    opn, opn_svd, smins, errs, its = [], [], [], [], []
    for d in deltas:
        df = make_perturbed(bump, d)
        w = BumpScaledWeight(base_w, bump, d, n=n) if couple_weight else base_w
        for k, v in ck_distance(base_df, base_w, df, w).items():
            dist[k].append(v)
        dense = assemble_dense(df, w, grid, layout=layout, delta_factor=delta_factor)
        B = _scaled_operator(dense, S, mask)
        dB = B0 - B
        opn.append(_power_norm(dB, seed=seed))
        opn_svd.append(float(svd(dB, compute_uv=False)[0]) if np.any(dB) else 0.0)
        smins.append(float(svd(B, compute_uv=False)[-1]))
        e, it = _recon_err(Projector(df, w, grid, layout, delta_factor), data, f_true, cg_tol, cg_max_iter)
        errs.append(e)
        its.append(it)
    opn = np.array(opn)
    pos = (deltas > 0) & (opn > 0)
    slope, intercept, r2 = np.nan, np.nan, np.nan
    if np.count_nonzero(pos) >= 2:
        X, Y = np.log(deltas[pos]), np.log(opn[pos])
        slope, intercept = np.polyfit(X, Y, 1)
        resid = Y - (slope * X + intercept)
        r2 = 1.0 - float(np.sum(resid**2) / np.sum((Y - Y.mean()) ** 2))
    C1 = 1.0 / smin0
    C2 = float(np.max(opn[pos] / deltas[pos])) if np.any(pos) else 0.0
    delta_abs = min(1.0 / (2 * C1 * C2), 0.5) if C2 > 0 else 0.5
    return PerturbationSweep(deltas, {k: np.array(v) for k, v in dist.items()}, opn, np.array(opn_svd),
                             np.array(smins), smin0, np.array(errs), err0, np.array(its),
                             float(slope), float(intercept), float(r2), C1, C2, delta_abs)


def _recon_err(proj, data, f_true, tol, max_iter):
    res = cg_normal_solve(proj, data, tol=tol, max_iter=max_iter)
    err = np.linalg.norm(res.field.values - f_true) / np.linalg.norm(f_true)
    return float(err), res.iterations
