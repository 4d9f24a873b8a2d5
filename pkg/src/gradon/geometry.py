"""Defining functions, weights, direction sampling and the Bolker checks.

A defining function ``phi(x, theta)`` is positively homogeneous of degree one
in ``theta``; its level sets ``{x : phi(x, theta) = s}`` are the surfaces the
transform integrates over. All evaluators broadcast over leading axes: ``x``
has shape ``(..., n)`` and ``theta`` has shape ``(..., n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "Domain",
    "Direction",
    "sample_directions",
    "sphere_weights",
    "smooth_step",
    "GaussianBump",
    "DefiningFunction",
    "EuclideanPhi",
    "PerturbedPhi",
    "MapPhi",
    "make_euclidean",
    "make_perturbed",
    "make_folded",
    "Weight",
    "ConstantWeight",
    "GaussianModulatedWeight",
    "validate_weight",
    "BolkerReport",
    "check_defining",
    "check_bolker",
    "BeylkinClassError",
]


class BeylkinClassError(ValueError):
    """Raised when a defining function leaves the admissible class."""


@dataclass(frozen=True)
class Domain:
    """Box ``M1 = [-L1, L1]^n`` holding the inner domain ``M``.

    ``M`` is ``[-L, L]^n`` (``inner="box"``) or the ball of radius ``L``.
    """

    n: int = 2
    half_width: float = 1.0
    pad: float = 0.25
    inner: str = "box"

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"unsupported dimension {self.n}")
        if self.half_width <= 0 or self.pad < 0:
            raise ValueError("half_width must be positive and pad nonnegative")
        if self.inner not in ("box", "ball"):
            raise ValueError(f"unknown inner domain {self.inner!r}")

    @property
    def outer_half_width(self) -> float:
        return self.half_width * (1.0 + self.pad)

    def in_inner(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        L = self.half_width * (1 + 1e-12)
        if self.inner == "ball":
            return np.linalg.norm(x, axis=-1) <= L
        return np.all(np.abs(x) <= L, axis=-1)

    def in_outer(self, x: np.ndarray) -> np.ndarray:
        return np.all(np.abs(np.asarray(x, dtype=float)) <= self.outer_half_width * (1 + 1e-12), axis=-1)

    def sample_points(self, count: int, region: str = "outer") -> np.ndarray:
        """Cell-centred tensor grid with ``count`` points per axis, flattened."""
        Lr = self.outer_half_width if region == "outer" else self.half_width
        step = 2 * Lr / count
        axis = -Lr + (np.arange(count) + 0.5) * step
        mesh = np.meshgrid(*([axis] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class Direction:
    """A unit vector in R^n; in the plane also available as an angle."""

    coords: tuple

    def __post_init__(self):
        v = np.asarray(self.coords, dtype=float)
        if v.ndim != 1 or v.size not in (2, 3):
            raise ValueError("direction must be a 2- or 3-vector")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("direction must have unit length")

    @classmethod
    def from_vector(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float)
        return cls(tuple(v / np.linalg.norm(v)))

    @classmethod
    def from_angle(cls, angle: float) -> "Direction":
        return cls((float(np.cos(angle)), float(np.sin(angle))))

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def angle(self) -> float:
        if self.n != 2:
            raise AttributeError("angle is only defined for n = 2")
        return float(np.arctan2(self.coords[1], self.coords[0]) % (2 * np.pi))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


def sample_directions(n: int, count: int) -> np.ndarray:
    """Directions on S^{n-1}: uniform angles for n = 2, Fibonacci lattice for n = 3."""
    if count < 1:
        raise ValueError("count must be positive")
    if n == 2:
        a = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(a), np.sin(a)], axis=-1)
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        golden = np.pi * (3.0 - np.sqrt(5.0))
        phi = golden * np.arange(count)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    raise ValueError(f"unsupported dimension {n}")


def sphere_weights(n: int, count: int) -> np.ndarray:
    total = 2 * np.pi if n == 2 else 4 * np.pi
    return np.full(count, total / count)


def _bump_core(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _bump_core_d(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smooth_step(t, derivative: bool = False):
    """C-infinity step rising from 0 at ``t <= 0`` to 1 at ``t >= 1``."""
    a, b = _bump_core(t), _bump_core(1.0 - np.asarray(t, dtype=float))
    if not derivative:
        return a / (a + b)
    da, db = _bump_core_d(t), _bump_core_d(1.0 - np.asarray(t, dtype=float))
    return (da * b + a * db) / (a + b) ** 2


@dataclass(frozen=True)
class GaussianBump:
    """Gaussian profile tapered to compact support of radius ``support``.

    The taper is exactly one up to ``0.6 * support``.
    """

    center: tuple
    width: float
    amplitude: float = 1.0
    support: float | None = None

    def _radius(self) -> float:
        return 3.5 * self.width if self.support is None else self.support

    def _profile(self, r):
        R = self._radius()
        r_in = 0.6 * R
        g = self.amplitude * np.exp(-0.5 * (r / self.width) ** 2)
        dg = -r / self.width**2 * g
        t = (r - r_in) / (R - r_in)
        T = 1.0 - smooth_step(t)
        dT = -smooth_step(t, derivative=True) / (R - r_in)
        return g * T, dg * T + g * dT

    def value(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        return self._profile(np.linalg.norm(d, axis=-1))[0]

    def grad(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        r = np.linalg.norm(d, axis=-1)
        dp = self._profile(r)[1]
        safe = np.where(r > 0, r, 1.0)
        return (dp / safe)[..., None] * d * (r > 0)[..., None]

    def max_grad(self, samples: int = 4001) -> float:
        r = np.linspace(0.0, self._radius(), samples)
        return float(np.max(np.abs(self._profile(r)[1])))


class DefiningFunction:
    """Base class and plugin point for defining functions.

    Subclasses implement ``eval``, ``grad_x``, ``grad_theta`` and
    ``mixed_hessian`` (``H[..., i, j] = d^2 phi / dx_i dtheta_j``).
    """

    kind = "user"
    n: int = 2

    def eval(self, x, theta):
        raise NotImplementedError

    def grad_x(self, x, theta):
        raise NotImplementedError

    def grad_theta(self, x, theta):
        raise NotImplementedError

    def mixed_hessian(self, x, theta):
        raise NotImplementedError

    def jacobian(self, x, theta):
        """Surface-measure density ``|d_x phi|`` (Euclidean metric)."""
        return np.linalg.norm(self.grad_x(x, theta), axis=-1)

    def describe(self) -> str:
        return self.kind


@dataclass(frozen=True)
class EuclideanPhi(DefiningFunction):
    """phi(x, theta) = x . theta"""

    n: int = 2
    kind = "euclidean"

    def eval(self, x, theta):
        return np.sum(np.asarray(x) * np.asarray(theta), axis=-1)

    def grad_x(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(theta, float))
        return theta.copy()

    def grad_theta(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(theta, float))
        return x.copy()

    def mixed_hessian(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(theta, float))
        return np.broadcast_to(np.eye(self.n), x.shape[:-1] + (self.n, self.n)).copy()

    def describe(self) -> str:
        return f"euclidean(n={self.n})"


@dataclass(frozen=True)
class PerturbedPhi(DefiningFunction):
    """phi(x, theta) = x . theta + eps * a(x) * |theta| for a smooth bump ``a``."""

    bump: GaussianBump
    eps: float
    n: int = 2
    kind = "perturbed"

    def eval(self, x, theta):
        x, theta = np.asarray(x, float), np.asarray(theta, float)
        return np.sum(x * theta, axis=-1) + self.eps * self.bump.value(x) * np.linalg.norm(theta, axis=-1)

    def grad_x(self, x, theta):
        x, theta = np.asarray(x, float), np.asarray(theta, float)
        tn = np.linalg.norm(theta, axis=-1)[..., None]
        return theta + self.eps * self.bump.grad(x) * tn

    def grad_theta(self, x, theta):
        x, theta = np.asarray(x, float), np.asarray(theta, float)
        tn = np.linalg.norm(theta, axis=-1)[..., None]
        return x + self.eps * self.bump.value(x)[..., None] * theta / tn

    def mixed_hessian(self, x, theta):
        x, theta = np.asarray(x, float), np.asarray(theta, float)
        that = theta / np.linalg.norm(theta, axis=-1)[..., None]
        ga = self.bump.grad(x)
        ga, that = np.broadcast_arrays(ga, that)
        return np.eye(self.n) + self.eps * ga[..., :, None] * that[..., None, :]

    def describe(self) -> str:
        b = self.bump
        return f"perturbed(center={tuple(b.center)},width={b.width},amp={b.amplitude},eps={self.eps})"


@dataclass(frozen=True)
class MapPhi(DefiningFunction):
    """phi(x, theta) = F(x) . theta for a user map ``F`` with Jacobian ``DF``.

    ``DF(x)[..., i, j] = dF_i / dx_j``. The mixed Hessian is ``DF^T`` and
    ``d_theta phi = F(x)``, so the Bolker injectivity condition is
    injectivity of ``F``.
    """

    F: Callable
    DF: Callable
    n: int = 2
    label: str = "map"
    kind = "user"

    def eval(self, x, theta):
        return np.sum(self.F(np.asarray(x, float)) * np.asarray(theta, float), axis=-1)

    def grad_x(self, x, theta):
        J = self.DF(np.asarray(x, float))
        return np.einsum("...ij,...i->...j", J, np.asarray(theta, float))

    def grad_theta(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(theta, float))
        return np.broadcast_to(self.F(x), theta.shape).copy()

    def mixed_hessian(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(theta, float))
        J = self.DF(x)
        return np.swapaxes(J, -1, -2)

    def describe(self) -> str:
        return self.label


def make_euclidean(n: int) -> EuclideanPhi:
    if n not in (2, 3):
        raise ValueError(f"unsupported dimension {n}")
    return EuclideanPhi(n=n)


def make_perturbed(bump: GaussianBump, eps: float, domain: Domain | None = None,
                   samples: int = 33) -> PerturbedPhi:
    """Bump-perturbed linear defining function.

    The mixed Hessian determinant is ``1 + eps * grad(a) . theta_hat``; it is
    checked on samples of ``domain`` (default: the unit-padded square) and a
    nonpositive value raises :class:`BeylkinClassError`.
    """
    n = len(bump.center)
    df = PerturbedPhi(bump=bump, eps=float(eps), n=n)
    domain = domain or Domain(n=n)
    x = domain.sample_points(samples)
    th = sample_directions(n, 64 if n == 2 else 128)
    det = 1.0 + eps * (bump.grad(x) @ th.T)
    if np.min(det) <= 0:
        i, j = np.unravel_index(np.argmin(det), det.shape)
        raise BeylkinClassError(
            f"mixed Hessian determinant {det[i, j]:.3e} <= 0 at x={x[i]}, theta={th[j]} (eps={eps})")
    return df


def make_folded(period: float = 0.9375, radius_offset: float = 2.0) -> MapPhi:
    """Planar defining function whose level sets fold onto themselves.

    ``F(x) = (r0 + x1) * (cos(k x2), sin(k x2))`` with ``k = 2 pi / period``:
    orientation preserving (``det DF = k (r0 + x1) > 0``) but periodic in
    ``x2``, so ``x`` and ``x + period * e2`` share every level set.
    """
    k = 2 * np.pi / period
    r0 = float(radius_offset)

    def F(x):
        r = r0 + x[..., 0]
        return np.stack([r * np.cos(k * x[..., 1]), r * np.sin(k * x[..., 1])], axis=-1)

    def DF(x):
        r = r0 + x[..., 0]
        c, s = np.cos(k * x[..., 1]), np.sin(k * x[..., 1])
        row0 = np.stack([c, -k * r * s], axis=-1)
        row1 = np.stack([s, k * r * c], axis=-1)
        return np.stack([row0, row1], axis=-2)

    return MapPhi(F=F, DF=DF, n=2, label=f"folded(period={period},r0={r0})")


class Weight:
    """Weight ``w(x, theta)``; subclasses implement ``eval``."""

    n: int = 2

    def eval(self, x, theta):
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


@dataclass(frozen=True)
class ConstantWeight(Weight):
    value: complex = 1.0
    n: int = 2

    def eval(self, x, theta):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(theta)[:-1])
        return np.full(shape, self.value)

    def describe(self) -> str:
        return f"constant({self.value})"


@dataclass(frozen=True)
class GaussianModulatedWeight(Weight):
    """w = value * (1 + amplitude * g(x) * (1 + tilt * theta_1)), g a unit Gaussian.

    Positive whenever ``|amplitude| * (1 + |tilt|) < 1``.
    """

    value: float = 1.0
    amplitude: float = 0.3
    center: tuple = (0.0, 0.0)
    width: float = 0.5
    tilt: float = 0.5
    n: int = 2

    def __post_init__(self):
        if abs(self.amplitude) * (1 + abs(self.tilt)) >= 1:
            raise ValueError("weight would vanish: need |amplitude| * (1 + |tilt|) < 1")

    def eval(self, x, theta):
        x, theta = np.asarray(x, float), np.asarray(theta, float)
        d = x - np.asarray(self.center, float)
        g = np.exp(-0.5 * np.sum(d * d, axis=-1) / self.width**2)
        t1 = theta[..., 0] / np.linalg.norm(theta, axis=-1)
        return self.value * (1.0 + self.amplitude * g * (1.0 + self.tilt * t1))

    def describe(self) -> str:
        return (f"gaussian-modulated(value={self.value},amp={self.amplitude},"
                f"center={tuple(self.center)},width={self.width},tilt={self.tilt})")


def validate_weight(w: Weight, domain: Domain, n_x: int = 33, n_theta: int = 64) -> float:
    """Return the sampled ``min |w|``; raise if ``w`` vanishes or changes sign."""
    x = domain.sample_points(n_x)
    th = sample_directions(domain.n, n_theta)
    vals = np.asarray(w.eval(x[:, None, :], th[None, :, :]))
    mins = float(np.min(np.abs(vals)))
    if not np.all(np.isfinite(vals)):
        raise ValueError("weight is not finite on the sampled domain")
    if mins <= 0:
        raise ValueError("weight vanishes on the sampled domain")
    if np.isrealobj(vals) and np.min(vals) < 0 < np.max(vals):
        raise ValueError("real weight changes sign on the sampled domain")
    return mins


@dataclass
class BolkerReport:
    """Sampled verdicts for the defining-function and global Bolker conditions."""

    n_x: int
    n_theta: int
    spacing: float
    homogeneity_error: float = np.nan
    min_grad_norm: float = np.nan
    grad_witness: tuple = ()
    min_det: float = np.nan
    det_witness: tuple = ()
    derivative_error: float = np.nan
    derivatives_ok: bool = True
    injectivity_margin: float = np.nan
    injectivity_witness: tuple = ()
    injectivity_threshold: float = 1e-6
    max_gap: float = np.nan
    gap_witness: tuple = ()
    max_gap_padding: float = np.nan
    gap_threshold: float = np.nan
    checked_bolker: bool = False
    notes: list = field(default_factory=list)

    @property
    def homogeneous_ok(self) -> bool:
        return self.homogeneity_error <= 1e-10

    @property
    def nondegenerate_ok(self) -> bool:
        return self.min_grad_norm > 0

    @property
    def mixed_hessian_ok(self) -> bool:
        return self.min_det > 0

    @property
    def defining_ok(self) -> bool:
        return self.homogeneous_ok and self.nondegenerate_ok and self.mixed_hessian_ok

    @property
    def injectivity_ok(self) -> bool:
        return self.injectivity_margin > self.injectivity_threshold

    @property
    def surjectivity_ok(self) -> bool:
        return self.max_gap < self.gap_threshold

    @property
    def surjectivity_padding_ok(self) -> bool:
        return not (self.max_gap_padding >= self.gap_threshold)

    @property
    def passed(self) -> bool:
        ok = self.defining_ok
        if self.checked_bolker:
            ok = ok and self.injectivity_ok and self.surjectivity_ok
        return ok

    def rows(self) -> list[tuple[str, str, float]]:
        """(condition, PASS/FAIL, worst value) rows for CSV output."""
        rows = [
            ("homogeneity", self.homogeneous_ok, self.homogeneity_error),
            ("nondegenerate", self.nondegenerate_ok, self.min_grad_norm),
            ("mixed_hessian", self.mixed_hessian_ok, self.min_det),
            ("derivatives", self.derivatives_ok, self.derivative_error),
        ]
        if self.checked_bolker:
            rows += [
                ("injectivity", self.injectivity_ok, self.injectivity_margin),
                ("surjectivity", self.surjectivity_ok, self.max_gap),
                ("surjectivity_padding", self.surjectivity_padding_ok, self.max_gap_padding),
            ]
        return [(name, "PASS" if ok else "FAIL", float(v)) for name, ok, v in rows]


def _fd_errors(df: DefiningFunction, x: np.ndarray, th: np.ndarray, step: float = 1e-5) -> float:
    """Max relative mismatch between supplied derivatives and central differences."""
    n = x.shape[-1]
    gx, gt, H = df.grad_x(x, th), df.grad_theta(x, th), df.mixed_hessian(x, th)
    err = 0.0
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        fdx = (df.eval(x + e, th) - df.eval(x - e, th)) / (2 * step)
        fdt = (df.eval(x, th + e) - df.eval(x, th - e)) / (2 * step)
        fdH = (df.grad_x(x, th + e) - df.grad_x(x, th - e)) / (2 * step)
        scale = 1.0 + np.max(np.abs(gx)) + np.max(np.abs(gt))
        err = max(err, np.max(np.abs(fdx - gx[..., i])) / scale,
                  np.max(np.abs(fdt - gt[..., i])) / scale,
                  np.max(np.abs(fdH - H[..., :, i])) / (1.0 + np.max(np.abs(H))))
    return float(err)


def check_defining(df: DefiningFunction, domain: Domain, n_x: int = 33, n_theta: int = 64,
                   fd_tol: float = 1e-6) -> BolkerReport:
    """Sample homogeneity, ``|d_x phi| > 0`` and ``det(mixed Hessian) > 0`` over M1 x S^{n-1}."""
    if n_x < 1 or n_theta < 1:
        raise ValueError("sample counts must be positive")
    x = domain.sample_points(n_x)
    th = sample_directions(domain.n, n_theta)
    X, T = x[:, None, :], th[None, :, :]
    rep = BolkerReport(n_x=n_x, n_theta=n_theta, spacing=2 * domain.outer_half_width / n_x)

    phi = df.eval(X, T)
    scale = max(float(np.max(np.abs(phi))), 1e-300)
    hom = 0.0
    for lam in (0.5, 2.0):
        hom = max(hom, float(np.max(np.abs(df.eval(X, lam * T) - lam * phi))) / (lam * scale))
    rep.homogeneity_error = hom

    g = np.linalg.norm(df.grad_x(X, T), axis=-1)
    i, j = np.unravel_index(np.argmin(g), g.shape)
    rep.min_grad_norm, rep.grad_witness = float(g[i, j]), (x[i].copy(), th[j].copy())

    det = np.linalg.det(df.mixed_hessian(X, T))
    i, j = np.unravel_index(np.argmin(det), det.shape)
    rep.min_det, rep.det_witness = float(det[i, j]), (x[i].copy(), th[j].copy())

    sub = x[:: max(1, len(x) // 200)]
    rep.derivative_error = _fd_errors(df, sub[:, None, :], th[None, :: max(1, n_theta // 16), :])
    rep.derivatives_ok = rep.derivative_error <= fd_tol
    if not rep.derivatives_ok:
        rep.notes.append(f"derivative mismatch {rep.derivative_error:.2e} exceeds {fd_tol:.0e}")
    return rep


def _refine_collision(df, x1, x2, theta, tol=1e-13, iters=50):
    """Newton solve of d_theta phi(y, theta) = d_theta phi(x1, theta) from y = x2."""
    target = df.grad_theta(x1, theta)
    y = np.array(x2, dtype=float)
    for _ in range(iters):
        r = df.grad_theta(y, theta) - target
        if np.linalg.norm(r) < tol:
            break
        Jac = df.mixed_hessian(y, theta).T
        try:
            y = y - np.linalg.solve(Jac, r)
        except np.linalg.LinAlgError:
            break
    return y, float(np.linalg.norm(df.grad_theta(y, theta) - target))


def _resolved_covectors(df, x, n_theta, step, max_depth=10):
    """Planar covectors d_x phi(x, theta(a)) with the angle grid refined until
    consecutive covector directions differ by less than ``step``."""
    a = 2 * np.pi * np.arange(n_theta + 1) / n_theta
    for _ in range(max_depth):
        th = np.stack([np.cos(a), np.sin(a)], axis=-1)
        v = df.grad_x(x, th)
        beta = np.arctan2(v[:, 1], v[:, 0])
        jump = np.abs(np.angle(np.exp(1j * np.diff(beta))))
        coarse = jump >= step
        if not np.any(coarse):
            break
        mids = 0.5 * (a[:-1] + a[1:])[coarse]
        a = np.sort(np.concatenate([a, mids]))
    v = v[:-1]
    return v / np.linalg.norm(v, axis=-1)[:, None]


def _circle_gap(v: np.ndarray) -> tuple[float, int]:
    ang = np.sort(np.arctan2(v[:, 1], v[:, 0]))
    gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * np.pi]))
    k = int(np.argmax(gaps))
    return float(gaps[k]), k


def _sphere_gap(v: np.ndarray, probes: np.ndarray) -> float:
    cosang = np.clip(probes @ v.T, -1.0, 1.0)
    return float(np.max(np.arccos(np.max(cosang, axis=1))))


def check_bolker(df: DefiningFunction, domain: Domain, n_x: int = 33, n_theta: int = 64,
                 threshold: float = 1e-6, refine: int = 8) -> BolkerReport:
    """Sampled global Bolker check.

    Injectivity: for every sampled ``theta`` the smallest separation ratio
    ``|d_theta phi(x1) - d_theta phi(x2)| / |x1 - x2|`` over sample pairs is
    computed; the ``refine`` most suspicious distant pairs are then pushed to
    an exact collision by Newton's method when one exists. Surjectivity: the
    normalised covectors ``d_x phi(x, .)`` must cover the sphere with maximal
    angular gap below twice the direction spacing (reported separately on M
    and on the padding region).
    """
    rep = check_defining(df, domain, n_x, n_theta)
    rep.checked_bolker = True
    rep.injectivity_threshold = threshold
    n = domain.n
    x = domain.sample_points(n_x)
    th = sample_directions(n, n_theta)
    spacing = rep.spacing

    best = (np.inf, None)
    candidates = []
    for t in th:
        y = df.grad_theta(x, t)
        d_img = pdist(y)
        d_x = pdist(x)
        ratio = d_img / d_x
        k = int(np.argmin(ratio))
        if ratio[k] < best[0]:
            best = (float(ratio[k]), (k, t))
        far = d_x > 1.5 * spacing
        if refine and np.any(far):
            rf = np.where(far, ratio, np.inf)
            for kk in np.argsort(rf)[:refine]:
                candidates.append((float(rf[kk]), int(kk), t))
    margin, witness = best
    iu, ju = np.triu_indices(len(x), k=1)

    def pair(k):
        return int(iu[k]), int(ju[k])

    k, t = witness
    i, j = pair(k)
    rep.injectivity_margin = margin
    rep.injectivity_witness = (x[i].copy(), x[j].copy(), t.copy(),
                               float(np.linalg.norm(df.grad_theta(x[i], t) - df.grad_theta(x[j], t))))
    candidates.sort(key=lambda c: c[0])
    for _, kk, t in candidates[: refine * 4]:
        i, j = pair(kk)
        y, res = _refine_collision(df, x[i], x[j], t)
        sep = float(np.linalg.norm(y - x[i]))
        if sep > spacing and domain.in_outer(y) and np.isfinite(res):
            r = res / sep
            if r < rep.injectivity_margin:
                rep.injectivity_margin = r
                rep.injectivity_witness = (x[i].copy(), y, t.copy(), res)

    if n == 2:
        rep.gap_threshold = 2 * (2 * np.pi / n_theta)
    else:
        rep.gap_threshold = 2 * np.sqrt(4 * np.pi / n_theta)
    probes = sample_directions(n, 8 * n_theta) if n == 3 else None
    inner = domain.in_inner(x)
    gaps = np.empty(len(x))
    for i, xi in enumerate(x):
        if n == 2:
            gaps[i] = _circle_gap(_resolved_covectors(df, xi, n_theta, rep.gap_threshold))[0]
        else:
            v = df.grad_x(xi, th)
            gaps[i] = _sphere_gap(v / np.linalg.norm(v, axis=-1)[:, None], probes)
    k = int(np.argmax(np.where(inner, gaps, -np.inf)))
    rep.max_gap, rep.gap_witness = float(gaps[k]), (x[k].copy(),)
    rep.max_gap_padding = float(np.max(gaps[~inner])) if np.any(~inner) else np.nan
    return rep
