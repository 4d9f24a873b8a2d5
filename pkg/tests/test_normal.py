import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erfc

from gradon.geometry import (ConstantWeight, DefiningFunction, Domain, GaussianBump,
                             GaussianModulatedWeight, make_euclidean, make_perturbed)
from gradon.normal import (DENSE_CAP, PrincipalSymbol, SymbolError, apply_normal, assemble_dense,
                           fit_power, operator_scale, principal_symbol, probe_symbol)
from gradon.phantoms import gaussian
from gradon.transform import Grid, Projector, ScalarField, make_layout

EUC = make_euclidean(2)
BUMP = GaussianBump(center=(0.1, 0.05), width=0.3)
PERT = make_perturbed(BUMP, 0.02)
WMOD = GaussianModulatedWeight()


def test_symbol_euclidean_examples():
    assert principal_symbol(EUC, None, (0.2, 0.3), (1.0, 0.0)) == pytest.approx(1 / np.pi, rel=1e-14)
    assert principal_symbol(EUC, None, (0.2, 0.3), (0.0, 2.0)) == pytest.approx(1 / (2 * np.pi), rel=1e-14)
    p1 = principal_symbol(EUC, ConstantWeight(1.0), (0.1, 0.1), (0.6, 0.8))
    p2 = principal_symbol(EUC, ConstantWeight(2.0), (0.1, 0.1), (0.6, 0.8))
    assert p2 == pytest.approx(4 * p1, rel=1e-14)


def test_symbol_three_dimensions():
    df = make_euclidean(3)
    p = PrincipalSymbol(df)((0.1, 0.2, 0.0), (0.0, 0.0, 2.0))
    assert p == pytest.approx(2 / (2 * np.pi) ** 2 / 4, rel=1e-13)


xs = st.tuples(st.floats(-1, 1), st.floats(-1, 1))
angles = st.floats(0, 2 * np.pi)


@given(xs, angles, st.floats(0.1, 50), st.floats(0.1, 10))
def test_symbol_homogeneous_even_elliptic(x, a, k, lam):
    sym = PrincipalSymbol(PERT, WMOD)
    xi = k * np.array([np.cos(a), np.sin(a)])
    p = sym(x, xi)
    assert p > 0
    assert sym(x, lam * xi) == pytest.approx(lam ** (1 - 2) * p, rel=1e-10)
    assert sym(x, -xi) == pytest.approx(p, rel=1e-12)


@given(xs, angles)
def test_theta_solve_hits_covector(x, a):
    sym = PrincipalSymbol(PERT, WMOD)
    xi = np.array([np.cos(a), np.sin(a)])
    th = sym.theta_for(np.array(x), xi)
    g = PERT.grad_x(np.array(x), th)
    np.testing.assert_allclose(g / np.linalg.norm(g), xi, atol=1e-10)


def test_theta_solve_three_dimensions(rng):
    df = make_euclidean(3)
    sym = PrincipalSymbol(df)
    for _ in range(10):
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        np.testing.assert_allclose(sym.theta_for(np.zeros(3), v), v, atol=1e-12)


def test_raw_and_covector_variants_coincide_for_euclidean():
    for v in PrincipalSymbol.VARIANTS:
        assert PrincipalSymbol(EUC, WMOD, v)((0.3, 0.1), (1.0, 1.0)) == pytest.approx(
            PrincipalSymbol(EUC, WMOD)((0.3, 0.1), (1.0, 1.0)), rel=1e-13)


class _Stuck(DefiningFunction):
    n = 2

    def eval(self, x, theta):
        return np.asarray(x)[..., 0] * np.linalg.norm(theta, axis=-1)

    def grad_x(self, x, theta):
        t = np.linalg.norm(theta, axis=-1)
        return np.stack([t, np.zeros_like(t)], axis=-1)

    def mixed_hessian(self, x, theta):
        theta = np.asarray(theta, float)
        th = theta / np.linalg.norm(theta, axis=-1, keepdims=True)
        return np.stack([th, np.zeros_like(th)], axis=-2)


def test_theta_solve_failure_raises():
    with pytest.raises(SymbolError):
        PrincipalSymbol(_Stuck()).theta_for(np.zeros(2), np.array([0.0, 1.0]))


@pytest.fixture(scope="module")
def dense20():
    g = Grid(Domain(), 20)
    return assemble_dense(PERT, WMOD, g, 60)


def test_apply_normal_matches_dense(dense20, rng):
    g = dense20.grid
    P = Projector(PERT, WMOD, g, dense20.layout)
    for _ in range(3):
        f = rng.standard_normal(g.shape) * g.inner_mask()
        a = apply_normal(P, f).values
        b = dense20.apply(f).values
        assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)
    assert not np.any(apply_normal(P, np.zeros(g.shape)).values)


def test_apply_normal_rejects_padding_support():
    g = Grid(Domain(), 16)
    P = Projector(EUC, None, g, make_layout(EUC, g, 16))
    f = np.zeros(g.shape)
    f[0, 0] = 1
    with pytest.raises(ValueError):
        apply_normal(P, f)


def test_dense_symmetric_psd():
    d = assemble_dense(EUC, None, Grid(Domain(), 8), 32)
    assert d.symmetry_defect() <= 1e-13
    ev = np.linalg.eigvalsh(d.matrix)
    assert ev.min() >= -1e-13 * ev.max()
    assert d.eigenvalues().min() > 0


def test_dense_cap():
    with pytest.raises(ValueError):
        assemble_dense(EUC, None, Grid(Domain(), DENSE_CAP + 1))


def test_off_diagonal_envelope_decay(dense20):
    h = dense20.grid.spacing
    centres, env = dense20.envelope(bins=20)
    tail = env[(centres > 4 * h) & np.isfinite(env)]
    # monotone up to 10% wiggle, no oscillatory growth
    assert np.all(tail[1:] <= 1.1 * np.maximum.accumulate(tail[::-1])[::-1][:-1])
    assert tail[-1] < 0.5 * tail[0]


def test_self_adjoint_in_discrete_inner_product(rng):
    g = Grid(Domain(), 32)
    P = Projector(PERT, WMOD, g, make_layout(PERT, g, 48))
    m = g.inner_mask()
    f, h = (ScalarField(g, rng.standard_normal(g.shape) * m) for _ in range(2))
    lhs = apply_normal(P, f).inner(h)
    rhs = f.inner(apply_normal(P, h))
    assert abs(lhs - rhs) <= 1e-12 * f.norm() * h.norm()
    assert apply_normal(P, f).inner(f).real >= 0


def _riesz_oracle(x, sigma, n_alpha=2048):
    """(2/|x|) * exp(-|y|^2 / (2 sigma^2)) by polar quadrature with the radial integral in closed form."""
    a = 2 * np.pi * np.arange(n_alpha) / n_alpha
    e = np.stack([np.cos(a), np.sin(a)], axis=-1)
    b = e @ x
    inner = np.exp(-(x @ x - b * b) / (2 * sigma**2)) * sigma * np.sqrt(np.pi / 2) * erfc(b / (sigma * np.sqrt(2)))
    return 2 * inner.mean() * 2 * np.pi


def test_normal_of_gaussian_matches_riesz_convolution():
    g = Grid(Domain(), 96)
    P = Projector(EUC, None, g, make_layout(EUC, g, 256))
    sigma = 0.2
    f = gaussian(g, sigma=sigma)
    Nf = apply_normal(P, f).values
    pts = g.points()
    idx = np.flatnonzero(np.linalg.norm(pts, axis=1) < 0.5)[::37]
    ref = np.array([_riesz_oracle(pts[i], sigma) for i in idx])
    got = Nf.ravel()[idx]
    assert np.max(np.abs(got - ref) / ref) < 0.03


def test_probe_scale_and_nyquist(tmp_path):
    g = Grid(Domain(), 128)
    with pytest.raises(ValueError):
        probe_symbol(EUC, None, g, (0, 0), (1, 0), [8, 200])
    res = probe_symbol(EUC, None, g, (0, 0), (1, 0), [16, 32, 48], n_theta=240)
    np.testing.assert_allclose(res.scale * res.p * res.lambdas, 4 * np.pi, rtol=1e-12)
    # asymptotic agreement: window leakage dominates at low lambda, the ratio settles to 1
    err = np.abs(res.ratio - 1)
    assert np.all(np.diff(err) < 0) and err[-1] < 0.05
    assert -1.5 < res.q < -0.9
    np.testing.assert_allclose(res.ratio, res.ratio_full, rtol=1e-12)
    assert res.to_csv(tmp_path / "p.csv").read_text().startswith("lambda,m_raw")


def test_probe_identity_matches_apply_normal():
    # <N e, e> = <R e, R e> through the exact transpose
    g = Grid(Domain(), 48)
    lay = make_layout(PERT, g, 64)
    P = Projector(PERT, WMOD, g, lay)
    X, Y = g.mesh()
    e = np.cos(10 * X) * np.exp(-(X**2 + Y**2) / 0.05) * g.inner_mask()
    a = apply_normal(P, e).inner(ScalarField(g, e)).real
    b = P.forward(e).norm() ** 2
    assert abs(a - b) <= 1e-12 * abs(a)


def test_operator_scale_values():
    assert operator_scale(2) == pytest.approx(4 * np.pi**2)
    assert operator_scale(3) == pytest.approx((2 * np.pi) ** 4)


def test_fit_power_exact():
    x = np.array([1.0, 2.0, 4.0])
    q, c = fit_power(x, 3 * x**-1.5)
    assert q == pytest.approx(-1.5) and c == pytest.approx(3)
