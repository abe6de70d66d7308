import math
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad
from scipy.special import roots_genlaguerre

from vixinverse.eigenbasis import (
    GenLaguerre,
    Hermite,
    MultiHermite2D,
    basis_dual_eval,
    basis_eval,
    basis_from_dict,
    basis_table,
    norm_sq,
    phi_eigenvalue,
    phi_eigenvalues,
)
from vixinverse.errors import DomainError
from vixinverse.factors import stationary_covariance


def test_listed_polynomial_values():
    assert basis_eval(Hermite(), 2, 1.5) == pytest.approx(1.25, abs=1e-15)
    assert basis_eval(GenLaguerre(4.0), 1, 2.0) == pytest.approx(3.0, abs=1e-15)
    assert np.all(basis_eval(Hermite(), 0, np.linspace(-3, 3, 7)) == 1.0)


def test_norms():
    assert norm_sq(Hermite(), 2) == 2.0
    assert norm_sq(GenLaguerre(4.0), 1) == pytest.approx(5.0, rel=1e-14)
    cov = np.array([[0.18, 0.01], [0.01, 0.032]])
    for b, idx in ((Hermite(), 0), (GenLaguerre(2.5), 0), (MultiHermite2D(cov, (1.0, 10.0)), (0, 0))):
        assert norm_sq(b, idx) == pytest.approx(1.0, abs=1e-15)


def test_degree_and_domain_errors():
    with pytest.raises(DomainError):
        basis_eval(Hermite(max_degree=5), 6, 0.0)
    with pytest.raises(DomainError):
        basis_eval(GenLaguerre(4.0), 1, -1.0)
    with pytest.raises(DomainError):
        GenLaguerre(0.0)
    with pytest.raises(DomainError):
        MultiHermite2D(np.array([[1.0, 2.0], [2.0, 1.0]]), (1.0, 1.0))


@pytest.mark.parametrize("n", range(7))
def test_hermite_recurrence_matches_rodrigues(n):
    z = sp.Symbol("z")
    rodrigues = sp.expand(sp.simplify((-1) ** n * sp.exp(z**2 / 2) * sp.diff(sp.exp(-(z**2) / 2), z, n)))
    for q in (Fraction(-7, 3), Fraction(1, 2), Fraction(5, 4)):
        exact = float(rodrigues.subs(z, sp.Rational(q.numerator, q.denominator)))
        assert basis_eval(Hermite(), n, float(q)) == pytest.approx(exact, rel=1e-13, abs=1e-13)


@pytest.mark.parametrize("n", range(7))
def test_laguerre_recurrence_matches_rodrigues(n):
    z = sp.Symbol("z", positive=True)
    a = sp.Rational(4)
    rodrigues = sp.simplify(sp.exp(z) * z ** (-a) * sp.diff(sp.exp(-z) * z ** (n + a), z, n) / sp.factorial(n))
    for q in (Fraction(1, 3), Fraction(2), Fraction(17, 4)):
        exact = float(rodrigues.subs(z, sp.Rational(q.numerator, q.denominator)))
        assert basis_eval(GenLaguerre(4.0), n, float(q)) == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_multi_hermite_matches_derivative_definition():
    Sigma = np.array([[0.18, 0.0174545454545], [0.0174545454545, 0.032]])
    basis = MultiHermite2D(Sigma, (1.0, 10.0), max_degree=4)
    x1, x2 = sp.symbols("x1 x2")
    P = sp.Matrix(np.linalg.inv(Sigma).tolist())
    xv = sp.Matrix([x1, x2])
    omega = sp.exp(-(xv.T * P * xv)[0] / 2)
    pt = (0.3, -0.2)
    for n1 in range(3):
        for n2 in range(3 - n1):
            expr = omega
            for _ in range(n1):
                expr = -sp.diff(expr, x1)
            for _ in range(n2):
                expr = -sp.diff(expr, x2)
            val = float((expr / omega).subs({x1: pt[0], x2: pt[1]}))
            assert basis_eval(basis, (n1, n2), pt) == pytest.approx(val, rel=1e-9, abs=1e-9)


def _omega_rule(Sigma, n=30):
    y, w = hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    Y = np.array(np.meshgrid(y, y, indexing="ij")).reshape(2, -1).T
    W = np.outer(w, w).ravel()
    return Y @ np.linalg.cholesky(Sigma).T, W


def test_bi_orthogonality(fig2_factor):
    Sigma = stationary_covariance(fig2_factor)
    basis = MultiHermite2D(Sigma, (1.0, 10.0), max_degree=6)
    x, w = _omega_rule(Sigma)
    assert abs(w @ (basis_dual_eval(basis, (1, 0), x) * basis_eval(basis, (0, 1), x))) < 1e-10
    assert w @ (basis_dual_eval(basis, (1, 1), x) * basis_eval(basis, (1, 1), x)) == pytest.approx(1.0, abs=1e-10)
    assert np.all(basis_dual_eval(basis, (0, 0), x) == 1.0)
    idx = basis.indices(4)
    primal = basis_table(basis, 4, x)
    dual = basis_table(basis, 4, x, dual=True)
    gram = (dual * w) @ primal.T
    assert np.allclose(gram, np.diag([norm_sq(basis, n) for n in idx]), atol=1e-9)


def test_one_dimensional_orthogonality():
    y, w = hermegauss(40)
    w = w / math.sqrt(2 * math.pi)
    T = basis_table(Hermite(), 8, y)
    assert np.allclose((T * w) @ T.T, np.diag([math.factorial(n) for n in range(9)]), rtol=1e-9, atol=1e-9)
    a = 4.0
    z, wl = roots_genlaguerre(40, a)
    wl = wl / math.gamma(a + 1)
    L = basis_table(GenLaguerre(a), 8, z)
    expected = np.diag([norm_sq(GenLaguerre(a), n) for n in range(9)])
    assert np.allclose((L * wl) @ L.T, expected, rtol=1e-9, atol=1e-9)


def test_dual_family_diagonalizes_generator(fig2_factor):
    # L psi~_n = -(n1 k1 + n2 k2) psi~_n for the diagonal-K generator
    Sigma = stationary_covariance(fig2_factor)
    basis = MultiHermite2D(Sigma, (1.0, 10.0), max_degree=4)
    x1, x2 = sp.symbols("x1 x2")
    Pm = np.linalg.inv(Sigma)
    A = fig2_factor.noise_covariance
    for n in [(1, 0), (0, 1), (2, 1), (1, 3)]:
        c = basis.dual[n]
        z1 = Pm[0, 0] * x1 + Pm[0, 1] * x2
        z2 = Pm[1, 0] * x1 + Pm[1, 1] * x2
        f = sum(c[i, j] * z1**i * z2**j for i in range(c.shape[0]) for j in range(c.shape[1]) if c[i, j] != 0)
        Lf = -1.0 * x1 * sp.diff(f, x1) - 10.0 * x2 * sp.diff(f, x2)
        Lf += 0.5 * sum(A[i, j] * sp.diff(f, v, u) for i, v in enumerate((x1, x2)) for j, u in enumerate((x1, x2)))
        resid = sp.expand(Lf + basis.eigen_rate(n) * f)
        coeffs = sp.Poly(resid, x1, x2).coeffs() if resid != 0 else [0]
        assert max(abs(float(k)) for k in coeffs) < 1e-8


def test_phi_eigenvalue():
    assert phi_eigenvalue(0.0, 30 / 365).value == 1.0
    tau = 30 / 365
    lam = phi_eigenvalue(1.0, tau).value
    assert lam == pytest.approx(0.960007, abs=1e-6)
    assert lam == pytest.approx(quad(lambda t: math.exp(-t), 0, tau)[0] / tau, rel=1e-13)
    vals = phi_eigenvalues(np.linspace(0, 1e4, 200), tau)
    assert np.all(np.diff(vals) < 0) and vals[-1] < 2e-3
    with pytest.raises(DomainError):
        phi_eigenvalue(-1.0, tau)


def test_basis_dict_round_trip():
    cov = np.array([[0.18, 0.01], [0.01, 0.032]])
    for b in (Hermite(2.0, 30), GenLaguerre(4.0, 4.0), MultiHermite2D(cov, (1.0, 10.0), 8)):
        assert basis_from_dict(b.to_dict()) == b
