import json
import math

import numpy as np
import pytest
from scipy import stats

from vixinverse.eigenbasis import GenLaguerre, Hermite
from vixinverse.errors import DomainError
from vixinverse.inverse import TAU, factor_basis, recover_bergomi_multi, recover_bergomi_scalar, recover_three_halves
from vixinverse.oracle import OracleEstimate, mc_phi, quadrature_phi, semigroup_check


def _phi_x_squared(k, s, x, tau=TAU):
    """(Phi x^2)(x) for an OU factor in closed form."""
    v = s * s / (2 * k)
    avg = -math.expm1(-2 * k * tau) / (2 * k * tau)
    return x * x * avg + v * (1 - avg)


def test_constant_v2_is_exact(scalar_ou, fig4_cir):
    for fac, x in ((scalar_ou, [0.3]), (fig4_cir, [30.0])):
        est = mc_phi(fac, lambda p: np.full(len(p), 0.09), x, n_paths=1000)
        assert est.value == pytest.approx(0.09, rel=1e-14)
        assert est.standard_error < 1e-15
        assert est.method == "MonteCarlo"


def test_mc_deterministic_under_seed(scalar_ou):
    a = mc_phi(scalar_ou, lambda p: p[:, 0] ** 2, [0.2], n_paths=5000, seed=3)
    b = mc_phi(scalar_ou, lambda p: p[:, 0] ** 2, [0.2], n_paths=5000, seed=3)
    c = mc_phi(scalar_ou, lambda p: p[:, 0] ** 2, [0.2], n_paths=5000, seed=4)
    assert a == b and a.value != c.value
    d = json.loads(json.dumps(a.to_dict()))
    assert d["delta"] is None and d["seed"] == 3 and d["dt"] == TAU / 64


def test_quadrature_phi_closed_form(scalar_ou):
    est = quadrature_phi(scalar_ou, lambda p: p[:, 0] ** 2, [0.4])
    assert est.value == pytest.approx(_phi_x_squared(1.0, 0.6, 0.4), rel=1e-12)
    assert est.method == "TransitionQuadrature" and est.standard_error == 0.0
    assert est.delta <= 1e-10 * est.value


def test_quadrature_phi_rejects_cir(fig4_cir):
    with pytest.raises(DomainError):
        quadrature_phi(fig4_cir, lambda p: p[:, 0], [30.0])


def test_mc_statistical_errors_are_normal(scalar_ou):
    x = 0.3
    exact = _phi_x_squared(1.0, 0.6, x)
    z = []
    for seed in range(50):
        est = mc_phi(scalar_ou, lambda p: p[:, 0] ** 2, [x], n_paths=4000, dt=TAU / 16, seed=seed)
        z.append((est.value - exact) / est.standard_error)
    z = np.array(z)
    # trapezoid bias is below 1e-3 of one standard error at this dt
    assert stats.kstest(z, "norm").pvalue > 0.01
    assert stats.shapiro(z).pvalue > 0.01
    assert abs(z.mean()) < 4 / math.sqrt(50)


@pytest.mark.slow
def test_mc_matches_recovered_bergomi(scalar_model):
    sol = recover_bergomi_scalar(scalar_model, 20)
    est = mc_phi(scalar_model.factor, sol, [0.0])
    assert est.within(0.04)
    assert est.standard_error < 1e-4


@pytest.mark.slow
def test_mc_matches_recovered_three_halves(fig4_model):
    sol = recover_three_halves(fig4_model, 100)
    est = mc_phi(fig4_model.factor, sol, [30.0])
    assert est.within(1.0 / 30.0)


@pytest.mark.slow
@pytest.mark.parametrize("which", ["scalar", "multi", "three_halves", "dn"])
def test_dt_halving(which, scalar_model, fig2_model, fig4_model, dn_model):
    from vixinverse.inverse import recover_double_nelson

    case = {
        "scalar": (scalar_model.factor, recover_bergomi_scalar(scalar_model, 20), [0.3]),
        "multi": (fig2_model.factor, recover_bergomi_multi(fig2_model, 6), [0.3, 0.1]),
        "three_halves": (fig4_model.factor, recover_three_halves(fig4_model, 60), [30.0]),
        "dn": (dn_model.factor, recover_double_nelson(dn_model), [0.25, 0.2]),
    }[which]
    fac, sol, x = case
    a = mc_phi(fac, sol, x, n_paths=50_000, seed=1)
    b = mc_phi(fac, sol, x, dt=TAU / 128, n_paths=50_000, seed=1)
    se = math.hypot(a.standard_error, b.standard_error)
    assert abs(a.value - b.value) < 2 * se


def test_semigroup_n0(scalar_ou, fig4_cir):
    for fac in (scalar_ou, fig4_cir):
        basis, _ = factor_basis(fac)
        idx = 0
        est, analytic = semigroup_check(fac, basis, idx, [1.0], 0.5, n_paths=2000)
        assert analytic == 1.0
        assert est.value == pytest.approx(1.0, abs=1e-14)


def test_semigroup_hermite_n2(scalar_ou):
    basis, _ = factor_basis(scalar_ou)
    est, analytic = semigroup_check(scalar_ou, basis, 2, [1.0], 0.5, n_paths=200_000, seed=2)
    assert analytic == pytest.approx(0.0, abs=1e-15)
    assert est.within(analytic)


def test_semigroup_laguerre_n1(fig4_cir):
    basis, _ = factor_basis(fig4_cir)
    assert basis.alpha == pytest.approx(4.0)
    est, analytic = semigroup_check(fig4_cir, basis, 1, [2.0], 0.25, n_paths=200_000, seed=3)
    assert analytic == pytest.approx(3 * math.exp(-1.0), rel=1e-12)
    assert analytic == pytest.approx(1.1036, abs=1e-4)
    assert est.within(analytic)


def test_semigroup_dual_family(fig2_factor):
    basis, _ = factor_basis(fig2_factor)
    est, analytic = semigroup_check(fig2_factor, basis, (1, 1), [0.4, -0.2], 0.1, n_paths=200_000, seed=4)
    assert est.within(analytic)


def test_semigroup_basis_mismatch(scalar_ou, fig4_cir):
    with pytest.raises(DomainError):
        semigroup_check(scalar_ou, GenLaguerre(4.0, 4.0), 1, [1.0], 0.1)
    with pytest.raises(DomainError):
        semigroup_check(scalar_ou, Hermite(rate=2.0), 1, [1.0], 0.1)
    with pytest.raises(DomainError):
        semigroup_check(fig4_cir, GenLaguerre(3.0, 4.0), 1, [1.0], 0.1)


def test_estimate_within():
    e = OracleEstimate(1.0, 0.1, 10, 0.01, 0, "MonteCarlo")
    assert e.within(1.39) and not e.within(1.41)
