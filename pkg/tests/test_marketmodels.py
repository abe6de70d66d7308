import math

import numpy as np
import pytest
from scipy.linalg import expm

from vixinverse.errors import DomainError, InvariantError, NotAvailable
from vixinverse.factors import CIR, DoubleNelson, simulate
from vixinverse.marketmodels import (
    BergomiScalar,
    DoubleNelsonMarket,
    ThreeHalves,
    futures_curve,
    model_from_dict,
)


def test_vix_values(scalar_model, fig4_model):
    assert scalar_model.vix(0.0)[0] == pytest.approx(0.2, abs=1e-15)
    assert fig4_model.vix(25.0)[0] == pytest.approx(0.2, abs=1e-15)


def test_cmf_at_zero_equals_vix(scalar_model, fig2_model, fig4_model, dn_model):
    cases = [
        (scalar_model, np.linspace(-1, 1, 11)),
        (fig2_model, np.random.default_rng(0).normal(size=(11, 2)) * 0.3),
        (fig4_model, np.linspace(5, 60, 11)),
        (dn_model, np.random.default_rng(1).uniform(0.05, 0.5, size=(11, 2))),
    ]
    for m, x in cases:
        assert np.array_equal(m.cmf(x, 0.0), m.vix(x))


def test_bergomi_scalar_roll_yield_and_vol(scalar_model):
    assert scalar_model.roll_yield(0.0, 0.0)[0] == pytest.approx(0.5**2 * 0.6**2 / 2, abs=1e-15)
    assert scalar_model.roll_yield(0.0, 0.0)[0] == pytest.approx(0.045, abs=1e-15)
    x, th = 0.3, 0.7
    expected = 0.045 * math.exp(-2 * th) - 0.5 * 1.0 * x * math.exp(-th)
    assert scalar_model.roll_yield(x, th)[0] == pytest.approx(expected, rel=1e-13)
    assert scalar_model.cmf_vol(x, th)[0, 0] == pytest.approx(0.5 * 0.6 * math.exp(-th), rel=1e-13)
    assert abs(scalar_model.roll_yield(x, 60.0)[0]) < 1e-20
    assert abs(scalar_model.cmf_vol(x, 60.0)[0, 0]) < 1e-20


def test_roll_yield_is_log_maturity_derivative(scalar_model, fig2_model, dn_model):
    h = 1e-5
    for m, x in ((scalar_model, np.array([[0.2]])), (fig2_model, np.array([[0.2, -0.1]])), (dn_model, np.array([[0.3, 0.1]]))):
        for th in (0.1, 0.5, 2.0):
            fd = (np.log(m.cmf(x, th + h)) - np.log(m.cmf(x, th - h))) / (2 * h)
            assert m.roll_yield(x, th)[0] == pytest.approx(fd[0], rel=1e-7, abs=1e-10)


def test_roll_yield_grad_matches_fd(fig2_model, dn_model, fig4_model):
    h = 1e-6
    for m, x, th in ((fig2_model, np.array([0.2, -0.1]), 0.4), (dn_model, np.array([0.3, 0.1]), 0.4), (fig4_model, np.array([20.0]), 0.0)):
        g = m.roll_yield_grad(x[None, :], th)[0]
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h * max(1.0, abs(x[i]))
            fd = (m.roll_yield(x + e, th) - m.roll_yield(x - e, th))[0] / (2 * e[i])
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_variance_corrected_level(fig2_model):
    Sigma = fig2_model.covariance
    g = np.array([0.5, 0.5])
    th = 0.3
    gt = expm(-fig2_model.factor.K * th).T @ g
    expected = 0.2 * math.exp(0.5 * g @ Sigma @ g - 0.5 * gt @ Sigma @ gt)
    assert fig2_model.level(th) == pytest.approx(expected, rel=1e-13)
    assert fig2_model.level(0.0) == pytest.approx(0.2, rel=1e-15)


def test_flat_curve_without_variance_correction(scalar_ou):
    m = BergomiScalar(0.5, scalar_ou, 0.2, variance_corrected=False)
    curve = futures_curve(m, 0.0, [0.0, 0.5, 1.0, 5.0])
    assert np.allclose(curve.prices, 0.2, rtol=1e-15)


def test_double_nelson_curve(dn_model):
    x = [0.25, 0.2]
    curve = futures_curve(dn_model, x, [0.0, 1.0, 50.0])
    assert curve.prices[0] == pytest.approx(0.25, abs=1e-15)
    assert curve.prices[-1] == pytest.approx(0.2, abs=1e-15)
    assert dn_model.roll_yield([0.2, 0.2], 0.0)[0] == pytest.approx(0.0, abs=1e-15)
    assert dn_model.roll_yield([0.2, 0.3], 0.0)[0] == pytest.approx(1.0 * (0.3 / 0.2 - 1), rel=1e-14)
    assert dn_model.cmf_vol([0.2, 0.3], 0.0)[0] == pytest.approx([1.0, 0.0], abs=1e-15)


def test_double_nelson_equal_rates_limit():
    a = DoubleNelsonMarket(DoubleNelson(1.5, 1.5, 0.2, 0.5, 0.5, 0.1))
    b = DoubleNelsonMarket(DoubleNelson(1.5, 1.5 + 1e-9, 0.2, 0.5, 0.5, 0.1))
    th = 0.8
    _, D, _ = a._terms(th)
    assert D == pytest.approx(1.5 * th * math.exp(-1.5 * th), rel=1e-14)
    assert a.cmf([0.3, 0.1], th)[0] == pytest.approx(b.cmf([0.3, 0.1], th)[0], rel=1e-8)


def test_double_nelson_affine_in_state(dn_model):
    rng = np.random.default_rng(3)
    for th in (0.0, 0.3, 2.0):
        a1, a2, a0 = dn_model.coefficients(th)
        x = rng.uniform(0.05, 1.0, size=(20, 2))
        assert np.allclose(dn_model.cmf(x, th), a1 * x[:, 0] + a2 * x[:, 1] + a0, rtol=1e-14)


def test_three_halves_zero_horizon_only(fig4_model):
    with pytest.raises(NotAvailable):
        fig4_model.cmf(20.0, 0.5)
    with pytest.raises(DomainError):
        fig4_model.vix(-1.0)
    with pytest.raises(InvariantError):
        ThreeHalves(CIR(1.0, 1.0, 1.0))  # alpha = 1


def test_negative_maturity_rejected(scalar_model):
    with pytest.raises(DomainError):
        scalar_model.cmf(0.0, -0.1)


def test_model_round_trip(scalar_model, fig2_model, fig4_model, dn_model):
    for m in (scalar_model, fig2_model, fig4_model, dn_model):
        assert model_from_dict(m.to_dict()) == m


def test_curve_csv(tmp_path, fig2_model):
    curve = futures_curve(fig2_model, [0.1, -0.1], [0.0, 0.5, 1.0])
    curve.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "theta,price,roll_yield,nu_1,nu_2"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == curve.prices[0]


@pytest.mark.slow
@pytest.mark.parametrize("which", ["scalar", "multi", "dn"])
def test_martingale_property(which, scalar_model, fig2_model, dn_model):
    m, x0 = {"scalar": (scalar_model, [0.3]), "multi": (fig2_model, [0.3, -0.2]), "dn": (dn_model, [0.25, 0.15])}[which]
    th = 0.5
    dt = th if which != "dn" else th / 200
    ens = simulate(m.factor, x0, th, dt, n_paths=100_000, seed=11)
    vals = m.vix(ens.states[:, -1, :])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    bias = 0.0 if which != "dn" else 2e-4  # log-Euler discretization allowance
    assert abs(vals.mean() - m.cmf(x0, th)[0]) < 4 * se + bias
