"""
Consistency between a factor model and a futures-curve (market) model.

A CMF h_theta(X_t) is consistent with the factor dynamics when

    L h_theta = f_theta h_theta          (drift side)
    sigma' grad h_theta = nu_theta h_theta  (diffusion side)

hold pointwise. Also here: the scalar constant-nu construction, a Monte Carlo probe
for curve volatilities that cannot be driven by a Markov factor, and forward-rate
(HJM) quantities built from roll-yield functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, quad_vec

from .errors import DomainError
from .factors import ScalarOU, as_points, generator

FD_REL_STEP = 1e-5


# --------------------------------------------------------------------------- consistency residuals


@dataclass
class ConsistencyReport:
    states: np.ndarray
    thetas: np.ndarray
    drift_residual: np.ndarray  # (n_theta, n_states)
    diffusion_residual: np.ndarray
    scale: float
    tolerance: float

    @property
    def max_drift(self) -> float:
        return float(np.max(self.drift_residual))

    @property
    def max_diffusion(self) -> float:
        return float(np.max(self.diffusion_residual))

    @property
    def rms_drift(self) -> float:
        return float(np.sqrt(np.mean(self.drift_residual**2)))

    @property
    def rms_diffusion(self) -> float:
        return float(np.sqrt(np.mean(self.diffusion_residual**2)))

    @property
    def passed(self) -> bool:
        return max(self.max_drift, self.max_diffusion) <= self.tolerance * self.scale

    def summary(self) -> dict:
        return {
            "max_drift": self.max_drift,
            "max_diffusion": self.max_diffusion,
            "rms_drift": self.rms_drift,
            "rms_diffusion": self.rms_diffusion,
            "scale": self.scale,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }

    def rows(self):
        """(theta, x..., drift residual, diffusion residual) per grid point."""
        for i, th in enumerate(self.thetas):
            for j, x in enumerate(self.states):
                yield (float(th), *map(float, x), float(self.drift_residual[i, j]), float(self.diffusion_residual[i, j]))


def fd_derivatives(fun: Callable, x: np.ndarray, step: Optional[float] = None):
    """Value, gradient and Hessian of a scalar field by central differences, one Richardson pass."""
    pts = np.asarray(x, dtype=float)
    n, d = pts.shape
    if step is None:
        step = FD_REL_STEP * max(1.0, float(np.max(np.abs(pts))))

    def grad_hess(h):
        g = np.empty((n, d))
        H = np.empty((n, d, d))
        f0 = fun(pts)
        for i in range(d):
            e_i = np.zeros(d)
            e_i[i] = h
            fp, fm = fun(pts + e_i), fun(pts - e_i)
            g[:, i] = (fp - fm) / (2 * h)
            H[:, i, i] = (fp - 2 * f0 + fm) / h**2
            for j in range(i):
                e_j = np.zeros(d)
                e_j[j] = h
                mixed = (fun(pts + e_i + e_j) - fun(pts + e_i - e_j) - fun(pts - e_i + e_j) + fun(pts - e_i - e_j)) / (4 * h * h)
                H[:, i, j] = H[:, j, i] = mixed
        return f0, g, H

    f0, g1, H1 = grad_hess(step)
    _, g2, H2 = grad_hess(step / 2)
    return f0, (4 * g2 - g1) / 3, (4 * H2 - H1) / 3


def _cmf_derivatives(model, x, theta):
    if hasattr(model, "cmf_derivatives"):
        return model.cmf_derivatives(x, theta)
    return fd_derivatives(lambda p: model.cmf(p, theta), x)


def check_consistency(model, grid, thetas, tol: float = 1e-9, factor=None) -> ConsistencyReport:
    """Residuals |L h_theta - f_theta h_theta| and |sigma' grad h_theta - nu_theta h_theta| on a grid."""
    factor = factor if factor is not None else model.factor
    pts = as_points(grid, factor.dim)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    drift = np.empty((len(thetas), len(pts)))
    diff = np.empty_like(drift)
    scale = 0.0
    for i, th in enumerate(thetas):
        h, g, H = _cmf_derivatives(model, pts, th)
        Lh = generator(factor, pts, h, g, H)
        f = model.roll_yield(pts, th)
        nu = model.cmf_vol(pts, th)
        sig_grad = np.einsum("nik,ni->nk", factor.diffusion(pts), g)
        drift[i] = np.abs(Lh - f * h)
        diff[i] = np.linalg.norm(sig_grad - nu * h[:, None], axis=1)
        scale = max(scale, float(np.max(np.abs(h))))
    return ConsistencyReport(pts, thetas, drift, diff, scale, tol)


# --------------------------------------------------------------------------- scalar constant-nu construction


def scalar_constant_nu(mu: Callable, sigma: Callable, nu: Callable, x0: float, h0, sigma_prime: Optional[Callable] = None):
    """CMF and roll-yield functions for a scalar factor whose curve volatility nu_theta is state-free.

    h_theta(x) = h_theta(x0) exp(nu_theta int_{x0}^x dy / sigma(y)) and
    f_theta(x) = nu_theta (mu(x) / sigma(x) + nu_theta / 2 - sigma'(x) / 2).
    ``h0`` is a number or a function of theta giving h_theta(x0).
    """
    level = h0 if callable(h0) else (lambda theta: float(h0))

    def dsigma(x):
        if sigma_prime is not None:
            return sigma_prime(x)
        step = FD_REL_STEP * max(1.0, abs(x))
        return (sigma(x + step) - sigma(x - step)) / (2 * step)

    def integral(x):
        if x == x0:
            return 0.0
        probe = np.linspace(min(x0, x), max(x0, x), 65)
        if np.any(np.array([sigma(p) for p in probe]) <= 0):
            raise DomainError("sigma must be strictly positive between x0 and x")
        val, _ = quad(lambda y: 1.0 / sigma(y), x0, x, epsabs=1e-13, epsrel=1e-12, limit=200)
        if not math.isfinite(val):
            raise DomainError("1/sigma is not integrable on the interval")
        return val

    def h(x, theta):
        xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        n = nu(theta)
        return level(theta) * np.exp(n * np.array([integral(float(v)) for v in xs]))

    def f(x, theta):
        xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        n = nu(theta)
        out = np.empty_like(xs)
        for i, v in enumerate(xs):
            s = sigma(v)
            if s <= 0:
                raise DomainError(f"sigma vanishes at x = {v}")
            out[i] = n * (mu(v) / s + 0.5 * n - 0.5 * dsigma(v))
        return out

    return f, h


# --------------------------------------------------------------------------- non-Markov probe


@dataclass
class ProbeResult:
    consistent: bool
    thetas: np.ndarray
    dispersion: np.ndarray
    standard_error: np.ndarray
    threshold: np.ndarray
    dispersion_half_history: np.ndarray
    history: float
    n_histories: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "verdict": "consistent" if self.consistent else "inconsistent",
            "thetas": self.thetas.tolist(),
            "residual_dispersion": self.dispersion.tolist(),
            "standard_error": self.standard_error.tolist(),
            "threshold": self.threshold.tolist(),
            "residual_dispersion_half_history": self.dispersion_half_history.tolist(),
            "history": self.history,
            "n_histories": self.n_histories,
            "seed": self.seed,
        }


def _probe_dispersion(nu, dnu, factor: ScalarOU, thetas, dW, lags, degree):
    k, s = factor.kappa, factor.sigma
    X = s * dW @ np.exp(-k * lags)
    H = lags[-1] + (lags[1] - lags[0])
    design = np.vander(X / max(np.std(X), 1e-300), degree + 1, increasing=True)
    disp = np.empty(len(thetas))
    se = np.empty(len(thetas))
    for i, th in enumerate(thetas):
        n = nu(th)
        # roll yield implied by the curve dynamics, stationary history truncated at lag H
        Y = 0.5 * (n * n - nu(th + H) ** 2) + dW @ dnu(th + lags)
        # roll yield a consistent Markov model would produce from the same state
        f = n * (-k * X / s + 0.5 * n)
        r = Y - f
        coef, *_ = np.linalg.lstsq(design, r, rcond=None)
        disp[i] = np.std(r - design @ coef)
        se[i] = np.std(r) / math.sqrt(len(r))
    return disp, se


def markovianity_probe(
    nu: Callable,
    factor: ScalarOU,
    thetas,
    dnu: Optional[Callable] = None,
    history: float = 20.0,
    n_lags: int = 2000,
    n_histories: int = 2000,
    seed: int = 0,
    degree: int = 3,
    atol: float = 1e-10,
) -> ProbeResult:
    """Decide whether roll yields implied by dF/F = nu(T - t) dW can be a function of the OU factor.

    Histories of W drive both the factor and the log-futures curve. The residual between the
    curve's roll yield and the Markov candidate is regressed on a polynomial in the factor;
    any spread left over cannot be a state function. Verdict is inconsistent when that spread
    exceeds 5 x max(Monte Carlo standard error, atol) at some theta.
    """
    if not isinstance(factor, ScalarOU):
        raise DomainError("the probe is defined for a scalar OU factor")
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if dnu is None:

        def dnu(u):
            u = np.asarray(u, dtype=float)
            step = FD_REL_STEP * np.maximum(1.0, np.abs(u))
            vals = lambda h: (np.vectorize(nu)(u + h) - np.vectorize(nu)(u - h)) / (2 * h)
            return (4 * vals(step / 2) - vals(step)) / 3

    ds = history / n_lags
    lags = np.arange(n_lags) * ds
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((n_histories, n_lags)) * math.sqrt(ds)
    disp, se = _probe_dispersion(nu, dnu, factor, thetas, dW, lags, degree)
    half = n_lags // 2
    disp_half, _ = _probe_dispersion(nu, dnu, factor, thetas, dW[:, :half], lags[:half], degree)
    threshold = 5.0 * np.maximum(se, atol)
    return ProbeResult(
        bool(np.all(disp <= threshold)), thetas, disp, se, threshold, disp_half, history, n_histories, seed
    )


# --------------------------------------------------------------------------- HJM forward rates


@dataclass
class HJMQuantities:
    t: float
    T: float
    forward: float
    beta: np.ndarray
    nu: np.ndarray
    nu_model: np.ndarray
    alpha: float

    def row(self) -> tuple:
        return (self.t, self.T, self.forward, *self.beta, *self.nu, self.alpha)


def _roll_yield_grad(model, x, theta):
    if hasattr(model, "roll_yield_grad"):
        return model.roll_yield_grad(x, theta)[0]
    _, g, _ = fd_derivatives(lambda p: model.roll_yield(p, theta), x)
    return g[0]


def hjm_quantities(model, x, t: float, T: float, factor=None, epsabs: float = 1e-13) -> HJMQuantities:
    """Forward rate f(t,T), its diffusion beta, the reconstructed curve volatility nu(t,T) and drift alpha.

    nu(t,T) = nu(t,t) + (int_t^T grad f_{u-t} du)' sigma and alpha = -nu(t,T) . beta(t,T).
    """
    if T < t:
        raise DomainError(f"maturity T = {T} precedes t = {t}")
    factor = factor if factor is not None else model.factor
    pts = as_points(x, factor.dim)[:1]
    theta = T - t
    sig = factor.diffusion(pts)[0]
    grad = _roll_yield_grad(model, pts, theta)
    beta = grad @ sig
    if theta > 0:
        integral, _ = quad_vec(lambda u: _roll_yield_grad(model, pts, u), 0.0, theta, epsabs=epsabs, epsrel=1e-12)
    else:
        integral = np.zeros_like(grad)
    nu = model.cmf_vol(pts, 0.0)[0] + integral @ sig
    forward = float(model.roll_yield(pts, theta)[0])
    return HJMQuantities(float(t), float(T), forward, beta, nu, model.cmf_vol(pts, theta)[0], float(-nu @ beta))


def hjm_grid(model, x, ts, Ts, factor=None) -> list[HJMQuantities]:
    return [hjm_quantities(model, x, t, T, factor) for t in ts for T in Ts if T >= t]
