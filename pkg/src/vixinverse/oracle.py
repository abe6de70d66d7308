"""
Independent estimates of (Phi v^2)(x) = E[(1/tau) int_0^tau v^2(X_u) du | X_0 = x]
and of semigroup actions E[psi_n(Z_t) | Z_0 = z], used to validate recoveries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm

from .eigenbasis import GenLaguerre, Hermite, MultiHermite2D, basis_dual_eval, basis_eval
from .errors import ConvergenceError, DomainError
from .factors import MultiOU, ScalarOU, _check_x0, block_rngs, make_stepper, time_grid
from .inverse import TAU, factor_basis

DEFAULT_PATHS = 200_000
DEFAULT_STEPS = 64


@dataclass
class OracleEstimate:
    value: float
    standard_error: float
    n_paths: int
    dt: float
    seed: Optional[int]
    method: str
    delta: float = float("nan")

    def within(self, target: float, n_se: float = 4.0) -> bool:
        return abs(self.value - target) <= n_se * self.standard_error

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if math.isnan(d["delta"]):
            d["delta"] = None
        return d


def path_averages(
    factor, v2: Callable, x, tau: float = TAU, n_paths: int = DEFAULT_PATHS, dt: Optional[float] = None, seed: int = 0
) -> np.ndarray:
    """Per-path trapezoidal time averages of v^2 over [0, tau], streamed block by block."""
    x0 = _check_x0(factor, x)
    dt = tau / DEFAULT_STEPS if dt is None else dt
    steps = np.diff(time_grid(tau, dt))
    step = make_stepper(factor)
    out = np.empty(n_paths)
    for sl, rng in block_rngs(seed, n_paths):
        xs = np.tile(x0, (sl.stop - sl.start, 1))
        prev = np.asarray(v2(xs), dtype=float)
        acc = np.zeros_like(prev)
        for h in steps:
            xs = step(xs, h, rng)
            cur = np.asarray(v2(xs), dtype=float)
            acc += 0.5 * h * (prev + cur)
            prev = cur
        out[sl] = acc / tau
    return out


def mc_phi(
    factor, v2: Callable, x, tau: float = TAU, n_paths: int = DEFAULT_PATHS, dt: Optional[float] = None, seed: int = 0
) -> OracleEstimate:
    """Monte Carlo estimate of (Phi v^2)(x) with its standard error."""
    dt = tau / DEFAULT_STEPS if dt is None else dt
    vals = path_averages(factor, v2, x, tau, n_paths, dt, seed)
    se = float(np.std(vals, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else float("inf")
    return OracleEstimate(float(np.mean(vals)), se, n_paths, dt, int(seed), "MonteCarlo")


def _gaussian_transition(factor, x, u):
    if isinstance(factor, ScalarOU):
        mean = x * math.exp(-factor.kappa * u)
        var = factor.sigma**2 * -math.expm1(-2 * factor.kappa * u) / (2 * factor.kappa)
        return mean, np.array([[var]])
    return expm(-factor.K * u) @ x, factor.gramian(u)


def quadrature_phi(
    factor, v2: Callable, x, tau: float = TAU, nodes: int = 16, max_nodes: int = 256, tol: float = 1e-10
) -> OracleEstimate:
    """(Phi v^2)(x) for Gaussian factors: Gauss-Legendre in time, Gauss-Hermite over each transition law."""
    if not isinstance(factor, (ScalarOU, MultiOU)):
        raise DomainError("transition quadrature is available for Gaussian factors only")
    x0 = _check_x0(factor, x)
    d = factor.dim

    def compute(n):
        tu, tw = leggauss(n)
        us, uw = 0.5 * tau * (tu + 1), 0.5 * tw
        y1, w1 = hermegauss(n)
        w1 = w1 / math.sqrt(2 * math.pi)
        mesh = np.meshgrid(*([y1] * d), indexing="ij")
        y = np.column_stack([m.ravel() for m in mesh])
        w = np.prod(np.meshgrid(*([w1] * d), indexing="ij"), axis=0).ravel()
        total = 0.0
        for u, wu in zip(us, uw):
            mean, cov = _gaussian_transition(factor, x0, u)
            ev, V = np.linalg.eigh(cov)
            root = V * np.sqrt(np.clip(ev, 0, None))
            pts = mean[None, :] + y @ root.T
            total += wu * float(w @ np.asarray(v2(pts), dtype=float))
        return total

    n = nodes
    prev = compute(n)
    while 2 * n <= max_nodes:
        n *= 2
        cur = compute(n)
        delta = abs(cur - prev)
        if delta <= tol * max(abs(cur), 1e-300):
            return OracleEstimate(cur, 0.0, 0, 0.0, None, "TransitionQuadrature", delta)
        prev = cur
    raise ConvergenceError(f"transition quadrature did not converge within {max_nodes} nodes")


def _basis_matches(factor, basis) -> bool:
    expected, _ = factor_basis(factor)
    if type(expected) is not type(basis):
        return False
    if isinstance(basis, GenLaguerre):
        return math.isclose(basis.alpha, expected.alpha, rel_tol=1e-12) and math.isclose(basis.rate, expected.rate)
    if isinstance(basis, Hermite):
        return math.isclose(basis.rate, expected.rate)
    return np.allclose(basis.cov, expected.cov) and np.allclose(basis.rates, expected.rates)


def semigroup_check(
    factor, basis, index, z, t: float, n_paths: int = DEFAULT_PATHS, seed: int = 0
) -> tuple[OracleEstimate, float]:
    """Monte Carlo E[psi_n(Z_t) | Z_0 = z] next to the analytic e^{-alpha_n t} psi_n(z).

    ``z`` is in the basis coordinates; for the 2-D Gaussian basis, the eigenfunction is
    the dual family evaluated at the raw state.
    """
    if not _basis_matches(factor, basis):
        raise DomainError(f"basis {basis!r} does not diagonalize the generator of {factor!r}")
    _, A = factor_basis(factor)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    x0 = np.linalg.solve(A, z)
    if isinstance(basis, MultiHermite2D):
        psi = lambda pts: basis_dual_eval(basis, index, pts)
    else:
        psi = lambda pts: basis_eval(basis, index, (pts @ A.T)[:, 0])
    analytic = math.exp(-basis.eigen_rate(index) * t) * float(psi(x0[None, :])[0])
    step = make_stepper(factor)
    vals = np.empty(n_paths)
    for sl, rng in block_rngs(seed, n_paths):
        xs = step(np.tile(x0, (sl.stop - sl.start, 1)), t, rng)
        vals[sl] = psi(xs)
    se = float(np.std(vals, ddof=1) / math.sqrt(n_paths))
    return OracleEstimate(float(np.mean(vals)), se, n_paths, float(t), int(seed), "MonteCarlo"), analytic
