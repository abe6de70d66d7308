"""
VIX futures market models bound to a factor process.

Each model exposes, at horizon theta >= 0 and factor state x:

    cmf(x, theta)            h_theta(x), the constant-maturity future (theta = 0 is the VIX)
    roll_yield(x, theta)     f_theta(x), the drift of dF/F for the constant-maturity future
    cmf_vol(x, theta)        nu_theta(x), a row of d loadings on independent Brownian motions
    cmf_derivatives          (h, grad h, Hessian h), used by the consistency checks
    roll_yield_grad          grad_x f_theta, used by the forward-rate (HJM) quantities

States are point arrays of shape (n, d); a 1-D input is one point for d > 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np
from scipy.linalg import expm
from scipy.special import exprel

from .errors import DomainError, InvariantError, NotAvailable
from .factors import (
    CIR,
    DoubleNelson,
    MultiOU,
    ScalarOU,
    as_points,
    factor_from_dict,
    stationary_covariance,
)


def _theta(theta: float) -> float:
    theta = float(theta)
    if theta < 0:
        raise DomainError(f"maturity horizon must be non-negative, got {theta}")
    return theta


class _Bergomi:
    """Shared exponential-affine machinery: h_theta(x) = c(theta) exp(g(theta)' x)."""

    factor: Union[ScalarOU, MultiOU]
    h0: float
    variance_corrected: bool

    def _matrices(self):
        raise NotImplementedError

    def _g(self, theta):
        K, _, _, gamma = self._matrices()
        M = expm(-K * theta)
        return M, M.T @ gamma

    def level(self, theta: float) -> float:
        """h_theta(0); with the variance correction E[h(X_theta) | X_0 = x] = h_theta(x) exactly."""
        theta = _theta(theta)
        if not self.variance_corrected:
            return self.h0
        _, _, Sigma, gamma = self._matrices()
        _, g = self._g(theta)
        return self.h0 * math.exp(0.5 * gamma @ Sigma @ gamma - 0.5 * g @ Sigma @ g)

    def vix(self, x):
        return self.cmf(x, 0.0)

    def cmf(self, x, theta):
        pts = as_points(x, self.factor.dim)
        _, g = self._g(_theta(theta))
        return self.level(theta) * np.exp(pts @ g)

    def cmf_derivatives(self, x, theta):
        h = self.cmf(x, theta)
        _, g = self._g(_theta(theta))
        return h, h[:, None] * g, h[:, None, None] * np.outer(g, g)

    def roll_yield(self, x, theta):
        pts = as_points(x, self.factor.dim)
        K, _, Sigma, gamma = self._matrices()
        M, _ = self._g(_theta(theta))
        C = M @ Sigma @ M.T
        # d/dtheta log h_theta(0); zero without the variance correction
        const = 0.5 * gamma @ K @ C @ gamma + 0.5 * gamma @ C @ K.T @ gamma if self.variance_corrected else 0.0
        return const - pts @ (gamma @ K @ M)

    def roll_yield_grad(self, x, theta):
        pts = as_points(x, self.factor.dim)
        K, _, _, gamma = self._matrices()
        M, _ = self._g(_theta(theta))
        return np.broadcast_to(-(gamma @ K @ M), pts.shape).copy()

    def cmf_vol(self, x, theta):
        pts = as_points(x, self.factor.dim)
        _, S, _, _ = self._matrices()
        _, g = self._g(_theta(theta))
        return np.broadcast_to(g @ S, pts.shape).copy()

    def h2_tilt(self) -> np.ndarray:
        """Exponential tilt t with h^2(x) = h0^2 exp(t'x)."""
        return 2.0 * self._matrices()[3]


@dataclass(frozen=True)
class BergomiScalar(_Bergomi):
    gamma: float
    factor: ScalarOU
    h0: float
    variance_corrected: bool = True

    family: ClassVar[str] = "bergomi_scalar"

    def __post_init__(self):
        if not self.h0 > 0:
            raise InvariantError(f"h0 must be positive, got {self.h0}")

    def _matrices(self):
        k, s = self.factor.kappa, self.factor.sigma
        return (
            np.array([[k]]),
            np.array([[s]]),
            np.array([[self.factor.stationary_variance]]),
            np.array([float(self.gamma)]),
        )

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "gamma": self.gamma,
            "h0": self.h0,
            "variance_corrected": self.variance_corrected,
            "factor": self.factor.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class BergomiMulti(_Bergomi):
    gamma: np.ndarray
    factor: MultiOU
    h0: float
    variance_corrected: bool = True

    family: ClassVar[str] = "bergomi_multi"

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float).reshape(-1)
        if gamma.size != self.factor.dim:
            raise InvariantError(f"gamma has {gamma.size} entries, factor dimension is {self.factor.dim}")
        if not self.h0 > 0:
            raise InvariantError(f"h0 must be positive, got {self.h0}")
        gamma.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "_sigma", stationary_covariance(self.factor))

    @property
    def covariance(self) -> np.ndarray:
        return self._sigma

    def _matrices(self):
        return self.factor.K, self.factor.S, self._sigma, self.gamma

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "gamma": self.gamma.tolist(),
            "h0": self.h0,
            "variance_corrected": self.variance_corrected,
            "factor": self.factor.to_dict(),
        }

    def __eq__(self, other):
        return (
            isinstance(other, BergomiMulti)
            and np.array_equal(self.gamma, other.gamma)
            and self.factor == other.factor
            and self.h0 == other.h0
            and self.variance_corrected == other.variance_corrected
        )


@dataclass(frozen=True)
class ThreeHalves:
    """VIX^2 = 1/X with X a CIR process; only zero-horizon quantities are provided."""

    factor: CIR

    family: ClassVar[str] = "three_halves"

    def __post_init__(self):
        if not self.factor.alpha > 1:
            raise InvariantError(
                f"3/2 model needs alpha = 2 kappa xbar / sigma^2 - 1 > 1, got {self.factor.alpha:.6g}"
            )

    def _x(self, x, theta):
        if _theta(theta) != 0.0:
            raise NotAvailable("the 3/2 model provides zero-horizon quantities only")
        pts = as_points(x, 1)
        if np.any(pts <= 0):
            raise DomainError("3/2 model state must be positive")
        return pts[:, 0]

    def vix(self, x):
        return self.cmf(x, 0.0)

    def cmf(self, x, theta):
        return 1.0 / np.sqrt(self._x(x, theta))

    def cmf_derivatives(self, x, theta):
        xs = self._x(x, theta)
        h = xs**-0.5
        return h, (-0.5 * xs**-1.5)[:, None], (0.75 * xs**-2.5)[:, None, None]

    def roll_yield(self, x, theta):
        # drift of d sqrt(V) / sqrt(V) from the 3/2 SDE of V = 1/X
        xs = self._x(x, theta)
        k, xb, s = self.factor.kappa, self.factor.xbar, self.factor.sigma
        return 0.5 * k - (0.5 * k * xb - 0.375 * s * s) / xs

    def roll_yield_grad(self, x, theta):
        xs = self._x(x, theta)
        k, xb, s = self.factor.kappa, self.factor.xbar, self.factor.sigma
        return ((0.5 * k * xb - 0.375 * s * s) / xs**2)[:, None]

    def cmf_vol(self, x, theta):
        xs = self._x(x, theta)
        return (-0.5 * self.factor.sigma / np.sqrt(xs))[:, None]

    def to_dict(self) -> dict:
        return {"family": self.family, "factor": self.factor.to_dict()}


@dataclass(frozen=True)
class DoubleNelsonMarket:
    """VIX = X^1 with the double Nelson factor; futures are affine in the state."""

    factor: DoubleNelson

    family: ClassVar[str] = "double_nelson"

    def _terms(self, theta):
        k1, k2 = self.factor.kappa1, self.factor.kappa2
        th = _theta(theta)
        e1 = math.exp(-k1 * th)
        # kappa1 (e^{-k2 t} - e^{-k1 t}) / (k1 - k2) and its t-derivative, finite at k1 = k2
        ex = float(exprel(-(k1 - k2) * th))
        D = k1 * th * math.exp(-k2 * th) * ex
        dD = k1 * math.exp(-k2 * th) * (1.0 - k1 * th * ex)
        return e1, D, dD

    def _pts(self, x):
        pts = as_points(x, 2)
        if np.any(pts <= 0):
            raise DomainError("double Nelson state must be positive")
        return pts

    def coefficients(self, theta):
        """F_{t,t+theta} = a1 x1 + a2 x2 + a0."""
        e1, D, _ = self._terms(theta)
        xb = self.factor.xbar
        return e1, D, xb * (1.0 - e1) - xb * D

    def vix(self, x):
        return self._pts(x)[:, 0].copy()

    def cmf(self, x, theta):
        pts = self._pts(x)
        a1, a2, a0 = self.coefficients(theta)
        return a1 * pts[:, 0] + a2 * pts[:, 1] + a0

    def _dtheta(self, pts, theta):
        e1, _, dD = self._terms(theta)
        k1, xb = self.factor.kappa1, self.factor.xbar
        return -k1 * e1 * (pts[:, 0] - xb) + dD * (pts[:, 1] - xb), np.array([-k1 * e1, dD])

    def cmf_derivatives(self, x, theta):
        pts = self._pts(x)
        a1, a2, _ = self.coefficients(theta)
        h = self.cmf(pts, theta)
        n = pts.shape[0]
        return h, np.tile([a1, a2], (n, 1)), np.zeros((n, 2, 2))

    def roll_yield(self, x, theta):
        pts = self._pts(x)
        dF, _ = self._dtheta(pts, theta)
        return dF / self.cmf(pts, theta)

    def roll_yield_grad(self, x, theta):
        pts = self._pts(x)
        F = self.cmf(pts, theta)
        dF, grad_dF = self._dtheta(pts, theta)
        a1, a2, _ = self.coefficients(theta)
        return grad_dF[None, :] / F[:, None] - (dF / F**2)[:, None] * np.array([a1, a2])[None, :]

    def cmf_vol(self, x, theta):
        pts = self._pts(x)
        h, grad, _ = self.cmf_derivatives(pts, theta)
        sig = self.factor.diffusion(pts)
        return np.einsum("nik,ni->nk", sig, grad) / h[:, None]

    def to_dict(self) -> dict:
        return {"family": self.family, "factor": self.factor.to_dict()}


MarketModelSpec = Union[BergomiScalar, BergomiMulti, ThreeHalves, DoubleNelsonMarket]


def model_from_dict(block: dict) -> MarketModelSpec:
    block = dict(block)
    family = block.pop("family")
    factor = factor_from_dict(block.pop("factor"))
    if family == "bergomi_scalar":
        return BergomiScalar(factor=factor, **block)
    if family == "bergomi_multi":
        return BergomiMulti(factor=factor, **block)
    if family == "three_halves":
        return ThreeHalves(factor)
    if family == "double_nelson":
        return DoubleNelsonMarket(factor)
    raise ValueError(f"unknown market model family {family!r}")


# --------------------------------------------------------------------------- futures curves


@dataclass(eq=False)
class FuturesCurve:
    state: np.ndarray
    maturities: np.ndarray
    prices: np.ndarray
    roll_yields: np.ndarray
    vols: np.ndarray  # (n_maturities, d)

    def to_csv(self, path) -> None:
        d = self.vols.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "price", "roll_yield"] + [f"nu_{i + 1}" for i in range(d)])
            for th, p, f, row in zip(self.maturities, self.prices, self.roll_yields, self.vols):
                w.writerow([f"{th:.17g}", f"{p:.17g}", f"{f:.17g}"] + [f"{v:.17g}" for v in row])


def futures_curve(model: MarketModelSpec, x, maturities) -> FuturesCurve:
    """Evaluate price, roll yield and volatility row for each maturity at one state."""
    mats = np.asarray(maturities, dtype=float).reshape(-1)
    if np.any(mats < 0) or np.any(np.diff(mats) < 0):
        raise DomainError("maturities must be non-negative and sorted")
    pt = as_points(x, model.factor.dim)[:1]
    prices = np.array([model.cmf(pt, th)[0] for th in mats])
    rolls = np.array([model.roll_yield(pt, th)[0] for th in mats])
    vols = np.array([model.cmf_vol(pt, th)[0] for th in mats])
    return FuturesCurve(pt[0], mats, prices, rolls, vols)
