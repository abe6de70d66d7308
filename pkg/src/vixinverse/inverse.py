"""
Recovery of the instantaneous variance v^2 from the VIX function h by solving

    h^2(x) = E[ (1/tau) int_0^tau v^2(X_u) du | X_0 = x ] = (Phi v^2)(x).

When the factor generator has a polynomial eigenbasis, Phi is diagonal with
eigenvalues lambda_n = (1 - exp(-alpha_n tau)) / (alpha_n tau) and

    v^2 = sum_n a_n psi_n,     a_n = <h^2 psi~_n> / (lambda_n <psi_n psi~_n>).

For the 2-D Gaussian factor the expansion family is psi~ (the generator's own
eigenfunctions) and the projection uses psi; in 1-D the two coincide.

The double Nelson factor has no invariant density, but its moments close, so the
quadratic (or linear) v^2 is found by matching time-averaged moments exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.special import exprel, gammaln, roots_genlaguerre

from .eigenbasis import (
    BasisSpec,
    GenLaguerre,
    Hermite,
    MultiHermite2D,
    basis_from_dict,
    basis_table,
    norm_sq_array,
    phi_eigenvalues,
)
from .errors import ConvergenceError, DomainError, InvariantError, SingularSystemError, TruncationWarning
from .factors import (
    CIR,
    DoubleNelson,
    MultiOU,
    ScalarOU,
    _dn_system,
    as_points,
    dn_invariant_moments,
    factor_from_dict,
    stationary_covariance,
)
from .marketmodels import (
    BergomiMulti,
    BergomiScalar,
    DoubleNelsonMarket,
    MarketModelSpec,
    ThreeHalves,
)

TAU = 30.0 / 365.0
ENERGY_CUTOFF = 1e-14


@dataclass(frozen=True)
class QuadratureConfig:
    """Gauss rule settings; node count doubles until the result moves by less than ``tol``.

    ``tilt`` (Gaussian factors) samples nodes from the exponentially tilted law so that
    integrands of the form exp(tilt' x) * polynomial are integrated exactly.
    ``pole_order`` (CIR factor) moves z^pole_order from the integrand into the weight,
    which removes 1/z^m singularities at the origin.
    """

    nodes: int = 32
    max_nodes: int = 512
    tol: float = 1e-10
    tilt: Optional[Sequence[float]] = None
    pole_order: int = 0


# --------------------------------------------------------------------------- bases and quadrature


def factor_basis(factor) -> tuple[BasisSpec, np.ndarray]:
    """Eigenbasis of the factor generator and the linear map z = A x to its coordinates."""
    if isinstance(factor, ScalarOU):
        return Hermite(rate=factor.kappa), np.array([[math.sqrt(2 * factor.kappa) / factor.sigma]])
    if isinstance(factor, CIR):
        return GenLaguerre(factor.alpha, rate=factor.kappa), np.array([[factor.scale]])
    if isinstance(factor, MultiOU):
        if factor.dim != 2:
            raise NotImplementedError("multi-factor Hermite basis is implemented for d = 2 only")
        if np.count_nonzero(factor.K - np.diag(np.diag(factor.K))):
            raise NotImplementedError("multi-factor Hermite basis requires diagonal mean reversion")
        Sigma = stationary_covariance(factor)
        return MultiHermite2D(Sigma, tuple(np.diag(factor.K))), np.eye(2)
    raise DomainError(f"no eigenbasis available for factor {factor!r}")


def gauss_rule(factor, n: int, tilt=None, pole_order: int = 0):
    """Nodes x (n_pts, d) and weights w with sum w g(x) ~ int g omega for the invariant density."""
    if isinstance(factor, (ScalarOU, MultiOU)):
        d = factor.dim
        Sigma = (
            np.array([[factor.stationary_variance]])
            if isinstance(factor, ScalarOU)
            else stationary_covariance(factor)
        )
        L = np.linalg.cholesky(Sigma)
        y1, w1 = hermegauss(n)
        w1 = w1 / math.sqrt(2 * math.pi)
        grids = np.meshgrid(*([y1] * d), indexing="ij")
        y = np.column_stack([g.ravel() for g in grids])
        w = np.prod(np.meshgrid(*([w1] * d), indexing="ij"), axis=0).ravel()
        x = y @ L.T
        if tilt is not None:
            t = np.asarray(tilt, dtype=float).reshape(d)
            x = x + Sigma @ t
            w = w * np.exp(-(y @ (L.T @ t)) - 0.5 * t @ Sigma @ t)
        return x, w
    if isinstance(factor, CIR):
        a = factor.alpha
        if not a - pole_order > -1:
            raise DomainError(f"pole order {pole_order} too large for alpha = {a}")
        z, w = roots_genlaguerre(n, a - pole_order)
        w = w * np.exp(pole_order * np.log(z) - math.lgamma(a + 1))
        return (z / factor.scale)[:, None], w
    raise DomainError(f"no quadrature rule for factor {factor!r}")


def _converge(compute, cfg: QuadratureConfig, scale_of=lambda c: np.max(np.abs(c[0]))):
    n = cfg.nodes
    prev = compute(n)
    while True:
        if 2 * n > cfg.max_nodes:
            raise ConvergenceError(f"quadrature did not converge within {cfg.max_nodes} nodes")
        n *= 2
        cur = compute(n)
        delta = np.max(np.abs(np.asarray(cur[0]) - np.asarray(prev[0])))
        if delta <= cfg.tol * max(scale_of(cur), 1e-300):
            return cur, n
        prev = cur


# --------------------------------------------------------------------------- solution types


@dataclass(eq=False)
class EigenSolution:
    """Truncated eigenseries v^2(x) = sum_n a_n psi_n(A x)."""

    basis: BasisSpec
    scale: np.ndarray
    indices: list
    coefficients: np.ndarray
    eigenvalues: np.ndarray
    tau: float
    tail: float = float("nan")
    family: str = "primal"
    model: str = ""

    def __post_init__(self):
        self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        if isinstance(self.basis, MultiHermite2D):
            self.indices = [tuple(int(i) for i in n) for n in self.indices]
        else:
            self.indices = [int(n) for n in self.indices]

    @property
    def truncation(self) -> int:
        return max(sum(n) if isinstance(n, tuple) else n for n in self.indices)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def _coords(self, x):
        pts = as_points(x, self.dim)
        return pts @ self.scale.T

    def _sum(self, weights, x) -> np.ndarray:
        z = self._coords(x)
        if isinstance(self.basis, MultiHermite2D):
            fam = self.basis.dual if self.family == "dual" else self.basis.primal
            if self.family == "dual":
                z = z @ self.basis.precision.T
            combined = sum(c * fam[n] for c, n in zip(weights, self.indices))
            return P.polyval2d(z[:, 0], z[:, 1], combined)
        return _series_1d(self.basis, weights, z[:, 0])

    def __call__(self, x) -> np.ndarray:
        return self._sum(self.coefficients, x)

    def forward(self, x) -> np.ndarray:
        """Phi applied to the truncated series: sum a_n lambda_n psi_n."""
        return self._sum(self.coefficients * self.eigenvalues, x)

    def last_term(self, x) -> np.ndarray:
        """Magnitude of the highest-degree shell, a proxy for the local truncation error."""
        top = self.truncation
        w = np.array(
            [c if (sum(n) if isinstance(n, tuple) else n) == top else 0.0 for c, n in zip(self.coefficients, self.indices)]
        )
        return np.abs(self._sum(w, x))

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "scale": self.scale.tolist(),
            "indices": [list(n) if isinstance(n, tuple) else n for n in self.indices],
            "coefficients": self.coefficients.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "tau": self.tau,
            "tail": None if math.isnan(self.tail) else self.tail,
            "family": self.family,
            "model": self.model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EigenSolution":
        return cls(
            basis=basis_from_dict(d["basis"]),
            scale=np.array(d["scale"]),
            indices=[tuple(n) if isinstance(n, list) else n for n in d["indices"]],
            coefficients=np.array(d["coefficients"]),
            eigenvalues=np.array(d["eigenvalues"]),
            tau=d["tau"],
            tail=float("nan") if d.get("tail") is None else d["tail"],
            family=d.get("family", "primal"),
            model=d.get("model", ""),
        )

    def __eq__(self, other):
        if not isinstance(other, EigenSolution):
            return NotImplemented
        same_tail = (math.isnan(self.tail) and math.isnan(other.tail)) or self.tail == other.tail
        return (
            self.basis == other.basis
            and np.array_equal(self.scale, other.scale)
            and self.indices == other.indices
            and np.array_equal(self.coefficients, other.coefficients)
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and self.tau == other.tau
            and same_tail
            and self.family == other.family
            and self.model == other.model
        )


def _series_1d(basis, coeffs, z) -> np.ndarray:
    """sum_n c_n psi_n(z) by running the three-term recurrence without storing the table."""
    n_max = len(coeffs) - 1
    if isinstance(basis, GenLaguerre) and np.any(z <= 0):
        raise DomainError("Laguerre series evaluated at z <= 0")
    prev = np.ones_like(z)
    total = coeffs[0] * prev
    if n_max == 0:
        return total
    if isinstance(basis, Hermite):
        cur = z.copy()
    else:
        a = basis.alpha
        cur = 1.0 + a - z
    total = total + coeffs[1] * cur
    for n in range(1, n_max):
        if isinstance(basis, Hermite):
            nxt = z * cur - n * prev
        else:
            nxt = ((2 * n + 1 + a - z) * cur - (n + a) * prev) / (n + 1)
        prev, cur = cur, nxt
        total = total + coeffs[n + 1] * cur
    return total


DN_TERMS = ("a11", "a12", "a22", "b1", "b2", "c")
# position of each v^2 coefficient's monomial in the moment state (u1, u2, u11, u12, u22, 1)
_DN_STATE = np.array([2, 3, 4, 0, 1, 5])


@dataclass(eq=False)
class PolynomialSolution:
    """v^2(x) = a11 x1^2 + a12 x1 x2 + a22 x2^2 + b1 x1 + b2 x2 + c."""

    coefficients: np.ndarray
    factor: DoubleNelson
    tau: float
    target: str
    closed_form: Optional[dict] = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)

    @property
    def dim(self) -> int:
        return 2

    def as_dict(self) -> dict:
        return dict(zip(DN_TERMS, self.coefficients.tolist()))

    def __call__(self, x) -> np.ndarray:
        return _dn_poly(self.coefficients, as_points(x, 2))

    def forward(self, x) -> np.ndarray:
        """Phi v^2, exact through the time-averaged moment matrix."""
        M = dn_phi_matrix(self.factor, self.tau)
        return _dn_poly(M @ self.coefficients, as_points(x, 2))

    def to_dict(self) -> dict:
        return {
            "coefficients": self.as_dict(),
            "factor": self.factor.to_dict(),
            "tau": self.tau,
            "target": self.target,
            "closed_form": self.closed_form,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialSolution":
        return cls(
            coefficients=np.array([d["coefficients"][k] for k in DN_TERMS]),
            factor=factor_from_dict(d["factor"]),
            tau=d["tau"],
            target=d["target"],
            closed_form=d.get("closed_form"),
        )

    def __eq__(self, other):
        if not isinstance(other, PolynomialSolution):
            return NotImplemented
        return (
            np.array_equal(self.coefficients, other.coefficients)
            and self.factor == other.factor
            and self.tau == other.tau
            and self.target == other.target
            and self.closed_form == other.closed_form
        )


def _dn_poly(p, pts) -> np.ndarray:
    x1, x2 = pts[:, 0], pts[:, 1]
    return p[0] * x1 * x1 + p[1] * x1 * x2 + p[2] * x2 * x2 + p[3] * x1 + p[4] * x2 + p[5]


def solution_from_dict(d: dict):
    return PolynomialSolution.from_dict(d) if "target" in d else EigenSolution.from_dict(d)


# --------------------------------------------------------------------------- solvability


@dataclass
class SolvabilityReport:
    value: float
    scale: float
    tolerance: float
    passed: bool
    rule: str
    n_nodes: int
    model: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def solvability_integrand(model: MarketModelSpec, x):
    """(2 f + |nu|^2) h^2 and its absolute-value companion at zero horizon."""
    f = model.roll_yield(x, 0.0)
    nu2 = np.sum(model.cmf_vol(x, 0.0) ** 2, axis=1)
    h2 = model.vix(x) ** 2
    return (2 * f + nu2) * h2, (2 * np.abs(f) + nu2) * h2


def check_solvability(
    model: MarketModelSpec, quadrature: Optional[QuadratureConfig] = None, tol: float = 1e-9
) -> SolvabilityReport:
    """Evaluate <(2 f + |nu|^2) h^2> under the invariant law and compare with its scale."""
    if isinstance(model, DoubleNelsonMarket):
        fac = model.factor
        _, _, m11, m12, _ = dn_invariant_moments(fac)
        k1, s1 = fac.kappa1, fac.sigma1
        value = 2 * k1 * (m12 - m11) + s1**2 * m11
        # |x1 (x2 - x1)| has no closed moment; bound it by x1 x2 + x1^2
        scale = 2 * k1 * (m12 + m11) + s1**2 * m11
        return SolvabilityReport(
            float(value), float(scale), tol, bool(abs(value) <= tol * scale), "invariant-moments", 0, model.family
        )

    cfg = quadrature or QuadratureConfig()
    factor = model.factor
    if isinstance(model, (BergomiScalar, BergomiMulti)):
        tilt = model.h2_tilt() if cfg.tilt is None else cfg.tilt
        pole, rule = 0, "gauss-hermite(tilted)"
    elif isinstance(model, ThreeHalves):
        tilt, pole, rule = None, max(cfg.pole_order, 2), "gauss-laguerre"
    else:
        raise DomainError(f"no solvability route for {model!r}")

    def compute(n):
        x, w = gauss_rule(factor, n, tilt=tilt, pole_order=pole)
        g, g_abs = solvability_integrand(model, x)
        return np.array([w @ g]), float(w @ g_abs)

    (val, scale), n = _converge(compute, cfg, scale_of=lambda c: c[1])
    value = float(val[0])
    return SolvabilityReport(value, scale, tol, bool(abs(value) <= tol * scale), rule, n, model.family)


# --------------------------------------------------------------------------- closed-form recovery


def _adaptive_count(energies: np.ndarray, cap: int) -> int:
    running = 0.0
    for n, e in enumerate(energies[: cap + 1]):
        running += e
        if n > 0 and e < ENERGY_CUTOFF * running:
            return n
    return cap


def recover_bergomi_scalar(
    model: BergomiScalar, N: Optional[int] = None, tau: float = TAU, theta: float = 0.0
) -> EigenSolution:
    """Hermite coefficients a_n = h0^2 e^{t^2/2} t^n / (lambda_n n!), t = sqrt(2) gamma e^{-kappa theta} sigma / sqrt(kappa)."""
    fac = model.factor
    basis, A = factor_basis(fac)
    t = math.sqrt(2.0) * model.gamma * math.exp(-fac.kappa * theta) * fac.sigma / math.sqrt(fac.kappa)
    h0sq = model.vix(0.0)[0] ** 2
    n_all = np.arange(basis.max_degree + 200)
    lam = phi_eigenvalues(basis.rate * n_all, tau)
    log_fact = gammaln(n_all + 1)
    # log-space to stay finite beyond the basis cap (used for the tail estimate)
    with np.errstate(divide="ignore"):
        log_pow = n_all * np.log(abs(t)) if t != 0.0 else np.where(n_all == 0, 0.0, -np.inf)
        log_a = math.log(h0sq) + 0.5 * t * t + log_pow - log_fact - np.log(lam)
    sign = np.where(n_all % 2 == 1, np.sign(t), 1.0)
    a = sign * np.exp(log_a)
    energy = np.exp(2 * log_a + log_fact + 2 * np.log(lam))
    if N is None:
        N = _adaptive_count(energy, basis.max_degree)
    if N > basis.max_degree:
        basis = Hermite(rate=basis.rate, max_degree=N)
    tail = float(np.sum(np.exp(2 * log_a[N + 1 :] + log_fact[N + 1 :])))
    return EigenSolution(basis, A, list(range(N + 1)), a[: N + 1], lam[: N + 1], tau, tail, "primal", model.family)


def recover_bergomi_multi(model: BergomiMulti, degree: Optional[int] = None, tau: float = TAU) -> EigenSolution:
    """Coefficients in the generator's eigenfunctions psi~_n:

        a_n = h0^2 exp(2 gamma' Sigma gamma) (2 gamma_1)^n1 (2 gamma_2)^n2 / (lambda_n n1! n2!).
    """
    basis, A = factor_basis(model.factor)
    Sigma = basis.cov
    t = 2.0 * model.gamma
    h0sq = model.vix(np.zeros(2))[0] ** 2
    pref = h0sq * math.exp(0.5 * t @ Sigma @ t)

    def shell(total):
        idx = [(n1, total - n1) for n1 in range(total, -1, -1)]
        a = np.array(
            [pref * t[0] ** n1 * t[1] ** n2 / (math.factorial(n1) * math.factorial(n2)) for n1, n2 in idx]
        )
        lam = phi_eigenvalues([basis.eigen_rate(n) for n in idx], tau)
        return idx, a / lam, lam

    shells = [shell(k) for k in range(basis.max_degree + 30)]
    energies = np.array(
        [np.sum(a**2 * norm_sq_array(basis, idx) * lam**2) for idx, a, lam in shells]
    )
    if degree is None:
        degree = _adaptive_count(energies, basis.max_degree)
    if degree > basis.max_degree:
        raise DomainError(f"total degree {degree} exceeds the basis cap {basis.max_degree}")
    idx = [n for k in range(degree + 1) for n in shells[k][0]]
    a = np.concatenate([shells[k][1] for k in range(degree + 1)])
    lam = np.concatenate([shells[k][2] for k in range(degree + 1)])
    tail = float(
        sum(np.sum(s[1] ** 2 * norm_sq_array(basis, s[0])) for s in shells[degree + 1 :])
    )
    return EigenSolution(basis, A, idx, a, lam, tau, tail, "dual", model.family)


def recover_three_halves(model: ThreeHalves, N: Optional[int] = None, tau: float = TAU) -> EigenSolution:
    """Laguerre coefficients a_n = 2 kappa Gamma(alpha) n! / (sigma^2 lambda_n Gamma(n + alpha + 1))."""
    fac = model.factor
    alpha = fac.alpha
    if not alpha > 2:
        raise InvariantError(
            f"v^2 is square integrable only for alpha > 2 (coefficients decay like n^(1 - alpha)); alpha = {alpha:.6g}"
        )
    basis, A = factor_basis(fac)
    n_far = np.arange(0, 200_000, dtype=float)
    lam = phi_eigenvalues(fac.kappa * n_far, tau)
    a = fac.scale * np.exp(gammaln(alpha) + gammaln(n_far + 1) - gammaln(n_far + alpha + 1)) / lam
    norms = norm_sq_array(basis, n_far)
    if N is None:
        N = _adaptive_count(a**2 * norms * lam**2, basis.max_degree)
    if N > basis.max_degree:
        basis = GenLaguerre(alpha, rate=basis.rate, max_degree=N)
    tail = float(np.sum(a[N + 1 :] ** 2 * norms[N + 1 :]))
    return EigenSolution(basis, A, list(range(N + 1)), a[: N + 1], lam[: N + 1], tau, tail, "primal", model.family)


# --------------------------------------------------------------------------- quadrature recovery


def recover_generic(
    h2: Callable,
    factor,
    N: int,
    tau: float = TAU,
    quadrature: Optional[QuadratureConfig] = None,
    squared_norm: bool = False,
) -> EigenSolution:
    """Project h^2 on the factor's eigenbasis by Gauss quadrature and divide by lambda_n.

    ``h2`` takes raw factor states of shape (n, d). ``squared_norm`` divides by
    <psi_n^2>^2 instead of <psi_n^2>; it exists only to audit that alternative
    normalization and does not solve the inverse problem.
    """
    cfg = quadrature or QuadratureConfig()
    basis, A = factor_basis(factor)
    if isinstance(basis, MultiHermite2D):
        if N > basis.max_degree:
            raise DomainError(f"total degree {N} exceeds the basis cap {basis.max_degree}")
    elif N > basis.max_degree:
        basis = _with_degree(basis, N)
    indices = basis.indices(N)
    lam = phi_eigenvalues([basis.eigen_rate(n) for n in indices], tau)
    norms = norm_sq_array(basis, indices)
    denom = lam * (norms**2 if squared_norm else norms)
    pole = cfg.pole_order if isinstance(factor, CIR) else 0

    def compute(n):
        x, w = gauss_rule(factor, n, tilt=cfg.tilt, pole_order=pole)
        vals = np.asarray(h2(x), dtype=float).reshape(-1)
        z = x @ A.T
        if isinstance(basis, MultiHermite2D):
            table = basis_table(basis, N, z, dual=False)
        else:
            table = basis_table(basis, N, z[:, 0])
        fourth = float(w @ vals**2)
        return table @ (w * vals) / denom, fourth

    (a, fourth), _ = _converge(compute, cfg)
    if not math.isfinite(fourth):
        raise ConvergenceError("<h^4> is not finite under the invariant law")
    family = "dual" if isinstance(basis, MultiHermite2D) else "primal"
    return EigenSolution(basis, A, indices, a, lam, tau, float("nan"), family, "generic")


def _with_degree(basis, N):
    if isinstance(basis, Hermite):
        return Hermite(rate=basis.rate, max_degree=N)
    return GenLaguerre(basis.alpha, rate=basis.rate, max_degree=N)


# --------------------------------------------------------------------------- double Nelson


def dn_phi_matrix(factor: DoubleNelson, tau: float) -> np.ndarray:
    """Matrix M with Phi v^2 = poly(M p) for v^2 = poly(p), p = (a11, a12, a22, b1, b2, c)."""
    factor.check_moments()
    A = _dn_system(factor)
    # Van Loan: expm([[A, I], [0, 0]] tau) holds int_0^tau e^{As} ds in its top-right block
    big = np.zeros((12, 12))
    big[:6, :6] = A
    big[:6, 6:] = np.eye(6)
    avg = expm(big * tau)[:6, 6:] / tau
    return avg[np.ix_(_DN_STATE, _DN_STATE)].T


def _dn_linear_closed_form(factor: DoubleNelson, tau: float) -> dict:
    k1, k2, xb = factor.kappa1, factor.kappa2, factor.xbar
    b1 = 1.0 / float(exprel(-k1 * tau))
    avg_d = quad(lambda t: k1 * t * math.exp(-k2 * t) * float(exprel(-(k1 - k2) * t)), 0.0, tau, epsabs=0, epsrel=1e-13)[0] / tau
    b2 = -b1 * avg_d / float(exprel(-k2 * tau))
    return {"b1": b1, "b2": b2, "c": xb * (1.0 - b1 - b2)}


def recover_double_nelson(model: DoubleNelsonMarket, target: str = "quadratic", tau: float = TAU) -> PolynomialSolution:
    """Match Phi v^2 to x1^2 (``quadratic``) or to x1 (``linear``) coefficient by coefficient."""
    fac = model.factor
    M = dn_phi_matrix(fac, tau)
    if target == "quadratic":
        keep = np.arange(6)
        rhs = np.eye(6)[0]
    elif target == "linear":
        keep = np.array([3, 4, 5])
        rhs = np.array([1.0, 0.0, 0.0])
    else:
        raise ValueError(f"target must be 'quadratic' or 'linear', got {target!r}")
    sub = M[np.ix_(keep, keep)]
    if np.linalg.cond(sub) > 1e12:
        raise SingularSystemError("moment-matching system is numerically singular")
    p = np.zeros(6)
    p[keep] = np.linalg.solve(sub, rhs)
    closed = _dn_linear_closed_form(fac, tau) if target == "linear" else None
    return PolynomialSolution(p, fac, tau, target, closed)


# --------------------------------------------------------------------------- evaluation


Solution = Union[EigenSolution, PolynomialSolution]


def evaluate_v2(solution: Solution, x, check: bool = False, rtol: float = 1e-3) -> np.ndarray:
    """Evaluate v^2; with ``check`` warn where the top truncation shell exceeds rtol of the value."""
    values = solution(x)
    if check and isinstance(solution, EigenSolution):
        last = solution.last_term(x)
        bad = last > rtol * np.maximum(np.abs(values), 1e-300)
        if np.any(bad):
            warnings.warn(
                f"{int(bad.sum())} point(s) outside the reliable truncation region", TruncationWarning, stacklevel=2
            )
    return values


@dataclass
class PositivityScan:
    min_value: float
    argmin: np.ndarray
    fraction_negative: float
    n_points: int


def grid_points(region, counts) -> np.ndarray:
    """Tensor grid over ``region`` = [(lo, hi), ...] with ``counts`` points per axis."""
    region = np.atleast_2d(np.asarray(region, dtype=float))
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (region.shape[0],))
    axes = [np.linspace(lo, hi, int(c)) for (lo, hi), c in zip(region, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def positivity_scan(solution: Solution, region, counts=201) -> PositivityScan:
    pts = grid_points(region, counts)
    vals = evaluate_v2(solution, pts)
    i = int(np.argmin(vals))
    return PositivityScan(float(vals[i]), pts[i], float(np.mean(vals < 0)), len(vals))


def forward_residual(solution: Solution, model: MarketModelSpec, grid) -> float:
    """RMS over the grid of Phi v^2_truncated - h^2."""
    pts = as_points(grid, solution.dim)
    diff = solution.forward(pts) - model.vix(pts) ** 2
    return float(np.sqrt(np.mean(diff**2)))


def geometric_series_coefficients(solution: EigenSolution, K: int) -> np.ndarray:
    """Coefficients of xi_K = -tau sum_{k<=K} e^{k L tau} L h^2 in the solution's basis.

    As K grows they converge to a_n for n >= 1 (and 0 for n = 0), i.e. xi -> v^2 - <h^2>.
    """
    rates = np.array([solution.basis.eigen_rate(n) for n in solution.indices])
    h2_coeffs = solution.coefficients * solution.eigenvalues
    k = np.arange(K + 1)[:, None]
    partial = np.sum(np.exp(-k * rates[None, :] * solution.tau), axis=0)
    return solution.tau * rates * h2_coeffs * partial
