"""
Factor processes driving both the stochastic-volatility model and the market model.

Four families are supported:

    ScalarOU       dX = -kappa X dt + sigma dW
    MultiOU        dX = -K X dt + S dW                (W has independent components)
    CIR            dX = kappa (xbar - X) dt + sigma sqrt(X) dW
    DoubleNelson   dX1 = kappa1 (X2 - X1) dt + sigma1 X1 dW1
                   dX2 = kappa2 (xbar - X2) dt + sigma2 X2 dW2,   dW1 dW2 = rho dt

Every spec exposes ``drift(x)`` and ``diffusion(x)`` on point arrays of shape
(n, d) so the generator can be applied without knowing the family.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, ClassVar, Union

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from .errors import DomainError, InvariantError, SingularSystemError

DEFAULT_DT = 1.0 / 365.0
BLOCK_SIZE = 8192


def as_points(x, dim: int) -> np.ndarray:
    """Coerce scalars, 1-D arrays and (n, d) arrays to shape (n, d)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1) if dim == 1 else arr.reshape(1, -1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.shape[-1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise InvariantError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class ScalarOU:
    kappa: float
    sigma: float

    kind: ClassVar[str] = "scalar_ou"
    dim: ClassVar[int] = 1

    def __post_init__(self):
        _positive("kappa", self.kappa)
        _positive("sigma", self.sigma)

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.kappa)

    def drift(self, x):
        return -self.kappa * as_points(x, 1)

    def diffusion(self, x):
        pts = as_points(x, 1)
        return np.full((pts.shape[0], 1, 1), self.sigma)

    def check_state(self, x) -> None:
        if not np.all(np.isfinite(as_points(x, 1))):
            raise DomainError("state must be finite")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kappa": self.kappa, "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class MultiOU:
    """Multi-factor OU process; ``S`` multiplies a vector of independent Brownian motions."""

    K: np.ndarray
    S: np.ndarray

    kind: ClassVar[str] = "multi_ou"

    def __post_init__(self):
        K = np.array(self.K, dtype=float, ndmin=2)
        S = np.array(self.S, dtype=float, ndmin=2)
        d = K.shape[0]
        if K.shape != (d, d) or S.shape != (d, d) or d < 1:
            raise InvariantError(f"K and S must be square and of equal size, got {K.shape}, {S.shape}")
        if np.any(np.linalg.eigvals(K).real <= 0):
            raise InvariantError("all eigenvalues of K must have positive real part")
        K.flags.writeable = False
        S.flags.writeable = False
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "S", S)
        if not _controllable(K, S):
            raise InvariantError("(-K, S) is not a controllable pair: finite-horizon Gramian is singular")

    @classmethod
    def from_correlated(cls, kappas, sigmas, rho) -> "MultiOU":
        """Diagonal mean reversion with correlated scalar noises dW_i dW_j = rho_ij dt."""
        kappas = np.asarray(kappas, dtype=float)
        sigmas = np.asarray(sigmas, dtype=float)
        d = kappas.size
        corr = np.asarray(rho, dtype=float)
        if corr.ndim == 0:
            corr = np.full((d, d), float(corr))
            np.fill_diagonal(corr, 1.0)
        cov = np.outer(sigmas, sigmas) * corr
        return cls(np.diag(kappas), np.linalg.cholesky(cov))

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    @property
    def noise_covariance(self) -> np.ndarray:
        return self.S @ self.S.T

    def drift(self, x):
        return -as_points(x, self.dim) @ self.K.T

    def diffusion(self, x):
        pts = as_points(x, self.dim)
        return np.broadcast_to(self.S, (pts.shape[0],) + self.S.shape)

    def check_state(self, x) -> None:
        if not np.all(np.isfinite(as_points(x, self.dim))):
            raise DomainError("state must be finite")

    def gramian(self, t: float) -> np.ndarray:
        """Finite-horizon Gramian, the covariance of X_t given X_0."""
        return _gramian(self.K, self.S, t)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "K": self.K.tolist(), "S": self.S.tolist()}

    def __eq__(self, other):
        return (
            isinstance(other, MultiOU)
            and np.array_equal(self.K, other.K)
            and np.array_equal(self.S, other.S)
        )


@dataclass(frozen=True)
class CIR:
    kappa: float
    xbar: float
    sigma: float

    kind: ClassVar[str] = "cir"
    dim: ClassVar[int] = 1

    def __post_init__(self):
        _positive("kappa", self.kappa)
        _positive("xbar", self.xbar)
        _positive("sigma", self.sigma)

    @property
    def alpha(self) -> float:
        """Laguerre parameter of the normalized process, 2 kappa xbar / sigma^2 - 1."""
        return 2.0 * self.kappa * self.xbar / self.sigma**2 - 1.0

    @property
    def scale(self) -> float:
        """z = scale * x maps to the normalized process with unit time change."""
        return 2.0 * self.kappa / self.sigma**2

    def drift(self, x):
        return self.kappa * (self.xbar - as_points(x, 1))

    def diffusion(self, x):
        pts = as_points(x, 1)
        return (self.sigma * np.sqrt(np.clip(pts, 0.0, None)))[:, :, None]

    def check_state(self, x) -> None:
        pts = as_points(x, 1)
        if not np.all(pts > 0):
            raise DomainError("CIR state must be strictly positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kappa": self.kappa, "xbar": self.xbar, "sigma": self.sigma}


@dataclass(frozen=True)
class DoubleNelson:
    kappa1: float
    kappa2: float
    xbar: float
    sigma1: float
    sigma2: float
    rho: float

    kind: ClassVar[str] = "double_nelson"
    dim: ClassVar[int] = 2

    def __post_init__(self):
        for name in ("kappa1", "kappa2", "xbar", "sigma1", "sigma2"):
            _positive(name, getattr(self, name))
        if not -1.0 < self.rho < 1.0:
            raise InvariantError(f"rho must lie in (-1, 1), got {self.rho}")

    def check_moments(self) -> None:
        """Raise if second invariant moments do not exist."""
        k1, k2, s1, s2, r = self.kappa1, self.kappa2, self.sigma1, self.sigma2, self.rho
        if not 2 * k1 > s1**2:
            raise InvariantError("moment existence requires 2*kappa1 > sigma1**2")
        if not 2 * k2 > s2**2:
            raise InvariantError("moment existence requires 2*kappa2 > sigma2**2")
        if not k1 + k2 - r * s1 * s2 > 0:
            raise InvariantError("moment existence requires kappa1 + kappa2 - rho*sigma1*sigma2 > 0")

    @property
    def noise_factor(self) -> np.ndarray:
        """Lower Cholesky factor of the Brownian correlation matrix."""
        return np.array([[1.0, 0.0], [self.rho, math.sqrt(1.0 - self.rho**2)]])

    def drift(self, x):
        pts = as_points(x, 2)
        return np.column_stack(
            [self.kappa1 * (pts[:, 1] - pts[:, 0]), self.kappa2 * (self.xbar - pts[:, 1])]
        )

    def diffusion(self, x):
        pts = as_points(x, 2)
        scales = pts * np.array([self.sigma1, self.sigma2])
        return scales[:, :, None] * self.noise_factor[None, :, :]

    def check_state(self, x) -> None:
        if not np.all(as_points(x, 2) > 0):
            raise DomainError("double Nelson state must be strictly positive componentwise")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "xbar": self.xbar,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "rho": self.rho,
        }


FactorSpec = Union[ScalarOU, MultiOU, CIR, DoubleNelson]

_KINDS = {cls.kind: cls for cls in (ScalarOU, MultiOU, CIR, DoubleNelson)}


def factor_from_dict(block: dict) -> FactorSpec:
    """Build a FactorSpec from a config block (the inverse of ``to_dict``)."""
    block = dict(block)
    kind = block.pop("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown factor kind {kind!r}; expected one of {sorted(_KINDS)}")
    if kind == "multi_ou" and "K" not in block:
        return MultiOU.from_correlated(block["kappas"], block["sigmas"], block.get("rho", 0.0))
    return _KINDS[kind](**block)


def generator(spec: FactorSpec, x, value, grad, hess) -> np.ndarray:
    """Apply the infinitesimal generator given a function's gradient and Hessian at x.

    ``value`` is unused but accepted so callers can pass derivative triples directly.
    """
    sig = spec.diffusion(x)
    a = np.einsum("nik,njk->nij", sig, sig)
    return 0.5 * np.einsum("nij,nij->n", a, hess) + np.einsum("ni,ni->n", spec.drift(x), grad)


# --------------------------------------------------------------------------- covariances


def _gramian(K: np.ndarray, S: np.ndarray, t: float) -> np.ndarray:
    # Van Loan: expm([[-K, SS*], [0, K*]] t) carries the Gramian in its blocks.
    d = K.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -K
    M[:d, d:] = S @ S.T
    M[d:, d:] = K.T
    E = expm(M * t)
    G = E[:d, d:] @ E[:d, :d].T
    return 0.5 * (G + G.T)


def _controllable(K: np.ndarray, S: np.ndarray) -> bool:
    t = 1.0 / max(np.abs(np.linalg.eigvals(K)).max(), 1e-12)
    G = _gramian(K, S, min(t, 1.0))
    w = np.linalg.eigvalsh(G)
    return bool(w.min() > 1e-12 * max(w.max(), 1e-300))


def stationary_covariance(spec: MultiOU) -> np.ndarray:
    """Solve K Sigma + Sigma K* = S S* for the stationary covariance."""
    Q = spec.noise_covariance
    Sigma = solve_continuous_lyapunov(spec.K, Q)
    Sigma = 0.5 * (Sigma + Sigma.T)
    resid = np.abs(spec.K @ Sigma + Sigma @ spec.K.T - Q).max()
    if not np.all(np.isfinite(Sigma)) or resid > 1e-8 * max(np.abs(Q).max(), 1.0):
        raise SingularSystemError(f"Lyapunov solve inaccurate (residual {resid:.3e})")
    if np.linalg.eigvalsh(Sigma).min() <= 0:
        raise SingularSystemError("stationary covariance is not positive definite")
    return Sigma


# --------------------------------------------------------------------------- densities


@dataclass(frozen=True)
class NoClosedForm:
    """Typed outcome for factors without a known invariant density."""

    reason: str


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    cov: np.ndarray

    def __call__(self, x) -> np.ndarray:
        cov = np.atleast_2d(self.cov)
        d = cov.shape[0]
        pts = as_points(x, d)
        prec = np.linalg.inv(cov)
        quad = np.einsum("ni,ij,nj->n", pts, prec, pts)
        norm = math.sqrt((2 * math.pi) ** d * np.linalg.det(cov))
        return np.exp(-0.5 * quad) / norm


@dataclass(frozen=True)
class GammaDensity:
    """CIR invariant law: Gamma(alpha + 1) in z = scale * x."""

    alpha: float
    scale: float

    def scaled(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = np.exp(
            self.alpha * np.log(z[pos]) - z[pos] - math.lgamma(self.alpha + 1.0)
        )
        return out

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.scale * self.scaled(self.scale * x)


def invariant_density(spec: FactorSpec):
    """Return the invariant density evaluator, or NoClosedForm for the double Nelson factor."""
    if isinstance(spec, ScalarOU):
        return GaussianDensity(np.array([[spec.stationary_variance]]))
    if isinstance(spec, MultiOU):
        return GaussianDensity(stationary_covariance(spec))
    if isinstance(spec, CIR):
        return GammaDensity(spec.alpha, spec.scale)
    if isinstance(spec, DoubleNelson):
        return NoClosedForm("double Nelson factor has no known invariant density")
    raise TypeError(f"unsupported factor {spec!r}")


# --------------------------------------------------------------------------- double Nelson moments


def _dn_system(spec: DoubleNelson) -> np.ndarray:
    """Augmented generator for (u1, u2, u11, u12, u22, 1)."""
    k1, k2, xb = spec.kappa1, spec.kappa2, spec.xbar
    s1, s2, r = spec.sigma1, spec.sigma2, spec.rho
    A = np.zeros((6, 6))
    A[0, 0], A[0, 1] = -k1, k1
    A[1, 1], A[1, 5] = -k2, k2 * xb
    A[2, 2], A[2, 3] = -(2 * k1 - s1**2), 2 * k1
    A[3, 3], A[3, 4], A[3, 0] = -(k1 + k2 - r * s1 * s2), k1, k2 * xb
    A[4, 4], A[4, 1] = -(2 * k2 - s2**2), 2 * k2 * xb
    return A


def _dn_initial(x0) -> np.ndarray:
    x1, x2 = (float(v) for v in np.asarray(x0, dtype=float).ravel())
    return np.array([x1, x2, x1 * x1, x1 * x2, x2 * x2, 1.0])


def dn_moments(spec: DoubleNelson, x0, t):
    """Conditional moments (u1, u2, u11, u12, u22) at time(s) t given X_0 = x0.

    Solved exactly through the matrix exponential of the linear moment system.
    Returns an array of shape (5,) for scalar t, otherwise (len(t), 5).
    """
    spec.check_moments()
    spec.check_state(x0)
    A = _dn_system(spec)
    u0 = _dn_initial(x0)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0):
        raise DomainError("t must be non-negative")
    out = np.array([expm(A * s) @ u0 for s in ts])[:, :5]
    return out[0] if np.ndim(t) == 0 else out


def dn_invariant_moments(spec: DoubleNelson) -> np.ndarray:
    """Closed-form invariant moments (<x1>, <x2>, <x1^2>, <x1 x2>, <x2^2>)."""
    spec.check_moments()
    k1, k2, xb = spec.kappa1, spec.kappa2, spec.xbar
    s1, s2, r = spec.sigma1, spec.sigma2, spec.rho
    m22 = 2 * k2 * xb**2 / (2 * k2 - s2**2)
    m12 = (k2 * xb**2 + k1 * m22) / (k1 + k2 - r * s1 * s2)
    m11 = 2 * k1 * m12 / (2 * k1 - s1**2)
    return np.array([xb, xb, m11, m12, m22])


# --------------------------------------------------------------------------- simulation


@dataclass(eq=False)
class PathEnsemble:
    times: np.ndarray
    states: np.ndarray  # (n_paths, n_times, d)
    seed: int
    scheme: str

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def to_csv(self, path) -> None:
        d = self.states.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "time"] + [f"x{i + 1}" for i in range(d)])
            for p in range(self.n_paths):
                for k, t in enumerate(self.times):
                    w.writerow([p, f"{t:.17g}"] + [f"{v:.17g}" for v in self.states[p, k]])


_SCHEMES = {
    "scalar_ou": "exact-gaussian",
    "multi_ou": "exact-gaussian",
    "cir": "exact-ncx2",
    "double_nelson": "log-euler",
}


def time_grid(horizon: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if horizon < dt * (1 - 1e-12):
        raise DomainError(f"horizon {horizon} must be at least dt {dt}")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * horizon:
        n = int(math.ceil(horizon / dt))
    times = np.minimum(dt * np.arange(n + 1), horizon)
    times[-1] = horizon
    return times


def make_stepper(spec: FactorSpec) -> Callable[[np.ndarray, float, np.random.Generator], np.ndarray]:
    """Return step(x, h, rng) advancing an (n, d) state array by time h."""
    if isinstance(spec, ScalarOU):
        k, s = spec.kappa, spec.sigma

        def step(x, h, rng):
            e = math.exp(-k * h)
            sd = s * math.sqrt(-math.expm1(-2 * k * h) / (2 * k))
            return x * e + sd * rng.standard_normal(x.shape)

        return step

    if isinstance(spec, MultiOU):
        cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

        def step(x, h, rng):
            if h not in cache:
                G = spec.gramian(h)
                w, V = np.linalg.eigh(G)
                cache[h] = (expm(-spec.K * h), V * np.sqrt(np.clip(w, 0, None)))
            E, L = cache[h]
            return x @ E.T + rng.standard_normal(x.shape) @ L.T

        return step

    if isinstance(spec, CIR):
        k, xb, s = spec.kappa, spec.xbar, spec.sigma
        df = 4 * k * xb / s**2

        def step(x, h, rng):
            e = math.exp(-k * h)
            c = s**2 * -math.expm1(-k * h) / (4 * k)
            return c * rng.noncentral_chisquare(df, x * e / c)

        return step

    if isinstance(spec, DoubleNelson):
        k1, k2, xb = spec.kappa1, spec.kappa2, spec.xbar
        s1, s2, r = spec.sigma1, spec.sigma2, spec.rho
        rr = math.sqrt(1 - r * r)

        def step(x, h, rng):
            z = rng.standard_normal(x.shape)
            w1 = z[:, 0]
            w2 = r * z[:, 0] + rr * z[:, 1]
            sq = math.sqrt(h)
            x1, x2 = x[:, 0], x[:, 1]
            g1 = (k1 * (x2 / x1 - 1.0) - 0.5 * s1 * s1) * h + s1 * sq * w1
            g2 = (k2 * (xb / x2 - 1.0) - 0.5 * s2 * s2) * h + s2 * sq * w2
            return np.column_stack([x1 * np.exp(g1), x2 * np.exp(g2)])

        return step

    raise TypeError(f"unsupported factor {spec!r}")


def block_rngs(seed: int, n_paths: int, block_size: int = BLOCK_SIZE):
    """Yield (slice, Generator) per block; stream i is SeedSequence(seed, spawn_key=(i,))."""
    for b, start in enumerate(range(0, n_paths, block_size)):
        stop = min(start + block_size, n_paths)
        ss = np.random.SeedSequence(int(seed), spawn_key=(b,))
        yield slice(start, stop), np.random.Generator(np.random.PCG64(ss))


def _check_x0(spec: FactorSpec, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != spec.dim:
        raise DomainError(f"x0 must have {spec.dim} components, got {x0.size}")
    spec.check_state(x0)
    return x0


def simulate(
    spec: FactorSpec,
    x0,
    horizon: float,
    dt: float = DEFAULT_DT,
    n_paths: int = 1,
    seed: int = 0,
) -> PathEnsemble:
    """Simulate factor paths on a uniform grid (last step shortened if needed).

    Paths are generated in fixed-size blocks, each with its own seed stream, so
    the output does not depend on how blocks are distributed across workers.
    """
    x0 = _check_x0(spec, x0)
    times = time_grid(horizon, dt)
    steps = np.diff(times)
    step = make_stepper(spec)
    states = np.empty((n_paths, times.size, spec.dim))
    for sl, rng in block_rngs(seed, n_paths):
        x = np.tile(x0, (sl.stop - sl.start, 1))
        states[sl, 0] = x
        for k, h in enumerate(steps, start=1):
            x = step(x, h, rng)
            states[sl, k] = x
    return PathEnsemble(times, states, int(seed), _SCHEMES[spec.kind])
