"""
Eigenfunctions of the normalized factor generators and eigenvalues of the
averaging operator Phi = (1/tau) int_0^tau exp(L u) du.

Hermite       probabilists' Hermite polynomials He_n(z), orthogonal under N(0, 1),
              eigenfunctions of the OU generator with rates kappa * n.
GenLaguerre   generalized Laguerre polynomials L_n^alpha(z), orthogonal under
              Gamma(alpha + 1), eigenfunctions of the normalized CIR generator.
MultiHermite2D
              bi-orthogonal Hermite families for a 2-D Gaussian with covariance Sigma.
              ``psi_n = omega^{-1} (-d/dx)^n omega`` and the dual family
              ``psi~_n`` built the same way in z = Sigma^{-1} x. With diagonal
              mean reversion, psi~_n satisfies L psi~_n = -(n1 k1 + n2 k2) psi~_n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import exprel, gammaln

from .errors import DomainError


@dataclass(frozen=True)
class Hermite:
    rate: float = 1.0
    max_degree: int = 40

    kind: ClassVar[str] = "hermite"
    dim: ClassVar[int] = 1

    def indices(self, n_max: int) -> list[int]:
        return list(range(n_max + 1))

    def eigen_rate(self, n: int) -> float:
        return self.rate * n

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rate": self.rate, "max_degree": self.max_degree}


@dataclass(frozen=True)
class GenLaguerre:
    alpha: float
    rate: float = 1.0
    max_degree: int = 40

    kind: ClassVar[str] = "laguerre"
    dim: ClassVar[int] = 1

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"Laguerre parameter alpha must be positive, got {self.alpha}")

    def indices(self, n_max: int) -> list[int]:
        return list(range(n_max + 1))

    def eigen_rate(self, n: int) -> float:
        return self.rate * n

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "rate": self.rate, "max_degree": self.max_degree}


def _hermite_family(Q: np.ndarray, degree: int) -> dict[tuple[int, int], np.ndarray]:
    """Coefficient arrays c[i, j] (of y1^i y2^j) for H_n(y) = e^{y'Qy/2} (-d/dy)^n e^{-y'Qy/2}.

    Built with H_{n+e_i} = (Q y)_i H_n - d/dy_i H_n.
    """
    size = degree + 1
    one = np.zeros((size, size))
    one[0, 0] = 1.0
    fam = {(0, 0): one}
    for total in range(1, degree + 1):
        for n1 in range(total, -1, -1):
            n2 = total - n1
            axis = 0 if n1 > 0 else 1
            prev = fam[(n1 - 1, n2)] if axis == 0 else fam[(n1, n2 - 1)]
            new = np.zeros_like(prev)
            new[1:, :] += Q[axis, 0] * prev[:-1, :]
            new[:, 1:] += Q[axis, 1] * prev[:, :-1]
            new -= _deriv(prev, axis)
            fam[(n1, n2)] = new
    return fam


def _deriv(c: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(c)
    k = np.arange(1, c.shape[axis])
    if axis == 0:
        out[:-1, :] = c[1:, :] * k[:, None]
    else:
        out[:, :-1] = c[:, 1:] * k[None, :]
    return out


@dataclass(frozen=True, eq=False)
class MultiHermite2D:
    cov: np.ndarray
    rates: tuple[float, float]
    max_degree: int = 12

    kind: ClassVar[str] = "multi_hermite_2d"
    dim: ClassVar[int] = 2

    primal: dict = field(init=False, repr=False)
    dual: dict = field(init=False, repr=False)
    precision: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() <= 0:
            raise DomainError("MultiHermite2D covariance must be a symmetric positive definite 2x2 matrix")
        cov.flags.writeable = False
        prec = np.linalg.inv(cov)
        prec = 0.5 * (prec + prec.T)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "primal", _hermite_family(prec, self.max_degree))
        object.__setattr__(self, "dual", _hermite_family(cov, self.max_degree))

    def indices(self, total_degree: int) -> list[tuple[int, int]]:
        return [(n1, t - n1) for t in range(total_degree + 1) for n1 in range(t, -1, -1)]

    def eigen_rate(self, n) -> float:
        return n[0] * self.rates[0] + n[1] * self.rates[1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cov": self.cov.tolist(),
            "rates": list(self.rates),
            "max_degree": self.max_degree,
        }

    def __eq__(self, other):
        return (
            isinstance(other, MultiHermite2D)
            and np.array_equal(self.cov, other.cov)
            and self.rates == other.rates
            and self.max_degree == other.max_degree
        )


BasisSpec = Union[Hermite, GenLaguerre, MultiHermite2D]


def basis_from_dict(block: dict) -> BasisSpec:
    block = dict(block)
    kind = block.pop("kind")
    cls = {"hermite": Hermite, "laguerre": GenLaguerre, "multi_hermite_2d": MultiHermite2D}[kind]
    if kind == "multi_hermite_2d":
        block["rates"] = tuple(block["rates"])
    return cls(**block)


@dataclass(frozen=True)
class PhiEigenvalue:
    rate: float
    tau: float
    value: float


def phi_eigenvalue(rate: float, tau: float) -> PhiEigenvalue:
    """lambda = (1 - exp(-rate tau)) / (rate tau); exactly 1 for rate 0."""
    if rate < 0:
        raise DomainError(f"eigen rate must be non-negative, got {rate}")
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    value = 1.0 if rate == 0 else float(exprel(-rate * tau))
    return PhiEigenvalue(float(rate), float(tau), value)


def phi_eigenvalues(rates, tau: float) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0):
        raise DomainError("eigen rates must be non-negative")
    return exprel(-rates * tau)


# --------------------------------------------------------------------------- evaluation


def _check_degree(basis: BasisSpec, n_max: int) -> None:
    if n_max < 0 or n_max > basis.max_degree:
        raise DomainError(f"degree {n_max} outside [0, {basis.max_degree}] for {basis.kind}")


def hermite_table(n_max: int, z) -> np.ndarray:
    """Rows He_0..He_{n_max} at points z via He_{n+1} = z He_n - n He_{n-1}."""
    z = np.asarray(z, dtype=float)
    out = np.empty((n_max + 1,) + z.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = z
    for n in range(1, n_max):
        out[n + 1] = z * out[n] - n * out[n - 1]
    return out


def laguerre_table(n_max: int, alpha: float, z) -> np.ndarray:
    """Rows L_0^a..L_{n_max}^a via (n+1) L_{n+1} = (2n + 1 + a - z) L_n - (n + a) L_{n-1}."""
    z = np.asarray(z, dtype=float)
    out = np.empty((n_max + 1,) + z.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 1.0 + alpha - z
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1 + alpha - z) * out[n] - (n + alpha) * out[n - 1]) / (n + 1)
    return out


def _points2(point) -> np.ndarray:
    pts = np.asarray(point, dtype=float)
    if pts.shape[-1] != 2:
        raise DomainError(f"MultiHermite2D points need 2 coordinates, got shape {pts.shape}")
    return pts


def basis_table(basis: BasisSpec, n_max: int, point, dual: bool = False) -> np.ndarray:
    """All basis functions up to degree n_max at the given points, one row per index.

    Row order follows ``basis.indices(n_max)``. For MultiHermite2D, ``point`` is in
    raw x coordinates and ``dual`` selects the psi~ family.
    """
    _check_degree(basis, n_max)
    if isinstance(basis, Hermite):
        return hermite_table(n_max, point)
    if isinstance(basis, GenLaguerre):
        z = np.asarray(point, dtype=float)
        if np.any(z <= 0):
            raise DomainError("Laguerre basis is defined for z > 0")
        return laguerre_table(n_max, basis.alpha, z)
    pts = _points2(point)
    if dual:
        pts = pts @ basis.precision.T
        fam = basis.dual
    else:
        fam = basis.primal
    return np.array([P.polyval2d(pts[..., 0], pts[..., 1], fam[n]) for n in basis.indices(n_max)])


def basis_eval(basis: BasisSpec, index, point):
    """Evaluate one eigenfunction psi_index at point(s)."""
    if isinstance(basis, MultiHermite2D):
        n = tuple(int(i) for i in index)
        _check_degree(basis, sum(n))
        if min(n) < 0:
            raise DomainError(f"invalid index {index}")
        pts = _points2(point)
        return P.polyval2d(pts[..., 0], pts[..., 1], basis.primal[n])
    n = int(index)
    return basis_table(basis, n, point)[n]


def basis_dual_eval(basis: MultiHermite2D, index, point):
    """Evaluate the dual family psi~_index, bi-orthogonal to psi under omega."""
    if not isinstance(basis, MultiHermite2D):
        return basis_eval(basis, index, point)
    n = tuple(int(i) for i in index)
    _check_degree(basis, sum(n))
    z = _points2(point) @ basis.precision.T
    return P.polyval2d(z[..., 0], z[..., 1], basis.dual[n])


def norm_sq(basis: BasisSpec, index) -> float:
    """<psi_n psi~_n> under the invariant density: n!, Laguerre c_n, or n1! n2!."""
    if isinstance(basis, MultiHermite2D):
        n1, n2 = (int(i) for i in index)
        return float(math.factorial(n1) * math.factorial(n2))
    n = int(index)
    if isinstance(basis, Hermite):
        return float(math.factorial(n))
    a = basis.alpha
    return float(np.exp(gammaln(n + a + 1) - gammaln(n + 1) - gammaln(a + 1)))


def norm_sq_array(basis: BasisSpec, indices) -> np.ndarray:
    if isinstance(basis, GenLaguerre):
        n = np.asarray(indices, dtype=float)
        a = basis.alpha
        return np.exp(gammaln(n + a + 1) - gammaln(n + 1) - gammaln(a + 1))
    return np.array([norm_sq(basis, i) for i in indices])
