"""Inverse problem from VIX market models to stochastic volatility functions."""

from .consistency import check_consistency, hjm_quantities, markovianity_probe, scalar_constant_nu
from .eigenbasis import GenLaguerre, Hermite, MultiHermite2D, phi_eigenvalue
from .factors import CIR, DoubleNelson, MultiOU, ScalarOU, simulate, stationary_covariance
from .inverse import (
    TAU,
    EigenSolution,
    PolynomialSolution,
    QuadratureConfig,
    check_solvability,
    evaluate_v2,
    forward_residual,
    positivity_scan,
    recover_bergomi_multi,
    recover_bergomi_scalar,
    recover_double_nelson,
    recover_generic,
    recover_three_halves,
)
from .marketmodels import BergomiMulti, BergomiScalar, DoubleNelsonMarket, ThreeHalves, model_from_dict
from .oracle import mc_phi, quadrature_phi, semigroup_check

__all__ = [
    "check_consistency",
    "hjm_quantities",
    "markovianity_probe",
    "scalar_constant_nu",
    "GenLaguerre",
    "Hermite",
    "MultiHermite2D",
    "phi_eigenvalue",
    "CIR",
    "DoubleNelson",
    "MultiOU",
    "ScalarOU",
    "simulate",
    "stationary_covariance",
    "TAU",
    "EigenSolution",
    "PolynomialSolution",
    "QuadratureConfig",
    "check_solvability",
    "evaluate_v2",
    "forward_residual",
    "positivity_scan",
    "recover_bergomi_multi",
    "recover_bergomi_scalar",
    "recover_double_nelson",
    "recover_generic",
    "recover_three_halves",
    "BergomiMulti",
    "BergomiScalar",
    "DoubleNelsonMarket",
    "ThreeHalves",
    "model_from_dict",
    "mc_phi",
    "quadrature_phi",
    "semigroup_check",
]

__version__ = "0.1.0"
