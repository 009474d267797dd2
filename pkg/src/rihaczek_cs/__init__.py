"""Compressive estimation of the Rihaczek spectrum of nonstationary,
underspread and approximately time-frequency sparse random processes.

Submodules
----------
core
    Periodic TF grid containers, lag supports and the symplectic DFT.
spectra
    Ambiguity functions, Rihaczek spectra and the windowed estimator.
compress
    Random AF sampling, basis-pursuit recovery and symmetrization.
solver
    Complex basis pursuit by ADMM.
processes
    OFDM, chirp and generic Gaussian test processes.
analysis
    Variance, bias and MSE formulas and bounds.
cli
    Experiment runner and figure-data export.
"""

from .compress import (
    CompressiveResult,
    CsProblem,
    compressive_estimate,
    compressive_estimates,
    symmetrized_compressive_estimate,
)
from .core import LagSupport, TfMatrix, make_lag_support, symplectic_dft, symplectic_idft
from .solver import BpConfig, BpSolution, basis_pursuit
from .spectra import (
    CorrelationMatrix,
    ambiguity_function,
    eaf_from_corr,
    mvu_estimate,
    rihaczek_distribution,
    rs_from_corr,
)

__version__ = "0.1.0"

__all__ = [
    "TfMatrix",
    "LagSupport",
    "make_lag_support",
    "symplectic_dft",
    "symplectic_idft",
    "CorrelationMatrix",
    "ambiguity_function",
    "rihaczek_distribution",
    "eaf_from_corr",
    "rs_from_corr",
    "mvu_estimate",
    "CsProblem",
    "CompressiveResult",
    "compressive_estimate",
    "compressive_estimates",
    "symmetrized_compressive_estimate",
    "BpConfig",
    "BpSolution",
    "basis_pursuit",
]
