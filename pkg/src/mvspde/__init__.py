"""Simulation and verification toolkit for McKean-Vlasov SDEs and SPDEs.

Spectral Navier-Stokes, Cahn-Hilliard and Kuramoto-Sivashinsky particle
systems, cut-off localisation for finite-dimensional equations, exact
empirical Wasserstein distances and numeric audits of structural conditions.
"""
from .errors import BlowUpError, ConfigurationError, DimensionError, UnsupportedOperation
from .spectral import (
    ScalarField,
    SpectralGrid,
    VelocityField,
    bilinear_B,
    inner_product,
    leray_project,
    nonlinearity_phi,
    sobolev_norm,
    stokes_apply,
)
from .ensemble import ParticleEnsemble, PathEnsemble
from .mvsde import MvsdeModel, TruncatedModel, cutoff_psi, em_step, moment_monitor, pushforward_truncate, simulate_mvsde
from .measures import chaos_statistic, pairwise_cost, wasserstein2
from .particles import InteractionKernel, NoiseModel, SpdeModelSpec, simulate_system, stopping_time_tau

__version__ = "0.1.0"
