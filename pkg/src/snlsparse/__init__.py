"""Sparse recovery for separable nonlinear inverse problems on a grid."""

from .core import (
    AtomicMeasure,
    Dictionary,
    MeasurementVector,
    ParameterGrid,
    dictionary_from_matrix,
    extract_support,
    normalize_columns,
    recovery_error,
    synthesize_measurements,
)
from .certificate import Certificate, build_certificate, verify_certificate
from .correlation import DecayConstants, correlation_profile, fit_decay_constants
from .errors import NotConverged, SNLError
from .forward import (
    HeatModelConfig,
    KernelSpec,
    fourier_dictionary,
    gaussian_dictionary,
    heat_dictionary,
    load_dictionary,
    ricker_dictionary,
    save_dictionary,
)
from .separation import generalized_separation, required_delta, schur_bounds
from .solver import SolverConfig, brute_force_oracle, solve_bp_denoise, solve_bp_equality

__version__ = "0.1.0"
