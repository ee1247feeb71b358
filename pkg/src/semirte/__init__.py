"""Semilinear radiative transport with multi-photon absorption: forward, diffusion, spectral and inverse solvers."""
from .diffusion import DiffusionProblem, solve_semilinear_diffusion
from .errors import (DataError, DomainError, IterationError, ModelError,
                     NumericalIntegrityError, SemirteError, UnsupportedParameterError,
                     ValidationError)
from .forward import FixedPointConfig, MPAModel, fixed_point_solve, internal_data
from .geometry import (AngularField, AngularQuadrature, BoundarySource, Discretization, Domain,
                       ScalarField, ScatteringModel, SpatialGrid)
from .inversion import InversionConfig, recover_absorption_single, recover_mpa_coefficients
from .kernels import BACKEND
from .peierls import PeierlsMatrix, ScaledCoefficients, epsilon_scan, peierls_matrix
from .transport import TransportConfig, solve_linear_rte

__version__ = "0.1.0"
