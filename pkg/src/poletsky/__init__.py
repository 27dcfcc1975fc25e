"""Numerical checks of the inverse Poletsky inequality for smooth maps."""

from .curves import CurveFamily, Polyline, is_admissible, pullback_family, radial_family
from .dilatation import (beltrami_coefficient, cotangent_dilatation, inner_dilatation, tangential_dilatation,
                         tangential_dilatation_from_mu)
from .errors import (ConfigError, DegenerateMapError, DomainError, InvalidInputError, NumericError, PoletskyError,
                     SingularMatrixError, UndefinedValueError)
from .grid import DensityField, Grid
from .maps import DomainDescriptor, SmoothMap, gallery, inverse
from .modulus import (EtaFunction, ModulusEstimate, discrete_modulus, extremal_eta, rho_from_eta, rhs_domain_route,
                      rhs_image_route, ring_modulus_analytic, verify_inequality)

__version__ = "0.1.0"
