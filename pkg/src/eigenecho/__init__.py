"""eigenecho: perturbed-eigenfunction statistics and Loschmidt echo on the flat 2-torus.

The package propagates exact torus eigenfunctions under metric-deformed
semiclassical Schroedinger operators, estimates moments and variance of
the pointwise values over the deformation parameters, and evaluates the
classical-dynamical variance prediction for comparison.
"""

__version__ = "0.1.0"

from .fields import (
    CallableField,
    ConstantField,
    FourierField,
    ProductField,
    RadialBumpField,
    ScalarField,
    SumField,
    SymTensorField,
    torus_distance,
    wrap_delta,
    wrap_point,
)
from .metric import (
    AdmissibilityReport,
    MetricFamily,
    basis_rank_check,
    build_torus_example,
    check_condition_A,
    check_positive_definite,
    estimate_band_constant,
    identity_family,
    kappa,
    traceless_basis,
    traceless_conformal_split,
)
from .hamflow import (
    FlowJet,
    PhasePoint,
    flow,
    flow_batch,
    flow_trace,
    spatial_jacobian,
    symplectic_defect,
)
