"""Universal deformations of Z-fiber-reinforced elastic solids.

Differential geometry of strain fields, randomized constitutive models, the
catalog of universal families, universality and equilibrium residuals, and
strain compatibility with map reconstruction.
"""

from .compat import (
    CoframeZ,
    MetricAnsatzZ,
    PathSpec,
    bending_map,
    bending_metric,
    frame_scalars,
    integrate_flat_ansatz,
    reconstruct_map,
    ricci_ode_residuals,
    rodrigues_exp,
    structural_residuals,
    transport_rotation,
)
from .constitutive import EnergyFunction, Poly3, ResponseTriple, sample_materials, sbar_cauchy, sbar_hyper
from .diffgeo import DeformationMap, Domain, MetricField, christoffel, constant_metric, invariants, ricci, spd_sqrt
from .errors import InextensaError, InputError, NumericalError
from .families import KINDS, closed_form_C, closed_form_metric, make_family, params_from_json, random_params
from .universality import (
    ConstraintReport,
    cauchy_universality_residuals,
    classify_invariants,
    full_equilibrium_residual,
    hyper_universality_residuals,
    solve_tension,
)

__version__ = "0.1.0"
