"""Empirical Gateaux derivatives: influence functions by finite differences
of plug-in functionals, one-step estimators and analytic checks."""

from .errors import (
    DegenerateError,
    GateauxError,
    InfeasibleError,
    InvalidInput,
    InvalidParameter,
    LayoutError,
    NumericFailure,
    SupportError,
    UnboundedError,
)
from .functionals import (
    ConstantFunctional,
    DtrValue,
    Integrator,
    MeanPotentialOutcome,
    dtr_g_formula,
    functional_from_dict,
    functional_from_json,
    induced_propensity,
    induced_regression,
    mean_potential_outcome,
    nadaraya_watson,
)
from .gateaux import DiffScheme, GateauxReport, empirical_gateaux, one_step, sweep
from .mdp import (
    LinearConstraintSet,
    TabularMDP,
    fd_derivative,
    one_step_policy_value,
    random_mdp,
    solve_policy_lp,
    value_iteration,
)
from .measures import (
    Dataset,
    DensityModel,
    Dirac,
    DiscreteDistribution,
    DtrDataset,
    Kernel,
    SmoothedDelta,
    fit_kde,
    kernel_eval,
    perturb,
    sample,
    smoothed_delta_eval,
)
from .oracle import (
    Nuisances,
    aipw_score,
    dtr_eif,
    envelope_influence,
    exact_derivative_discrete,
    mdp_influence,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
