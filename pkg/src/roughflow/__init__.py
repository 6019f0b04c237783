"""Path-dependent rough differential equations solved through approximate flows."""

from .approxflow import (
    DrivingPath,
    FlowScheme,
    build_step_field,
    compose_over_partition,
    dyadic_partition,
    euler_defect,
    euler_expansion,
    fit_rate,
    mu,
    mu_c1_defect,
    solve_flow,
)
from .config import load_bundled, load_config, parse_config
from .errors import (
    ConfigError,
    FlowDivergenceError,
    NonConvergenceError,
    NonGeometricDriverError,
    NotFinelyDifferentiableError,
    NotLieElementError,
    NumericalFailure,
    RoughFlowError,
    SewingError,
    ShapeMismatchError,
)
from .pathspace import HistoryBuffer, StoppedPath, metric_d
from .pdvf import (
    DelayField,
    LinearMarkovianField,
    MarkovianField,
    MovingAverageField,
    PathVectorField,
    bracket,
    check_fine_identity,
    directional_vw,
    fine_derivative,
)
from .roughpath import GridRoughPath, lift_piecewise_linear, sample_brownian, sample_fbm
from .tensor_lie import LyndonBasis, TensorElement, TensorShape, lie_bracket, tensor_exp, tensor_log

__version__ = "0.1.0"
