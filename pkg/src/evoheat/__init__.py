"""Heat and conjugate-heat semigroups under evolving Riemannian metrics.

Probabilistic machinery (frame-transported diffusion, Feynman-Kac weights,
damped-transport derivative estimates), a deterministic PDE reference
solver, explicit inequality constants, and a verification harness for
Harnack, heat-kernel and log-Sobolev bounds on closed-form model flows.
"""
from .errors import (
    ChartError,
    ConfigError,
    HypothesisViolation,
    SingularMetric,
    StepTooLarge,
    TimeOutOfRange,
)
from .geometry import (
    BoundProfile,
    ConformalCircle,
    EvolvingModel,
    Point,
    ScaledCircle,
    ShrinkingSphere2,
    ball_volume,
    bound_profile,
    christoffel,
    distance,
    grad_phi,
    hess_phi,
    measure_mu,
    metric_at,
    metric_h_at,
    ricci,
    varrho,
)
from .transport import DampingMatrix, Frame, orthonormal_frame, q_step, transport_step
from .estimators import (
    EstimatorResult,
    PathState,
    bismut_gradient,
    feynman_kac,
    kernel_density,
    martingale_diagnostic,
    semigroup,
    simulate_path,
    weak_order_regression,
)
from .fields import field_library, get_field

__version__ = "0.1.0"
