"""Infinite-width Jacobian kernels for MLPs and their finite-width checks.

The package computes the joint (output, Jacobian) NNGP kernel and the
limiting Jacobian NTK of multilayer perceptrons, the exact finite-width
JNTK, Jacobian-regularised training dynamics, and the closed-form kernel
regression predictor, and cross-validates all of them against analytic
oracles and Monte-Carlo estimates.
"""

from .activations import ACTIVATION_KINDS, Activation, make_activation
from .datasets import Dataset, covering_radius, fibonacci_sphere, load_csv
from .errors import AssumptionViolation, ConfigError, DomainError, JntkError, NumericError
from .kernels import (
    GramMatrix,
    backprop_factor,
    derivative_consistency,
    gram_from_csv,
    gram_to_csv,
    jntk_gram,
    lambda_scale,
    limiting_jntk,
    nngp_base,
    nngp_chain,
    nngp_gram,
    sigma00,
    theta00,
)
from .mlp import (
    Mlp,
    backward,
    estimate_nngp,
    finite_jntk,
    finite_jntk_gram,
    forward,
    init_mlp,
    input_jacobian,
    load_weights,
    param_gradients,
    rng_stream,
    save_weights,
)
from .quadrature import QuadratureRule, expect_mixed, expect_pair, gauss_hermite
from .regression import (
    EigenfeatureReport,
    KernelRegressor,
    MinEigReport,
    eigenfeatures,
    feature_sum,
    fit,
    fit_function_only,
    min_eig_sweep,
    perturb_inputs,
    predict,
    solve,
    stack_targets,
)
from .square import (
    RankReport,
    SquareKernelPair,
    null_vectors,
    rank_report,
    sigma_dot_gram,
    sigma_gram,
    square_kernel_pair,
    theta_gram,
)
from .training import (
    TrainConfig,
    TrainLog,
    jntk_drift,
    log2_schedule,
    loss_gradient,
    operator_norm,
    robust_loss,
    train,
    weight_movement,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
