"""Locally differentially private online federated learning with
temporally correlated noise from matrix-factorization mechanisms."""

from .mf_mechanism import (
    Factorization,
    Kind,
    build_binary_tree,
    build_identity,
    build_toeplitz,
    factorization_stats,
    load_factorization,
    save_factorization,
)
from .privacy import PrivacyBudget, calibrate, rho_from_eps_delta, sensitivity
from .noise import NoiseChannel, open_channel
from .streams import (
    DataStream,
    StreamSample,
    clip_gradient,
    gen_drifting_quadratic,
    gen_heterogeneous_logistic,
    logistic_loss_grad,
    quadratic_loss_grad,
)
from .federation import GlobalState, LearnerState, SimConfig, local_step, run_round, run_simulation
from .metrics import RegretTrace, cr_analog, dynamic_regret, round_optimum, static_regret

__version__ = "0.1.0"
