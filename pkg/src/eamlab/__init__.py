"""Reward fine-tuning of flow models as stochastic optimal control, on analytic toy worlds.

Set ``EAMLAB_THREADS`` before import to cap BLAS/OpenMP threads.
"""

import os

_threads = os.environ.get("EAMLAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .adjoint import (  # noqa: E402
    AdjointPath,
    TerminalGrad,
    adjoint_backward_am,
    adjoint_backward_linear,
    adjoint_closed_eam,
    terminal_grad_am,
    terminal_grad_eam,
    tweedie_score,
)
from .metrics import EvalReport, evaluate_sampler, evaluate_samples, gaussian_w2  # noqa: E402
from .nn import AdamW, MlpVelocity, Tape, input_vjp, param_grad  # noqa: E402
from .rewards import RewardSpec, reward, reward_grad, time_weight  # noqa: E402
from .samplers import (  # noqa: E402
    ControlField,
    Trajectory,
    base_marginal_check,
    control_from_vft,
    noise_to_t,
    simulate_controlled_sde,
    simulate_ode,
)
from .schedule import DriftSchedule, TimeGrid, am_base_drift, sigma  # noqa: E402
from .training import (  # noqa: E402
    TrainConfig,
    TrainReport,
    expand_matching_target,
    pretrain_flow,
    train_am,
    train_eam,
)
from .worlds import (  # noqa: E402
    AnalyticVelocity,
    GaussianMoments,
    World,
    analytic_score,
    analytic_velocity,
    sample_data,
    tilted_target,
)

__version__ = "0.1.0"
