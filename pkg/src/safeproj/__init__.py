"""safeproj: robust controller synthesis and neural policies with
certified safe-action-set projections on differential-inclusion models."""

from .conic import ConeProgram, ConeSettings, ConeSpec, solve_cone_program
from .envs import (
    EnvInstance,
    cartpole_env,
    fit_norm_bounds,
    find_safe_init_region,
    gen_synthetic_hinf,
    gen_synthetic_nldi,
    gen_synthetic_pldi,
    microgrid_from_config,
    quadrotor_env,
    sample_initial_state,
    step,
)
from .policy import Mlp, RobustPolicy, load_policy, policy_backward, policy_forward, save_policy
from .projection import (
    ProjectionSettings,
    project_halfspace,
    project_polyhedron_forward,
    project_soc_forward,
    soc_cone_point_projection,
)
from .safesets import (
    Halfspace,
    Polyhedron,
    SocConstraint,
    hinf_soc,
    nldi0_halfspace,
    nldi_safe_set,
    pldi_polyhedron,
)
from .synthesis import (
    HinfSystem,
    InfeasibleError,
    NldiSystem,
    PldiSystem,
    RobustCertificate,
    certificate_residual,
    pldi_to_nldi,
    solve_lqr_nonrobust,
    synth_hinf,
    synth_nldi,
    synth_pldi,
)
from .training import (
    AdversaryConfig,
    TrainConfig,
    evaluate,
    lyapunov_monitor,
    make_adversary,
    rollout,
    train_mbp,
)

__version__ = "0.1.0"
