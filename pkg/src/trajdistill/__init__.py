"""Desk-scale lab for trajectory-backward consistency distillation in 2D."""

__version__ = "0.1.0"

from .engine import Dual, ParamStore, Var, finite_diff_directional, grad, jvp
from .schedules import (
    ScheduleFamily,
    alpha_sigma,
    consistency_output,
    equivalent_noise,
    forward_noise,
    ode_rhs,
    t_fm_from_trig,
    t_trig_from_fm,
    wrap_fm_as_trigflow,
    x_fm_from_trig,
)
from .counters import ResourceCounters
from .network import (
    AdaptiveWeightConfig,
    VelocityNetConfig,
    condition_embed,
    init_student_from_teacher,
    init_velocity_net,
    init_weight_head,
    velocity_forward,
    velocity_forward_jvp,
    weight_forward,
)
from .teacher import (
    Dataset2D,
    TeacherConfig,
    analytic_velocity_pointmass,
    sample_data,
    train_teacher,
    trigflow_target,
)
from .trajectory import (
    FilterConfig,
    TimestepScheme,
    Trajectory,
    TrajectoryBatch,
    brightness_filter,
    diffusion_space_batch,
    flow_euler_reference,
    partitioned_sample,
    rollout,
    sample_trajectory_times,
)
from .distill import (
    DistillConfig,
    RSchedule,
    distill_step,
    normalize_tangent,
    r_value,
    run_distillation,
    scm_loss,
    tangent_g,
)
from .evaluate import (
    ablation_harness,
    equivalent_noise_curve,
    multi_step_sample,
    one_step_sample,
    sliced_wasserstein,
)
