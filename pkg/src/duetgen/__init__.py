"""Training-free trajectory guidance for two-agent motion diffusion.

A pace controller steers the leader's root path during a mid-denoising
window; a kinematic synchronization adapter keeps the follower collision
free and dynamically distinct. Ships with desk-scale denoisers (an exact
analytic Gaussian prior and a trainable MLP), procedural scenario data,
and evaluation metrics.
"""

from .adapter import (
    AdapterConfig,
    adapt_follower,
    adapter_hook,
    joint_loss,
    separate_collision,
    velocity_loss,
)
from .collision import CapsuleSet, detect_conflict, pose_to_capsules
from .denoisers import (
    AnalyticGaussianPrior,
    MlpDenoiser,
    MlpTrainConfig,
    analytic_predict_x0,
    load_denoiser,
    save_denoiser,
    train_mlp_denoiser,
)
from .diffusion import (
    DiffusionState,
    NoiseSchedule,
    ddim_step,
    ddim_subsequence,
    forward_noise,
    make_schedule,
    posterior_step,
    sample,
)
from .metrics import (
    diversity,
    final_velocity_similarity,
    penetration_frames,
    smoothness,
    trajectory_rmse,
)
from .motion import (
    ConditionLabel,
    MotionSequence,
    SkeletonSpec,
    Trajectory,
    TwoAgentMotion,
    default_skeleton,
    load_motion,
    load_trajectory,
    project_root_trajectory,
    save_motion,
    save_trajectory,
    swap_agents,
)
from .pace import (
    GuidanceWindow,
    PaceConfig,
    guided_sample,
    in_window,
    inject_trajectory,
    refine_x0,
)
from .scenarios import (
    Dataset,
    ScenarioKind,
    build_dataset,
    generate_scenario,
    generate_trajectory_condition,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "AnalyticGaussianPrior", "CapsuleSet", "ConditionLabel",
    "Dataset", "DiffusionState", "GuidanceWindow", "MlpDenoiser",
    "MlpTrainConfig", "MotionSequence", "NoiseSchedule", "PaceConfig",
    "ScenarioKind", "SkeletonSpec", "Trajectory", "TwoAgentMotion",
    "adapt_follower", "adapter_hook", "analytic_predict_x0", "build_dataset",
    "ddim_step", "ddim_subsequence", "default_skeleton", "detect_conflict",
    "diversity", "final_velocity_similarity", "forward_noise",
    "generate_scenario", "generate_trajectory_condition", "guided_sample",
    "in_window", "inject_trajectory", "joint_loss", "load_denoiser",
    "load_motion", "load_trajectory", "make_schedule", "penetration_frames",
    "pose_to_capsules", "posterior_step", "project_root_trajectory",
    "refine_x0", "sample", "save_denoiser", "save_motion", "save_trajectory",
    "separate_collision", "smoothness", "swap_agents", "train_mlp_denoiser",
    "trajectory_rmse", "velocity_loss",
]
