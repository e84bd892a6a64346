"""promptwalk: bandit-driven prompt refinement for open-vocabulary detection,
simulated against a synthetic attribute world.

The library covers the full loop: seven visual-attribute operators build slot
prompts, a UCB bandit samples refinement trajectories with Dirichlet transition
tracking, a dual-head model distills them offline, and the trained model drives
step-by-step inference.
"""

from .core import (
    ActionId,
    BoundingBox,
    DetectionResult,
    ImageRecord,
    PromptState,
    TrajectoryStep,
    VisualContext,
    WeakUnit,
    gt_reward,
    iou,
    make_weak_unit,
)
from .actions import ActionConfig, Lexicon, LexiconEntry, apply_action
from .bandit import (
    ArmStats,
    DirichletCounts,
    Policy,
    StopThresholds,
    baseline_select,
    image_stop,
    make_policy,
    posterior,
    sample_image,
    traj_stop,
    ucb_select,
    update_dirichlet,
)
from .env import (
    MockDetector,
    SceneSpec,
    gen_scene,
    make_scene_spec,
    mock_detect,
    random_scene_specs,
    step_reward,
    uncertainty_reduction,
)
from .metrics import (
    action_entropy,
    frobenius_delta,
    pareto_win_rate,
    rm_loss_std,
    topk_at_stop,
)
from .model import (
    LossWeights,
    RmOutput,
    RmWeights,
    infer_select,
    load_weights,
    rm_forward,
    rm_grad,
    rm_loss,
    run_inference,
    save_weights,
    train_rm,
)
from .io import load_dataset, load_lexicon, load_ppm, load_scenes, save_dataset, save_scenes
from .raster import RasterImage, kmeans_hsv, rgb_to_hsv
from .cli import cli_main

__version__ = "0.1.0"

__all__ = [
    "ActionConfig",
    "ActionId",
    "ArmStats",
    "BoundingBox",
    "DetectionResult",
    "DirichletCounts",
    "ImageRecord",
    "Lexicon",
    "LexiconEntry",
    "LossWeights",
    "MockDetector",
    "Policy",
    "PromptState",
    "RasterImage",
    "RmOutput",
    "RmWeights",
    "SceneSpec",
    "StopThresholds",
    "TrajectoryStep",
    "VisualContext",
    "WeakUnit",
    "action_entropy",
    "apply_action",
    "baseline_select",
    "cli_main",
    "frobenius_delta",
    "gen_scene",
    "gt_reward",
    "image_stop",
    "infer_select",
    "iou",
    "kmeans_hsv",
    "load_dataset",
    "load_lexicon",
    "load_ppm",
    "load_scenes",
    "load_weights",
    "make_policy",
    "make_scene_spec",
    "make_weak_unit",
    "mock_detect",
    "pareto_win_rate",
    "posterior",
    "random_scene_specs",
    "rgb_to_hsv",
    "rm_forward",
    "rm_grad",
    "rm_loss",
    "rm_loss_std",
    "run_inference",
    "sample_image",
    "save_dataset",
    "save_scenes",
    "save_weights",
    "step_reward",
    "topk_at_stop",
    "traj_stop",
    "train_rm",
    "ucb_select",
    "uncertainty_reduction",
    "update_dirichlet",
]
