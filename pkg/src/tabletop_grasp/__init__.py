"""PPO grasping on a simulated tabletop, with PCA pose estimation from masks."""
from .pose_estimation import AffineCalibration, ObjectPose, PixelMask, estimate_pose, pixel_to_world
from .ppo_agent import ActorCritic, PpoConfig, act_greedy, init_actor_critic, load_agent, save_agent, train
from .tabletop_env import EnvConfig, ScenarioSpec, TabletopEnv, Workspace

__version__ = "0.1.0"

__all__ = [
    "ActorCritic",
    "AffineCalibration",
    "EnvConfig",
    "ObjectPose",
    "PixelMask",
    "PpoConfig",
    "ScenarioSpec",
    "TabletopEnv",
    "Workspace",
    "act_greedy",
    "estimate_pose",
    "init_actor_critic",
    "load_agent",
    "pixel_to_world",
    "save_agent",
    "train",
]
