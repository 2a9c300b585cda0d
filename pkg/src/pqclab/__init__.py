"""Planner cloning on a voxel gridworld: Penalized Q Cloning and baselines."""
from pqclab.env import GridSpec, Scene, Task, Terminal, sample_scene, step
from pqclab.kernels import BACKEND
from pqclab.planner import solve_scene

__version__ = "0.1.0"

__all__ = ["BACKEND", "GridSpec", "Scene", "Task", "Terminal", "sample_scene", "solve_scene", "step"]
