"""Position-based fluids with per-particle adaptive solver iterations."""

from .collision import Box, Cone, HalfSpace, SdfScene, Sphere
from .lod import LodModelConfig, blend_lod, compute_levels, lod_dtc, lod_dtvs
from .particles import IterationRange, ParticleSet, active_set, finished_set, is_active
from .scenarios import ScenarioSpec, build_scenario, spawn_block
from .solver import FrameStats, SolverConfig, step_frame
from .splat import Camera, DepthBuffer, splat

__version__ = "0.1.0"

__all__ = [
    "Box", "Cone", "HalfSpace", "SdfScene", "Sphere",
    "LodModelConfig", "blend_lod", "compute_levels", "lod_dtc", "lod_dtvs",
    "IterationRange", "ParticleSet", "active_set", "finished_set", "is_active",
    "ScenarioSpec", "build_scenario", "spawn_block",
    "FrameStats", "SolverConfig", "step_frame",
    "Camera", "DepthBuffer", "splat",
]
