"""Resilient state estimation for plants with sparse sensor attacks."""

from .core import BlockLayout, PartitionedVector, binom, combinations, complexity_report, project
from .dynamics import NoiseSpec, PlantModel, SignalSpec, Trajectory, simulate
from .identification import GroupPlan, InspectionConfig, Projection, identify_once, monitor_run
from .lineardecomp import LinearSystem, plan_from_linear
from .observers import ObserverBank, run_bank, synthesize_gain
from .reconstruction import ReconstructionPlan, fit_extension, reconstruct
from .redundancy import check_k_redundant, check_rank_criterion, estimate_M
from .sampling import Box, InfBall, VectorMap, build_grid, image_cloud

__version__ = "0.1.0"

__all__ = [
    "BlockLayout", "PartitionedVector", "binom", "combinations", "complexity_report", "project",
    "NoiseSpec", "PlantModel", "SignalSpec", "Trajectory", "simulate",
    "GroupPlan", "InspectionConfig", "Projection", "identify_once", "monitor_run",
    "LinearSystem", "plan_from_linear",
    "ObserverBank", "run_bank", "synthesize_gain",
    "ReconstructionPlan", "fit_extension", "reconstruct",
    "check_k_redundant", "check_rank_criterion", "estimate_M",
    "Box", "InfBall", "VectorMap", "build_grid", "image_cloud",
]
