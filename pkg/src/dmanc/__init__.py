"""Simulation and analysis toolkit for distributed multichannel active noise control."""

from .analysis import (
    char_poly_stable,
    complexity,
    critical_mu,
    delay_factor,
    estimate_wiener,
    nse,
    nse_trace,
    step_bounds,
)
from .compensation import CompensationBank, CompTrainConfig, train_all, train_compensation
from .controllers import (
    DecentralizedFxlms,
    DiffusionFxlms,
    McFxlms,
    MgdNetwork,
    MgdNode,
    MgdNodeNetwork,
    asss_mu,
    ring_topology,
)
from .errors import DmancError
from .experiments import RunRecord, Scenario, compare, run, sweep
from .network import ConstantDelay, NetworkBus, SinusoidDelay, StepDelay
from .scene import AcousticScene, Plant, SceneRecipe, load_paths, save_paths, synthesize_scene

__version__ = "0.1.0"

__all__ = [
    "AcousticScene", "CompTrainConfig", "CompensationBank", "ConstantDelay", "DecentralizedFxlms",
    "DiffusionFxlms", "DmancError", "McFxlms", "MgdNetwork", "MgdNode", "MgdNodeNetwork",
    "NetworkBus", "Plant", "RunRecord", "Scenario", "SceneRecipe", "SinusoidDelay", "StepDelay",
    "asss_mu", "char_poly_stable", "compare", "complexity", "critical_mu", "delay_factor",
    "estimate_wiener", "load_paths", "nse", "nse_trace", "ring_topology", "run", "save_paths",
    "step_bounds", "sweep", "synthesize_scene", "train_all", "train_compensation",
]
