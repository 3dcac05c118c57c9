"""Hybrid reach-and-avoid reference governors with plant coupling."""
from .geometry import (
    IntegratorSettings,
    Obstacle,
    Scenario,
    ScenarioFormatError,
    StopSettings,
    Violation,
    load_scenario,
    save_scenario,
    validate_scenario,
)
from .hybrid_engine import (
    HybridSemanticsError,
    HybridSolution,
    HybridSystemDef,
    StepControl,
    StopRule,
    simulate,
)
from .plant import PlantBundle, simulate_closed_loop
from .virtual_ctrl import (
    VirtualControllerParams,
    mu_bar,
    mu_multi,
    simulate_virtual,
    virtual_hybrid_system,
)

__version__ = "0.1.0"

__all__ = [
    "IntegratorSettings",
    "Obstacle",
    "Scenario",
    "ScenarioFormatError",
    "StopSettings",
    "Violation",
    "load_scenario",
    "save_scenario",
    "validate_scenario",
    "HybridSemanticsError",
    "HybridSolution",
    "HybridSystemDef",
    "StepControl",
    "StopRule",
    "simulate",
    "PlantBundle",
    "simulate_closed_loop",
    "VirtualControllerParams",
    "mu_bar",
    "mu_multi",
    "simulate_virtual",
    "virtual_hybrid_system",
    "__version__",
]
