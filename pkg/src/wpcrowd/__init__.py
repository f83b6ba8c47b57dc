"""Wireless-powered spatial crowdsourcing: power allocation and
strategyproof base-station deployment."""
from __future__ import annotations

from .deploy import (MechanismKind, med, msc, opt_deploy, performance_ratios,
                     strategyproofness_audit)
from .mdl import MdlModel, TrainSettings, init_model, load_model, save_model, train
from .model import (AllocationOutcome, DeploymentInstance, Rect, SystemConfig, Worker,
                    worst_case_distance)
from .stackelberg import SolverSettings, best_response, nash_equilibrium, stackelberg_equilibrium

__all__ = [
    "AllocationOutcome", "DeploymentInstance", "MdlModel", "MechanismKind", "Rect",
    "SolverSettings", "SystemConfig", "TrainSettings", "Worker", "best_response",
    "init_model", "load_model", "med", "msc", "nash_equilibrium", "opt_deploy",
    "performance_ratios", "save_model", "stackelberg_equilibrium", "strategyproofness_audit",
    "train", "worst_case_distance",
]
