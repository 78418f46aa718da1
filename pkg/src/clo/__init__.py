"""Conformal Lyapunov optimization for multi-hop edge inference."""

from .config import ScenarioConfig, load_config, save_config, validate_config
from .crc import FrameFeedback, ThresholdState, reliability_bounds, update_thresholds
from .errors import ConfigError, ContractViolation, SolverLimitError
from .harness import certificate_check, latency_tracking, run_batch, tradeoff_sweep
from .lo import LossTable, VirtualQueues, build_loss_table, run_lo_algorithm
from .network import Network, build_network
from .optimizer import SlotProblem, solve_exact, solve_greedy
from .queueing import QueueState, SlotActions, apply_slot
from .simulation import RunMetrics, latency_virtual_queue_update, run_scenario

__all__ = [
    "ConfigError", "ContractViolation", "FrameFeedback", "LossTable", "Network", "QueueState",
    "RunMetrics", "ScenarioConfig", "SlotActions", "SlotProblem", "SolverLimitError",
    "ThresholdState", "VirtualQueues", "apply_slot", "build_loss_table", "build_network",
    "certificate_check", "latency_tracking", "latency_virtual_queue_update", "load_config",
    "reliability_bounds", "run_batch", "run_lo_algorithm", "run_scenario", "save_config",
    "solve_exact", "solve_greedy", "tradeoff_sweep", "update_thresholds", "validate_config",
]
__version__ = "0.1.0"
