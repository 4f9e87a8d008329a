"""Fair downlink frame allocation for a LEO satellite constellation."""

from .allocator import AllocationMatrix, distributed_allocate, global_allocate
from .config import ScenarioConfig, load_config
from .metrics import EpisodeReport, SlotMetrics
from .simrunner import build_scenario, inspect_slot, run_episode, sweep

__all__ = [
    "AllocationMatrix",
    "EpisodeReport",
    "ScenarioConfig",
    "SlotMetrics",
    "build_scenario",
    "distributed_allocate",
    "global_allocate",
    "inspect_slot",
    "load_config",
    "run_episode",
    "sweep",
]

__version__ = "0.1.0"
