"""Cycle-accurate simulator of the SF-MMCN server-flow CNN accelerator."""

from .accel import AcceleratorConfig, CycleLog, baseline_run, memory_traffic, run_network
from .golden import Tensor
from .metrics import RunReport, build_report, sweep_units
from .netdesc import NetworkGraph, expand_blocks, parse_network, run_graph_golden, validate_graph
from .weights import WeightStore

__version__ = "0.1.0"
