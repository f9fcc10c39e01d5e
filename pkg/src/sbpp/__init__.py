"""Stochastic bin packing of containers under Gaussian usage with a
per-machine chance constraint."""

from .gauss import Confidence, cluster_ucac, machine_ucac, normal_quantile
from .model import (BatchRequest, CapacityExhausted, ClusterState, Instance, InstanceError,
                    Placement, ServiceSpec, validate_instance)
from .solvers import ALGORITHMS, solve

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "BatchRequest", "CapacityExhausted", "ClusterState", "Confidence", "Instance",
    "InstanceError", "Placement", "ServiceSpec", "cluster_ucac", "machine_ucac", "normal_quantile",
    "solve", "validate_instance",
]
