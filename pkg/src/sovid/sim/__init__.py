"""Deterministic simulator and experiment harness."""

from .adversary import AdversaryModel, SybilBehavior, SybilRoster
from .core import SimClock, SimNetwork, SimScheduler, TrafficCapture
from .latency import load_matrix, median_link_latency, synthetic_matrix

__all__ = [
    "AdversaryModel",
    "SybilBehavior",
    "SybilRoster",
    "SimClock",
    "SimNetwork",
    "SimScheduler",
    "TrafficCapture",
    "load_matrix",
    "median_link_latency",
    "synthetic_matrix",
]
