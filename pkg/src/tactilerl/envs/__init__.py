"""Simulated tactile manipulation tasks."""

from .base import EpisodeDoneError, StepResult, render_contact_depth
from .screw import ScrewConfig, ScrewEnv
from .slope import SlopeConfig, SlopePushEnv

__all__ = [
    "EpisodeDoneError",
    "StepResult",
    "render_contact_depth",
    "ScrewConfig",
    "ScrewEnv",
    "SlopeConfig",
    "SlopePushEnv",
]
