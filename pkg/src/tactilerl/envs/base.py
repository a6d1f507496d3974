"""Shared pieces of the simulated tasks: step result, contact rendering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EpisodeDoneError(RuntimeError):
    """step() was called on a finished episode; reset first."""


@dataclass
class StepResult:
    """One environment step: observation, reward, termination, diagnostics.

    ``info`` carries privileged quantities (true distances, true shear,
    contact flags) and the rendered tactile arrays. Only the observation is
    meant for the agent.
    """

    obs: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def render_contact_depth(
    shape: str,
    penetration_mm: float,
    offset_mm: float = 0.0,
    yaw: float = 0.0,
    resolution: tuple[int, int] = (24, 24),
    gel_mm: tuple[float, float] = (60.0, 45.0),
    ball_radius_mm: float = 25.0,
    box_half_mm: float = 25.0,
    box_band_mm: float = 12.0,
    cap_mm: float = 1.5,
) -> np.ndarray:
    """Analytic indentation image of an object pressed into a flat gel.

    The gel plane is sampled on a (rows, cols) grid spanning ``gel_mm``
    (u across the face = columns, v along it = rows), centred on the sensor.
    ``penetration_mm`` is clipped to [0, cap_mm]; zero or negative renders an
    empty image.

    * ``ball``: spherical cap, height sqrt(r^2 - rho^2) - (r - p) where rho
      is the in-plane distance to the ball centre at (offset, 0).
    * ``box``: flat plateau of height p over the projected face: |u - offset|
      up to half the box width scaled by max(|cos yaw|, 0.2), |v| up to
      ``box_band_mm``.
    """
    rows, cols = resolution
    if rows < 8 or cols < 8:
        raise ValueError(f"resolution must be at least 8x8, got {resolution}")
    if shape not in ("ball", "box"):
        raise ValueError(f"unknown shape {shape!r}")
    p = min(max(float(penetration_mm), 0.0), cap_mm)
    if p <= 0.0:
        return np.zeros((rows, cols))
    u = np.linspace(-gel_mm[0] / 2.0, gel_mm[0] / 2.0, cols)
    v = np.linspace(-gel_mm[1] / 2.0, gel_mm[1] / 2.0, rows)
    uu, vv = np.meshgrid(u, v)
    if shape == "ball":
        r = ball_radius_mm
        rho2 = (uu - offset_mm) ** 2 + vv**2
        dome = np.sqrt(np.maximum(r * r - rho2, 0.0)) - (r - p)
        return np.maximum(dome, 0.0)
    half_w = box_half_mm * max(abs(np.cos(yaw)), 0.2)
    inside = (np.abs(uu - offset_mm) <= half_w) & (np.abs(vv) <= box_band_mm)
    return np.where(inside, p, 0.0)
