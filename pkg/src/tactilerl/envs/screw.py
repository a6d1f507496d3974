"""Screw tightening task with a hidden thread pitch.

A driver descends a fixed 0.15 mm per step while the agent chooses how far
to rotate the nut (one scalar action, up to 0.9 rad per step). The nut
advances ``dphi * pitch / (2 pi)`` mm per step, with the pitch hidden and
drawn fresh each episode from [1.5, 2.0] mm per turn. Whatever descent the
rotation fails to absorb accumulates as tangential shear on the fingertip
gel, clipped at +-0.8 mm.

The gel reports a synthetic optical-flow field whose downward components
spread out in proportion to the accumulated shear: vector i carries a fixed
slip factor u_i, evenly spaced over [0, 2] (mean exactly 1), so
``dy_i = shear * kappa * u_i + noise`` has mean ``shear * kappa`` while its
histogram entropy H(y) grows monotonically with |shear|. The reward is
-H(y): rotating to match the hidden pitch is the only way to keep the flow
quiet.

Observation layout (7 dims): [descent mm, rotation rad, tactile centroid x,
centroid y, total depth mass, H(x), H(y)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import tactile
from .base import EpisodeDoneError, StepResult


@dataclass
class ScrewConfig:
    max_steps: int = 40
    descent_per_step: float = 0.15
    rot_cap: float = 0.9
    pitch_min: float = 1.5
    pitch_max: float = 2.0
    shear_cap: float = 0.8
    kappa: float = 2.0
    noise_sigma: float = 0.15
    n_vectors: int = 64
    bins: int = 21
    flow_lo: float = -3.0
    flow_hi: float = 3.0
    sensor_rows: int = 24
    sensor_cols: int = 24
    ring_inner_mm: float = 8.0
    ring_outer_mm: float = 16.0
    ring_depth_mm: float = 1.0
    gel_mm: float = 48.0

    def validate(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 < self.pitch_min <= self.pitch_max:
            raise ValueError("need 0 < pitch_min <= pitch_max")
        if self.shear_cap <= 0 or self.kappa <= 0 or self.noise_sigma < 0:
            raise ValueError("shear_cap/kappa must be positive, noise_sigma >= 0")
        if self.n_vectors < 2 or self.bins < 2:
            raise ValueError("need at least 2 flow vectors and 2 bins")
        if not self.flow_hi > self.flow_lo:
            raise ValueError("empty flow histogram range")


class ScrewEnv:
    """Deterministic given (reset seed, action sequence)."""

    def __init__(self, cfg: ScrewConfig | None = None) -> None:
        self.cfg = cfg or ScrewConfig()
        self.cfg.validate()
        self.action_dim = 1
        self.observation_dim = 7
        self._rng: np.random.Generator | None = None
        self._done = True
        # fixed slip profile: evenly spaced in [0, 2], mean exactly 1
        n = self.cfg.n_vectors
        self._slip = 2.0 * np.arange(n) / (n - 1)
        self._patch = self._render_patch()
        feats = tactile.moments_features(self._patch)
        self._feats = (feats.cx, feats.cy, feats.total)
        side = int(round(math.sqrt(n)))
        if side * side == n:
            g = np.linspace(4.0, self.cfg.sensor_cols - 5.0, side)
            px, py = np.meshgrid(g, g)
            self._points = np.stack([px.reshape(-1), py.reshape(-1)], axis=1)
        else:
            self._points = np.stack(
                [np.linspace(4.0, self.cfg.sensor_cols - 5.0, n), np.full(n, 12.0)],
                axis=1,
            )

    def _render_patch(self) -> np.ndarray:
        c = self.cfg
        half = c.gel_mm / 2.0
        u = np.linspace(-half, half, c.sensor_cols)
        v = np.linspace(-half, half, c.sensor_rows)
        uu, vv = np.meshgrid(u, v)
        rho = np.sqrt(uu * uu + vv * vv)
        ring = (rho >= c.ring_inner_mm) & (rho <= c.ring_outer_mm)
        return np.where(ring, c.ring_depth_mm, 0.0)

    def _make_flow(self, shear: float) -> tactile.FlowField:
        c = self.cfg
        rng = self._rng
        dy = shear * c.kappa * self._slip + rng.normal(0.0, c.noise_sigma, c.n_vectors)
        dx = rng.normal(0.0, c.noise_sigma, c.n_vectors)
        vectors = np.stack([dx, dy], axis=1)
        return tactile.FlowField(
            self._points.copy(), vectors, np.zeros(c.n_vectors, dtype=int)
        )

    def _observe(self, flow: tactile.FlowField) -> tuple[np.ndarray, float, float]:
        c = self.cfg
        hx, hy = tactile.flow_entropy(flow, c.bins, (c.flow_lo, c.flow_hi))
        obs = np.array(
            [
                self._descent,
                self._rotation,
                self._feats[0],
                self._feats[1],
                self._feats[2],
                hx,
                hy,
            ]
        )
        return obs, hx, hy

    def reset(self, seed: int = 0) -> tuple[np.ndarray, dict]:
        c = self.cfg
        self._rng = np.random.default_rng(seed)
        self._pitch = float(self._rng.uniform(c.pitch_min, c.pitch_max))
        self._descent = 0.0
        self._rotation = 0.0
        self._shear = 0.0
        self._steps = 0
        self._done = False
        flow = self._make_flow(self._shear)
        obs, hx, hy = self._observe(flow)
        info = {
            "shear": self._shear,
            "pitch": self._pitch,
            "flow": flow,
            "depth": self._patch,
            "entropy_x": hx,
            "entropy_y": hy,
        }
        return obs, info

    def step(self, action: np.ndarray) -> StepResult:
        if self._done or self._rng is None:
            raise EpisodeDoneError("episode finished; call reset")
        a = np.asarray(action, dtype=float).reshape(self.action_dim)
        if not np.isfinite(a).all():
            raise ValueError(f"non-finite action: {a}")
        if (np.abs(a) > 1.0 + 1e-9).any():
            raise ValueError(f"action outside [-1, 1]: {a}")
        c = self.cfg
        dphi = float(np.clip(a[0], -1.0, 1.0)) * c.rot_cap
        self._descent += c.descent_per_step
        self._rotation += dphi
        advance = dphi * self._pitch / (2.0 * math.pi)
        self._shear = float(
            np.clip(self._shear + c.descent_per_step - advance, -c.shear_cap, c.shear_cap)
        )
        self._steps += 1
        flow = self._make_flow(self._shear)
        obs, hx, hy = self._observe(flow)
        reward = -hy
        self._done = self._steps >= c.max_steps
        info = {
            "shear": self._shear,
            "pitch": self._pitch,
            "advance": advance,
            "flow": flow,
            "depth": self._patch,
            "entropy_x": hx,
            "entropy_y": hy,
            "success": abs(self._shear) <= 0.2,
        }
        return StepResult(obs, float(reward), self._done, info)


def oracle_action(env: ScrewEnv) -> np.ndarray:
    """Pitch-matched rotation (privileged: reads the hidden pitch)."""
    if env._rng is None:
        raise RuntimeError("reset the env before querying the oracle")
    c = env.cfg
    a = 2.0 * math.pi * c.descent_per_step / (env._pitch * c.rot_cap)
    return np.array([min(a, 1.0)])
