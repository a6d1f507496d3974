"""Quasi-static slope pushing task.

A flat pusher moves on an inclined plane and has to shepherd an object (ball
or box) into a goal region up the slope. Gravity drags the object down-slope
a fixed distance each step; the pusher blocks and displaces it through a
soft contact that keeps a small rest indentation, which is what the tactile
image shows.

Geometry is metres on the plane, +y pointing up-slope. Steps are ordered:
pusher motion, gravity slide, contact resolution, wall clamping; the tactile
image is rendered from the final poses. With no contact and zero action the
object slides down by exactly ``g_eff * dt^2 - friction``.

Observation layout (ball, 13 dims):
    [0:3]   pusher x, y, heading
    [3:6]   pusher velocities (dx/dt, dy/dt, dheading/dt)
    [6:8]   object x, y
    [8:10]  object velocities
    [10:13] tactile centroid x (px), centroid y (px), total depth mass
Box adds object yaw after index 7 and yaw rate after the object velocities
(15 dims): [0:3] pusher pose, [3:6] pusher vel, [6:9] object x, y, yaw,
[9:12] object velocities, [12:15] tactile features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import tactile
from .base import EpisodeDoneError, StepResult, render_contact_depth


@dataclass
class SlopeConfig:
    shape: str = "ball"
    reward: str = "dense"
    max_steps: int = 60
    dt: float = 0.1
    # arena rectangle [0, width] x [0, length], metres
    arena_w: float = 0.30
    arena_l: float = 0.40
    start_x: float = 0.15
    start_y: float = 0.14
    start_jitter: float = 0.02
    goal_x: float = 0.15
    goal_y: float = 0.26
    goal_radius: float = 0.05
    standoff: float = 0.05
    # per-step action caps: forward (m), lateral (m), rotation (rad)
    move_cap: float = 0.02
    lat_cap: float = 0.02
    rot_cap: float = 0.1
    # gravity slide = g_eff * dt^2 - friction, clamped at zero
    g_eff: float = 0.35
    friction: float = 0.0005
    ball_radius: float = 0.025
    box_half: float = 0.025
    face_half: float = 0.03
    yaw_gain: float = 5.0
    rest_indent: float = 0.001
    indent_cap: float = 0.0015
    sensor_rows: int = 24
    sensor_cols: int = 24

    def validate(self) -> None:
        if self.shape not in ("ball", "box"):
            raise ValueError(f"shape must be ball or box, got {self.shape!r}")
        if self.reward not in ("dense", "sparse"):
            raise ValueError(f"reward must be dense or sparse, got {self.reward!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.goal_radius <= 0 or self.dt <= 0:
            raise ValueError("goal_radius and dt must be positive")
        start_goal = math.hypot(self.start_x - self.goal_x, self.start_y - self.goal_y)
        if start_goal - math.sqrt(2.0) * self.start_jitter <= self.goal_radius:
            raise ValueError("start jitter box overlaps the goal region")


class SlopePushEnv:
    """Deterministic given (reset seed, action sequence)."""

    def __init__(self, cfg: SlopeConfig | None = None) -> None:
        self.cfg = cfg or SlopeConfig()
        self.cfg.validate()
        self.action_dim = 3
        self.observation_dim = 15 if self.cfg.shape == "box" else 13
        self._state: dict | None = None
        self._done = True

    @property
    def slide_per_step(self) -> float:
        c = self.cfg
        return max(0.0, c.g_eff * c.dt * c.dt - c.friction)

    @property
    def object_radius(self) -> float:
        return self.cfg.ball_radius if self.cfg.shape == "ball" else self.cfg.box_half

    def reset(self, seed: int = 0) -> tuple[np.ndarray, dict]:
        c = self.cfg
        rng = np.random.default_rng(seed)
        ox = c.start_x + rng.uniform(-c.start_jitter, c.start_jitter)
        oy = c.start_y + rng.uniform(-c.start_jitter, c.start_jitter)
        self._state = {
            "px": ox,
            "py": oy - c.standoff,
            "heading": math.pi / 2.0,
            "pvel": np.zeros(3),
            "ox": ox,
            "oy": oy,
            "ovel": np.zeros(2),
            "yaw": 0.0,
            "yaw_rate": 0.0,
            "steps": 0,
        }
        self._done = False
        obs, info = self._observe()
        return obs, info

    def _contact_geometry(self) -> tuple[float, float, float]:
        """(overlap, lateral offset, relative yaw) of object against the face."""
        s = self._state
        c = self.cfg
        fwd = np.array([math.cos(s["heading"]), math.sin(s["heading"])])
        left = np.array([-math.sin(s["heading"]), math.cos(s["heading"])])
        rel = np.array([s["ox"] - s["px"], s["oy"] - s["py"]])
        d_fwd = float(rel @ fwd)
        d_lat = float(rel @ left)
        rel_yaw = s["yaw"] - (s["heading"] - math.pi / 2.0)
        if abs(d_lat) > c.face_half or d_fwd <= 0.0:
            return 0.0, d_lat, rel_yaw
        if c.shape == "ball":
            support = c.ball_radius
        else:
            support = c.box_half * (abs(math.cos(rel_yaw)) + abs(math.sin(rel_yaw)))
        return max(0.0, support - d_fwd), d_lat, rel_yaw

    def _observe(self) -> tuple[np.ndarray, dict]:
        s = self._state
        c = self.cfg
        overlap, d_lat, rel_yaw = self._contact_geometry()
        pen_mm = overlap * 1000.0
        depth = render_contact_depth(
            c.shape,
            pen_mm,
            offset_mm=d_lat * 1000.0,
            yaw=rel_yaw,
            resolution=(c.sensor_rows, c.sensor_cols),
            cap_mm=c.indent_cap * 1000.0,
            ball_radius_mm=c.ball_radius * 1000.0,
            box_half_mm=c.box_half * 1000.0,
        )
        feats = tactile.moments_features(depth)
        if c.shape == "ball":
            obs = np.array(
                [
                    s["px"], s["py"], s["heading"],
                    *s["pvel"],
                    s["ox"], s["oy"],
                    *s["ovel"],
                    feats.cx, feats.cy, feats.total,
                ]
            )
        else:
            obs = np.array(
                [
                    s["px"], s["py"], s["heading"],
                    *s["pvel"],
                    s["ox"], s["oy"], s["yaw"],
                    *s["ovel"], s["yaw_rate"],
                    feats.cx, feats.cy, feats.total,
                ]
            )
        dist = math.hypot(s["ox"] - c.goal_x, s["oy"] - c.goal_y)
        info = {
            "goal_distance": dist,
            "in_goal": dist <= c.goal_radius,
            "contact": overlap > 0.0,
            "depth": depth,
            "object": (s["ox"], s["oy"], s["yaw"]),
            "pusher": (s["px"], s["py"]),
        }
        return obs, info

    def step(self, action: np.ndarray) -> StepResult:
        if self._done or self._state is None:
            raise EpisodeDoneError("episode finished; call reset")
        a = np.asarray(action, dtype=float).reshape(self.action_dim)
        if not np.isfinite(a).all():
            raise ValueError(f"non-finite action: {a}")
        if (np.abs(a) > 1.0 + 1e-9).any():
            raise ValueError(f"action outside [-1, 1]: {a}")
        a = np.clip(a, -1.0, 1.0)
        s = self._state
        c = self.cfg
        prev = (s["px"], s["py"], s["heading"], s["ox"], s["oy"], s["yaw"])

        # 1. pusher motion
        s["heading"] += a[2] * c.rot_cap
        fwd = np.array([math.cos(s["heading"]), math.sin(s["heading"])])
        left = np.array([-math.sin(s["heading"]), math.cos(s["heading"])])
        move = a[0] * c.move_cap * fwd + a[1] * c.lat_cap * left
        s["px"] = float(np.clip(s["px"] + move[0], 0.0, c.arena_w))
        s["py"] = float(np.clip(s["py"] + move[1], 0.0, c.arena_l))

        # 2. gravity slide down-slope
        s["oy"] -= self.slide_per_step

        # 3. soft contact: push the object out along the face normal until
        #    only the rest indentation remains; boxes pick up a yaw kick
        #    proportional to how far off-centre they sit on the face
        overlap, d_lat, _ = self._contact_geometry()
        if overlap > c.rest_indent:
            pushout = overlap - c.rest_indent
            s["ox"] += pushout * fwd[0]
            s["oy"] += pushout * fwd[1]
            if c.shape == "box":
                s["yaw"] += -c.yaw_gain * d_lat * pushout

        # 4. arena walls
        r = self.object_radius
        s["ox"] = float(np.clip(s["ox"], r, c.arena_w - r))
        s["oy"] = float(np.clip(s["oy"], r, c.arena_l - r))

        # 5. finite-difference velocities
        s["pvel"] = np.array(
            [
                (s["px"] - prev[0]) / c.dt,
                (s["py"] - prev[1]) / c.dt,
                (s["heading"] - prev[2]) / c.dt,
            ]
        )
        s["ovel"] = np.array([(s["ox"] - prev[3]) / c.dt, (s["oy"] - prev[4]) / c.dt])
        s["yaw_rate"] = (s["yaw"] - prev[5]) / c.dt

        s["steps"] += 1
        obs, info = self._observe()
        dist = info["goal_distance"]
        in_goal = info["in_goal"]
        if c.reward == "dense":
            reward = -dist + (1.0 if in_goal else 0.0)
        else:
            reward = 1.0 if in_goal else 0.0
        self._done = bool(in_goal or s["steps"] >= c.max_steps)
        info["success"] = bool(in_goal)
        return StepResult(obs, float(reward), self._done, info)


def oracle_action(env: SlopePushEnv) -> np.ndarray:
    """Scripted straight-line pusher: align behind the object, push up-slope.

    Uses privileged state; serves as the dense-task reference policy.
    """
    s = env._state
    c = env.cfg
    if s is None:
        raise RuntimeError("reset the env before querying the oracle")
    # positive lateral action moves along (-sin h, cos h); at heading pi/2
    # that is -x, so closing a +x error needs a negative action
    a_lat = np.clip((s["px"] - s["ox"]) / c.lat_cap, -1.0, 1.0)
    a_rot = np.clip((math.pi / 2.0 - s["heading"]) / c.rot_cap, -1.0, 1.0)
    return np.array([1.0, a_lat, a_rot])
