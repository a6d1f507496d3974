"""Run configuration: documented key=value files with strict parsing.

A config file is plain text, one ``key = value`` per line, ``#`` comments
and blank lines ignored. Every key has a registered default, type, unit and
description (see REGISTRY); unknown keys are a hard error so typos cannot
silently fall back to defaults. Omitted keys take their defaults, so an
empty file is a complete, runnable configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from .envs import ScrewConfig, SlopeConfig
from .planner import PlannerConfig


class ConfigError(ValueError):
    """Bad config file: unknown key, malformed line, or invalid value."""


@dataclass
class KeySpec:
    default: Any
    kind: str  # int | float | str | bool | ints
    unit: str
    doc: str
    choices: tuple[str, ...] | None = None


REGISTRY: dict[str, KeySpec] = {
    # run control
    "run.task": KeySpec("slope", "str", "-", "which task to run", ("slope", "screw")),
    "run.episodes": KeySpec(50, "int", "episodes", "training episodes per seed"),
    "run.warmup_episodes": KeySpec(5, "int", "episodes", "random-action episodes before planning starts"),
    "run.seeds": KeySpec((0, 1, 2), "ints", "-", "master seeds, comma separated"),
    "run.out_dir": KeySpec("runs/out", "str", "path", "output directory for metrics, logs, checkpoints"),
    "run.checkpoint_period": KeySpec(10, "int", "episodes", "checkpoint every N episodes (0: only final)"),
    "run.window": KeySpec(10, "int", "episodes", "sliding window for the smoothed return column"),
    "run.curiosity_off": KeySpec(False, "bool", "-", "ablation: plan with beta = 0"),
    "run.random_policy": KeySpec(False, "bool", "-", "ablation: uniform random actions, no planning"),
    "run.debug_depth": KeySpec(False, "bool", "-", "dump per-step tactile images as PGM files"),
    "run.trace_planner": KeySpec(False, "bool", "-", "log per-iteration planner traces"),
    # world model
    "model.members": KeySpec(5, "int", "-", "ensemble size"),
    "model.hidden": KeySpec((64, 64), "ints", "units", "hidden layer widths, comma separated"),
    "model.lr": KeySpec(1e-3, "float", "-", "Adam learning rate"),
    "model.pred_std": KeySpec(0.1, "float", "normalized std", "fixed predictive std emitted per member"),
    "model.epochs": KeySpec(8, "int", "epochs", "training epochs per fit"),
    "model.batch_size": KeySpec(64, "int", "samples", "minibatch size"),
    "model.capacity": KeySpec(50000, "int", "transitions", "replay buffer capacity"),
    # planner
    "planner.population": KeySpec(300, "int", "samples", "CEM candidates per iteration"),
    "planner.elites": KeySpec(30, "int", "samples", "elite count per iteration"),
    "planner.iterations": KeySpec(6, "int", "-", "CEM refinement iterations"),
    "planner.horizon": KeySpec(12, "int", "steps", "planning horizon"),
    "planner.beta": KeySpec(1.0, "float", "-", "curiosity weight on information gain"),
    "planner.alpha": KeySpec(0.1, "float", "-", "distribution smoothing toward the old mean"),
    "planner.std_floor": KeySpec(0.05, "float", "-", "lower bound on sampling std"),
    "planner.init_std": KeySpec(0.5, "float", "-", "initial sampling std"),
    "planner.warm_start": KeySpec(False, "bool", "-", "shift the previous plan to seed the next"),
    # slope task
    "slope.shape": KeySpec("ball", "str", "-", "object shape", ("ball", "box")),
    "slope.reward": KeySpec("dense", "str", "-", "reward mode", ("dense", "sparse")),
    "slope.max_steps": KeySpec(60, "int", "steps", "episode length cap"),
    "slope.dt": KeySpec(0.1, "float", "s", "control period"),
    "slope.start_x": KeySpec(0.15, "float", "m", "object start x"),
    "slope.start_y": KeySpec(0.14, "float", "m", "object start y"),
    "slope.start_jitter": KeySpec(0.02, "float", "m", "uniform start jitter per axis"),
    "slope.goal_x": KeySpec(0.15, "float", "m", "goal centre x"),
    "slope.goal_y": KeySpec(0.26, "float", "m", "goal centre y"),
    "slope.goal_radius": KeySpec(0.05, "float", "m", "goal region radius"),
    "slope.g_eff": KeySpec(0.35, "float", "m/s^2", "effective down-slope gravity"),
    "slope.friction": KeySpec(0.0005, "float", "m", "per-step friction allowance against sliding"),
    "slope.move_cap": KeySpec(0.02, "float", "m", "pusher forward motion per step at full action"),
    "slope.lat_cap": KeySpec(0.02, "float", "m", "pusher lateral motion per step at full action"),
    "slope.rot_cap": KeySpec(0.1, "float", "rad", "pusher rotation per step at full action"),
    "slope.rest_indent": KeySpec(0.001, "float", "m", "contact indentation kept after resolution"),
    "slope.indent_cap": KeySpec(0.0015, "float", "m", "hard cap on rendered indentation"),
    "slope.sensor_rows": KeySpec(24, "int", "px", "tactile image rows"),
    "slope.sensor_cols": KeySpec(24, "int", "px", "tactile image columns"),
    # screw task
    "screw.max_steps": KeySpec(40, "int", "steps", "episode length"),
    "screw.descent_per_step": KeySpec(0.15, "float", "mm", "driver descent per step"),
    "screw.rot_cap": KeySpec(0.9, "float", "rad", "max rotation per step"),
    "screw.pitch_min": KeySpec(1.5, "float", "mm/turn", "hidden pitch lower bound"),
    "screw.pitch_max": KeySpec(2.0, "float", "mm/turn", "hidden pitch upper bound"),
    "screw.shear_cap": KeySpec(0.8, "float", "mm", "accumulated shear clip"),
    "screw.kappa": KeySpec(2.0, "float", "px/mm", "shear to flow gain"),
    "screw.noise_sigma": KeySpec(0.15, "float", "px", "flow noise std"),
    "screw.n_vectors": KeySpec(64, "int", "-", "flow vectors per frame"),
    "screw.bins": KeySpec(21, "int", "-", "entropy histogram bins"),
    "screw.flow_lo": KeySpec(-3.0, "float", "px", "histogram lower edge"),
    "screw.flow_hi": KeySpec(3.0, "float", "px", "histogram upper edge"),
}


def _parse_value(key: str, spec: KeySpec, raw: str) -> Any:
    # a hash preceded by whitespace starts a trailing comment; a bare hash
    # stays part of the value so paths like "runs/x#1" survive
    for i, ch in enumerate(raw):
        if ch == "#" and i > 0 and raw[i - 1] in " \t":
            raw = raw[:i]
            break
    raw = raw.strip()
    try:
        if spec.kind == "int":
            return int(raw)
        if spec.kind == "float":
            return float(raw)
        if spec.kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if spec.kind == "ints":
            return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        value = raw
    except ValueError as exc:
        raise ConfigError(f"key {key}: cannot parse {raw!r} as {spec.kind}") from exc
    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(f"key {key}: {value!r} not one of {spec.choices}")
    return value


def default_values() -> dict[str, Any]:
    return {key: spec.default for key, spec in REGISTRY.items()}


def parse_config_text(text: str) -> dict[str, Any]:
    values = default_values()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in REGISTRY:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        spec = REGISTRY[key]
        value = _parse_value(key, spec, raw)
        if spec.choices is not None and value not in spec.choices:
            raise ConfigError(f"line {lineno}: key {key}: {value!r} not one of {spec.choices}")
        values[key] = value
    return values


def parse_config_file(path) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


@dataclass
class RunConfig:
    """Everything a training run needs, grouped by subsystem."""

    task: str = "slope"
    episodes: int = 50
    warmup_episodes: int = 5
    seeds: tuple[int, ...] = (0, 1, 2)
    out_dir: str = "runs/out"
    checkpoint_period: int = 10
    window: int = 10
    curiosity_off: bool = False
    random_policy: bool = False
    debug_depth: bool = False
    trace_planner: bool = False
    members: int = 5
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-3
    pred_std: float = 0.1
    epochs: int = 8
    batch_size: int = 64
    capacity: int = 50000
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    slope: SlopeConfig = field(default_factory=SlopeConfig)
    screw: ScrewConfig = field(default_factory=ScrewConfig)

    def validate(self) -> None:
        if self.task not in ("slope", "screw"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.episodes < 0 or self.warmup_episodes < 0:
            raise ConfigError("episode counts must be >= 0")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.checkpoint_period < 0:
            raise ConfigError("checkpoint_period must be >= 0")
        if self.members < 2:
            raise ConfigError("model.members must be >= 2")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("model.hidden must be positive widths")
        if self.epochs < 0 or self.batch_size < 1 or self.capacity < 1:
            raise ConfigError("bad model training settings")
        if not self.pred_std > 0.0:
            raise ConfigError("model.pred_std must be > 0")
        if self.curiosity_off and self.random_policy:
            raise ConfigError("choose at most one ablation")
        try:
            self.planner.validate()
            self.slope.validate()
            self.screw.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def build_run_config(values: dict[str, Any]) -> RunConfig:
    """Assemble a validated RunConfig from a flat key->value mapping."""
    planner = PlannerConfig(
        population=values["planner.population"],
        elites=values["planner.elites"],
        iterations=values["planner.iterations"],
        horizon=values["planner.horizon"],
        beta=values["planner.beta"],
        alpha=values["planner.alpha"],
        std_floor=values["planner.std_floor"],
        init_std=values["planner.init_std"],
        warm_start=values["planner.warm_start"],
    )
    slope = SlopeConfig(
        shape=values["slope.shape"],
        reward=values["slope.reward"],
        max_steps=values["slope.max_steps"],
        dt=values["slope.dt"],
        start_x=values["slope.start_x"],
        start_y=values["slope.start_y"],
        start_jitter=values["slope.start_jitter"],
        goal_x=values["slope.goal_x"],
        goal_y=values["slope.goal_y"],
        goal_radius=values["slope.goal_radius"],
        g_eff=values["slope.g_eff"],
        friction=values["slope.friction"],
        move_cap=values["slope.move_cap"],
        lat_cap=values["slope.lat_cap"],
        rot_cap=values["slope.rot_cap"],
        rest_indent=values["slope.rest_indent"],
        indent_cap=values["slope.indent_cap"],
        sensor_rows=values["slope.sensor_rows"],
        sensor_cols=values["slope.sensor_cols"],
    )
    screw = ScrewConfig(
        max_steps=values["screw.max_steps"],
        descent_per_step=values["screw.descent_per_step"],
        rot_cap=values["screw.rot_cap"],
        pitch_min=values["screw.pitch_min"],
        pitch_max=values["screw.pitch_max"],
        shear_cap=values["screw.shear_cap"],
        kappa=values["screw.kappa"],
        noise_sigma=values["screw.noise_sigma"],
        n_vectors=values["screw.n_vectors"],
        bins=values["screw.bins"],
        flow_lo=values["screw.flow_lo"],
        flow_hi=values["screw.flow_hi"],
    )
    cfg = RunConfig(
        task=values["run.task"],
        episodes=values["run.episodes"],
        warmup_episodes=values["run.warmup_episodes"],
        seeds=tuple(values["run.seeds"]),
        out_dir=values["run.out_dir"],
        checkpoint_period=values["run.checkpoint_period"],
        window=values["run.window"],
        curiosity_off=values["run.curiosity_off"],
        random_policy=values["run.random_policy"],
        debug_depth=values["run.debug_depth"],
        trace_planner=values["run.trace_planner"],
        members=values["model.members"],
        hidden=tuple(values["model.hidden"]),
        lr=values["model.lr"],
        pred_std=values["model.pred_std"],
        epochs=values["model.epochs"],
        batch_size=values["model.batch_size"],
        capacity=values["model.capacity"],
        planner=planner,
        slope=slope,
        screw=screw,
    )
    cfg.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    return build_run_config(parse_config_file(path))


def make_env(cfg: RunConfig):
    from .envs import ScrewEnv, SlopePushEnv

    if cfg.task == "screw":
        return ScrewEnv(replace(cfg.screw))
    return SlopePushEnv(replace(cfg.slope))


def env_config_doc(cfg: RunConfig) -> dict:
    """Flat echo of the env-relevant keys, embedded in checkpoints."""
    doc: dict[str, Any] = {"task": cfg.task}
    prefix = f"{cfg.task}."
    for key in REGISTRY:
        if key.startswith(prefix):
            name = key.split(".", 1)[1]
            group = cfg.slope if cfg.task == "slope" else cfg.screw
            doc[key] = getattr(group, name)
    return doc


def apply_env_doc(values: dict[str, Any], doc: dict) -> dict[str, Any]:
    """Overlay a checkpoint's env echo onto a value mapping."""
    out = dict(values)
    out["run.task"] = doc["task"]
    for key, value in doc.items():
        if key == "task":
            continue
        if key not in REGISTRY:
            raise ConfigError(f"checkpoint env key {key!r} is not recognised")
        out[key] = tuple(value) if REGISTRY[key].kind == "ints" else value
    return out
