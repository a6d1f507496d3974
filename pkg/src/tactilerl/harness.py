"""Training and evaluation harness.

``train_run`` drives the full loop per master seed: warmup episodes with
uniform random actions, then plan-act-store with the CEM planner, a model
fit after every episode, one metrics row per episode, periodic checkpoints.
``eval_run`` rolls out a frozen checkpoint. ``plot_metrics`` renders the
metrics file as an SVG learning curve.

Determinism: every random draw comes from a keyed substream of the master
seed (see streams.py), so two runs of the same config produce byte-identical
metrics files. Wall-clock timings are real and therefore live in a sidecar
``timings.csv``, never in ``metrics.csv``.

Output layout under ``run.out_dir``::

    metrics.csv                     one row per (seed, episode), fixed columns
    timings.csv                     wall-clock seconds per episode
    episodes/seed<S>/ep<NNNN>.jsonl per-step records
    checkpoints/seed<S>_ep<N>.json  periodic checkpoints (+ .buffer.jsonl)
    checkpoints/seed<S>_final.json  end-of-training checkpoint
    trace/seed<S>_ep<N>.jsonl       planner traces (when run.trace_planner)
    depth/seed<S>/ep<N>_t<T>.pgm    tactile dumps (when run.debug_depth)
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import nets, streams, tactile
from .config import (
    ConfigError,
    RunConfig,
    apply_env_doc,
    build_run_config,
    default_values,
    env_config_doc,
    make_env,
)
from .planner import PlannerConfig, cem_plan, shift_warm_start
from .worldmodel import (
    EnsembleDynamics,
    InsufficientDataError,
    ReplayBuffer,
    RewardHead,
    Transition,
)

CHECKPOINT_FORMAT = "tactilerl-checkpoint-1"

METRICS_COLUMNS = (
    "seed",
    "episode",
    "steps",
    "ep_return",
    "window_return",
    "success",
    "mean_extrinsic",
    "mean_curiosity",
    "val_mse",
    "model_nll",
    "reward_nll",
    "buffer_size",
    "halted",
)


class DimensionMismatchError(RuntimeError):
    """Checkpoint and environment disagree on observation dimensions."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _scalar_info(info: dict) -> dict:
    out = {}
    for key, value in info.items():
        if isinstance(value, bool):
            out[key] = value
        elif isinstance(value, (int, float, np.integer, np.floating)):
            out[key] = float(value)
    return out


@dataclass
class MetricsRow:
    seed: int
    episode: int
    steps: int
    ep_return: float
    window_return: float
    success: bool
    mean_extrinsic: float
    mean_curiosity: float
    val_mse: float
    model_nll: float
    reward_nll: float
    buffer_size: int
    halted: bool

    def csv_values(self) -> list[str]:
        return [
            str(self.seed),
            str(self.episode),
            str(self.steps),
            _fmt(self.ep_return),
            _fmt(self.window_return),
            str(int(self.success)),
            _fmt(self.mean_extrinsic),
            _fmt(self.mean_curiosity),
            _fmt(self.val_mse),
            _fmt(self.model_nll),
            _fmt(self.reward_nll),
            str(self.buffer_size),
            str(int(self.halted)),
        ]


@dataclass
class RunSummary:
    out_dir: str
    metrics_path: str
    rows: list[MetricsRow]
    checkpoints: list[str]
    halted_seeds: list[int]


@dataclass
class EvalReport:
    returns: list[float]
    successes: list[bool]
    mean_abs_shear: list[float]
    empty: bool

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns)) if self.returns else float("nan")

    @property
    def success_rate(self) -> float:
        return float(np.mean([1.0 if s else 0.0 for s in self.successes])) if self.successes else float("nan")


def _build_models(cfg: RunConfig, seed: int, obs_dim: int, action_dim: int):
    model = EnsembleDynamics(
        obs_dim,
        action_dim,
        members=cfg.members,
        hidden=cfg.hidden,
        lr=cfg.lr,
        seed=seed,
        pred_std=cfg.pred_std,
    )
    head = RewardHead(obs_dim, hidden=cfg.hidden, lr=cfg.lr, seed=seed)
    buffer = ReplayBuffer(cfg.capacity, obs_dim, action_dim)
    model.normalizer = buffer.normalizer
    head.normalizer = buffer.normalizer
    return model, head, buffer


def _planner_cfg(cfg: RunConfig) -> PlannerConfig:
    beta = 0.0 if cfg.curiosity_off else cfg.planner.beta
    return replace(cfg.planner, beta=beta)


def save_checkpoint(
    path: str,
    cfg: RunConfig,
    seed: int,
    next_episode: int,
    model: EnsembleDynamics,
    head: RewardHead,
    buffer: ReplayBuffer,
) -> None:
    buffer_name = os.path.basename(path).rsplit(".", 1)[0] + ".buffer.jsonl"
    doc = {
        "format": CHECKPOINT_FORMAT,
        "master_seed": seed,
        "next_episode": next_episode,
        "obs_dim": model.obs_dim,
        "action_dim": model.action_dim,
        "env": env_config_doc(cfg),
        "planner": asdict(cfg.planner),
        "run": {
            "warmup_episodes": cfg.warmup_episodes,
            "curiosity_off": cfg.curiosity_off,
            "random_policy": cfg.random_policy,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "capacity": cfg.capacity,
            "window": cfg.window,
            "members": cfg.members,
            "hidden": list(cfg.hidden),
            "lr": cfg.lr,
            "pred_std": cfg.pred_std,
        },
        "model": model.to_doc(),
        "head": head.to_doc(),
        "normalizer": buffer.normalizer.to_doc(),
        "buffer_file": buffer_name,
    }
    nets.save_doc(path, doc)
    buffer.dump(os.path.join(os.path.dirname(path) or ".", buffer_name))


def load_checkpoint(path: str):
    """Returns (doc, run_cfg, model, head, buffer_or_None)."""
    doc = nets.load_doc(path)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a recognised checkpoint")
    values = apply_env_doc(default_values(), doc["env"])
    run = doc["run"]
    values.update(
        {
            "run.warmup_episodes": run["warmup_episodes"],
            "run.curiosity_off": run["curiosity_off"],
            "run.random_policy": run["random_policy"],
            "model.epochs": run["epochs"],
            "model.batch_size": run["batch_size"],
            "model.capacity": run["capacity"],
            "run.window": run["window"],
            "model.members": run["members"],
            "model.hidden": tuple(run["hidden"]),
            "model.lr": run["lr"],
            "model.pred_std": run.get("pred_std", 0.1),
            "run.seeds": (doc["master_seed"],),
        }
    )
    for key, value in doc["planner"].items():
        if key != "seed":
            values[f"planner.{key}"] = value
    cfg = build_run_config(values)
    model = EnsembleDynamics.from_doc(doc["model"])
    head = RewardHead.from_doc(doc["head"])
    from .worldmodel import RunningNormalizer

    normalizer = RunningNormalizer.from_doc(doc["normalizer"])
    model.normalizer = normalizer
    head.normalizer = normalizer
    buffer = None
    buffer_path = os.path.join(os.path.dirname(path) or ".", doc["buffer_file"])
    if os.path.exists(buffer_path):
        buffer = ReplayBuffer.restore(
            buffer_path, run["capacity"], doc["obs_dim"], doc["action_dim"]
        )
        buffer.normalizer = normalizer
        model.normalizer = buffer.normalizer
        head.normalizer = buffer.normalizer
    return doc, cfg, model, head, buffer


def _write_metrics(path: str, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_values())


def _run_one_seed(
    cfg: RunConfig,
    seed: int,
    out_dir: str,
    start_episode: int,
    model: EnsembleDynamics,
    head: RewardHead,
    buffer: ReplayBuffer,
    returns_so_far: list[float],
) -> tuple[list[MetricsRow], list[tuple[int, int, float]], list[str], bool]:
    env = make_env(cfg)
    if env.observation_dim != model.obs_dim:
        raise DimensionMismatchError(
            f"env obs dim ({env.observation_dim},) != model obs dim ({model.obs_dim},)"
        )
    pcfg = _planner_cfg(cfg)
    ep_dir = os.path.join(out_dir, "episodes", f"seed{seed}")
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ep_dir, exist_ok=True)
    os.makedirs(ckpt_dir, exist_ok=True)
    if cfg.trace_planner:
        os.makedirs(os.path.join(out_dir, "trace"), exist_ok=True)
    if cfg.debug_depth:
        os.makedirs(os.path.join(out_dir, "depth", f"seed{seed}"), exist_ok=True)

    rows: list[MetricsRow] = []
    timings: list[tuple[int, int, float]] = []
    checkpoints: list[str] = []
    returns = list(returns_so_far)
    halted = False
    prev_dist = None

    for ep in range(start_episode, cfg.episodes):
        t0 = time.perf_counter()
        env_seed = streams.derive_seed(seed, streams.ENV, ep)
        warmup_rng = streams.make_rng(seed, streams.WARMUP, ep)
        obs, info = env.reset(env_seed)
        log_path = os.path.join(ep_dir, f"ep{ep:04d}.jsonl")
        trace_path = os.path.join(out_dir, "trace", f"seed{seed}_ep{ep:04d}.jsonl")
        ep_return = 0.0
        ep_steps = 0
        planned_steps = 0
        sum_extrinsic = 0.0
        sum_curiosity = 0.0
        success = False
        prev_dist = None
        report = None
        failure: nets.NonFiniteError | None = None
        with open(log_path, "w", encoding="utf-8") as log:
            log.write(
                json.dumps(
                    {"reset": True, "env_seed": env_seed, "obs": obs.tolist(), "info": _scalar_info(info)}
                )
                + "\n"
            )
            while True:
                # until the normalizer has seen data the model cannot predict,
                # so zero-warmup configs start on random actions anyway
                use_random = (
                    cfg.random_policy
                    or ep < cfg.warmup_episodes
                    or not buffer.normalizer.initialized
                )
                breakdown = None
                if use_random:
                    action = warmup_rng.uniform(-1.0, 1.0, env.action_dim)
                else:
                    rng = streams.make_rng(seed, streams.CEM, ep, ep_steps)
                    warm = None
                    if pcfg.warm_start and prev_dist is not None:
                        warm = shift_warm_start(prev_dist)
                    trace = [] if cfg.trace_planner else None
                    action, breakdown, dist = cem_plan(
                        obs, model, head, pcfg, rng=rng, warm_mean=warm, trace=trace
                    )
                    prev_dist = dist
                    if cfg.trace_planner and trace:
                        with open(trace_path, "a", encoding="utf-8") as tfh:
                            for rec in trace:
                                rec = dict(rec, step=ep_steps)
                                tfh.write(json.dumps(rec) + "\n")
                result = env.step(action)
                buffer.push(
                    Transition(obs, action, result.reward, result.obs, result.done, ep, ep_steps)
                )
                if breakdown is not None:
                    planned_steps += 1
                    sum_extrinsic += breakdown.extrinsic
                    sum_curiosity += pcfg.beta * breakdown.info_gain
                record = {
                    "t": ep_steps,
                    "action": np.asarray(action).tolist(),
                    "reward": result.reward,
                    "done": result.done,
                    "obs": result.obs.tolist(),
                    "info": _scalar_info(result.info),
                }
                if breakdown is not None:
                    record["extrinsic"] = breakdown.extrinsic
                    record["info_gain"] = breakdown.info_gain
                    record["truncated_rollout"] = breakdown.truncated
                log.write(json.dumps(record) + "\n")
                if cfg.debug_depth and "depth" in result.info:
                    tactile.write_pgm(
                        os.path.join(
                            out_dir, "depth", f"seed{seed}", f"ep{ep:04d}_t{ep_steps:03d}.pgm"
                        ),
                        result.info["depth"],
                    )
                ep_return += result.reward
                ep_steps += 1
                success = bool(result.info.get("success", False))
                obs = result.obs
                if result.done:
                    break
        try:
            report = fit_after_episode(cfg, model, head, buffer, ep)
        except nets.NonFiniteError as exc:
            failure = exc
            halted = True
        returns.append(ep_return)
        window = returns[-cfg.window :]
        row = MetricsRow(
            seed=seed,
            episode=ep,
            steps=ep_steps,
            ep_return=ep_return,
            window_return=float(np.mean(window)),
            success=success,
            mean_extrinsic=sum_extrinsic / planned_steps if planned_steps else 0.0,
            mean_curiosity=sum_curiosity / planned_steps if planned_steps else 0.0,
            val_mse=report.val_mse if report else float("nan"),
            model_nll=float(np.mean(report.member_nll)) if report else float("nan"),
            reward_nll=report.reward_nll if report else float("nan"),
            buffer_size=len(buffer),
            halted=halted,
        )
        rows.append(row)
        timings.append((seed, ep, time.perf_counter() - t0))
        if halted:
            diag = os.path.join(out_dir, f"divergence_seed{seed}.txt")
            with open(diag, "w", encoding="utf-8") as fh:
                fh.write(
                    f"seed {seed} halted at episode {ep}: {failure} "
                    f"(stage={failure.stage}, batch_index={failure.batch_index})\n"
                )
            break
        if cfg.checkpoint_period and (ep + 1) % cfg.checkpoint_period == 0:
            path = os.path.join(ckpt_dir, f"seed{seed}_ep{ep + 1}.json")
            save_checkpoint(path, cfg, seed, ep + 1, model, head, buffer)
            checkpoints.append(path)
    final = os.path.join(ckpt_dir, f"seed{seed}_final.json")
    save_checkpoint(final, cfg, seed, cfg.episodes, model, head, buffer)
    checkpoints.append(final)
    return rows, timings, checkpoints, halted


def fit_after_episode(cfg: RunConfig, model, head, buffer, episode: int):
    """Fit models after an episode; insufficient data is fine early on."""
    from .worldmodel import fit_models

    try:
        return fit_models(model, head, buffer, cfg.epochs, cfg.batch_size, fit_key=episode)
    except InsufficientDataError:
        return None


def train_run(cfg: RunConfig, resume: str | None = None) -> RunSummary:
    """Train per master seed; returns the summary after writing all outputs."""
    cfg.validate()
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    all_rows: list[MetricsRow] = []
    all_timings: list[tuple[int, int, float]] = []
    all_ckpts: list[str] = []
    halted_seeds: list[int] = []

    if resume is not None:
        doc, ckpt_cfg, model, head, buffer = load_checkpoint(resume)
        if buffer is None:
            raise ConfigError(f"checkpoint {resume} has no buffer dump; cannot resume")
        seed = int(doc["master_seed"])
        start = int(doc["next_episode"])
        env = make_env(cfg)
        if env.observation_dim != model.obs_dim:
            raise DimensionMismatchError(
                f"env obs dim ({env.observation_dim},) != checkpoint obs dim ({model.obs_dim},)"
            )
        past_returns = _episode_returns_from_logs(cfg, seed, start)
        rows, timings, ckpts, halted = _run_one_seed(
            cfg, seed, out_dir, start, model, head, buffer, past_returns
        )
        all_rows.extend(rows)
        all_timings.extend(timings)
        all_ckpts.extend(ckpts)
        if halted:
            halted_seeds.append(seed)
    else:
        for seed in cfg.seeds:
            env = make_env(cfg)
            model, head, buffer = _build_models(cfg, seed, env.observation_dim, env.action_dim)
            rows, timings, ckpts, halted = _run_one_seed(
                cfg, seed, out_dir, 0, model, head, buffer, []
            )
            all_rows.extend(rows)
            all_timings.extend(timings)
            all_ckpts.extend(ckpts)
            if halted:
                halted_seeds.append(seed)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    _write_metrics(metrics_path, all_rows)
    with open(os.path.join(out_dir, "timings.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("seed", "episode", "wall_seconds"))
        for seed, ep, secs in all_timings:
            writer.writerow((seed, ep, f"{secs:.6f}"))
    return RunSummary(out_dir, metrics_path, all_rows, all_ckpts, halted_seeds)


def _episode_returns_from_logs(cfg: RunConfig, seed: int, upto: int) -> list[float]:
    """Recover pre-resume episode returns from the episode logs if present.

    The sliding-window column of resumed rows needs the previous returns;
    they are replayed from the original run's logs when the resumed run
    shares the out_dir, otherwise the window restarts at the resume point.
    """
    returns = []
    ep_dir = os.path.join(cfg.out_dir, "episodes", f"seed{seed}")
    for ep in range(upto):
        path = os.path.join(ep_dir, f"ep{ep:04d}.jsonl")
        if not os.path.exists(path):
            return returns
        total = 0.0
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if "reward" in rec:
                    total += float(rec["reward"])
        returns.append(total)
    return returns


def eval_run(
    checkpoint_path: str,
    episodes: int = 20,
    seed: int = 1000,
    random_policy: bool = False,
) -> EvalReport:
    """Roll out a frozen checkpoint (no learning, no buffer writes).

    ``episodes = 0`` yields an empty, flagged report. ``random_policy``
    ignores the planner and samples uniform actions, as a baseline.
    """
    if episodes < 0:
        raise ConfigError(f"episodes must be >= 0, got {episodes}")
    doc, cfg, model, head, _ = load_checkpoint(checkpoint_path)
    env = make_env(cfg)
    if env.observation_dim != model.obs_dim:
        raise DimensionMismatchError(
            f"env obs dim ({env.observation_dim},) != checkpoint obs dim ({model.obs_dim},)"
        )
    if episodes == 0:
        return EvalReport([], [], [], empty=True)
    pcfg = _planner_cfg(cfg)
    use_random = random_policy or cfg.random_policy
    returns: list[float] = []
    successes: list[bool] = []
    shears: list[float] = []
    for ep in range(episodes):
        env_seed = streams.derive_seed(seed, streams.EVAL_ENV, ep)
        rng_random = streams.make_rng(seed, streams.WARMUP, ep)
        obs, _ = env.reset(env_seed)
        total = 0.0
        success = False
        abs_shear: list[float] = []
        prev_dist = None
        t = 0
        while True:
            if use_random:
                action = rng_random.uniform(-1.0, 1.0, env.action_dim)
            else:
                rng = streams.make_rng(seed, streams.EVAL_CEM, ep, t)
                warm = None
                if pcfg.warm_start and prev_dist is not None:
                    warm = shift_warm_start(prev_dist)
                action, _, dist = cem_plan(obs, model, head, pcfg, rng=rng, warm_mean=warm)
                prev_dist = dist
            result = env.step(action)
            total += result.reward
            success = bool(result.info.get("success", False))
            if "shear" in result.info:
                abs_shear.append(abs(float(result.info["shear"])))
            obs = result.obs
            t += 1
            if result.done:
                break
        returns.append(total)
        successes.append(success)
        shears.append(float(np.mean(abs_shear)) if abs_shear else float("nan"))
    return EvalReport(returns, successes, shears, empty=False)


def plot_metrics(
    metrics_path: str, window: int = 10, out_path: str | None = None
) -> tuple[str, int]:
    """Render the smoothed learning curve as an SVG; returns (path, skipped rows).

    Rows that fail to parse are skipped and counted, never fatal. Per seed,
    episode returns are smoothed with a sliding-window mean, then the plot
    shows the across-seed mean and a min-max band.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    per_seed: dict[int, dict[int, float]] = {}
    skipped = 0
    with open(metrics_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise ConfigError(f"{metrics_path} does not look like a metrics file")
        for row in reader:
            if len(row) != len(METRICS_COLUMNS):
                skipped += 1
                continue
            try:
                seed = int(row[0])
                episode = int(row[1])
                ep_return = float(row[3])
            except ValueError:
                skipped += 1
                continue
            per_seed.setdefault(seed, {})[episode] = ep_return
    if not per_seed:
        raise ConfigError(f"no plottable rows in {metrics_path}")

    smoothed: dict[int, dict[int, float]] = {}
    for seed, by_ep in per_seed.items():
        eps = sorted(by_ep)
        vals = [by_ep[e] for e in eps]
        sm = {}
        for i, e in enumerate(eps):
            lo = max(0, i - window + 1)
            sm[e] = float(np.mean(vals[lo : i + 1]))
        smoothed[seed] = sm
    episodes = sorted({e for sm in smoothed.values() for e in sm})
    mean_curve = []
    lo_curve = []
    hi_curve = []
    for e in episodes:
        vals = [sm[e] for sm in smoothed.values() if e in sm]
        mean_curve.append(float(np.mean(vals)))
        lo_curve.append(min(vals))
        hi_curve.append(max(vals))

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(episodes, lo_curve, hi_curve, alpha=0.25, label="seed min-max")
    ax.plot(episodes, mean_curve, lw=2, label=f"mean of window({window}) return")
    ax.set_xlabel("episode")
    ax.set_ylabel("return")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    if out_path is None:
        out_path = os.path.splitext(metrics_path)[0] + ".svg"
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path, skipped


def read_metrics(path: str) -> list[dict]:
    """Parse a metrics file into dicts (numbers converted, halted/success -> bool)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                {
                    "seed": int(rec["seed"]),
                    "episode": int(rec["episode"]),
                    "steps": int(rec["steps"]),
                    "ep_return": float(rec["ep_return"]),
                    "window_return": float(rec["window_return"]),
                    "success": rec["success"] == "1",
                    "mean_extrinsic": float(rec["mean_extrinsic"]),
                    "mean_curiosity": float(rec["mean_curiosity"]),
                    "val_mse": float(rec["val_mse"]),
                    "model_nll": float(rec["model_nll"]),
                    "reward_nll": float(rec["reward_nll"]),
                    "buffer_size": int(rec["buffer_size"]),
                    "halted": rec["halted"] == "1",
                }
            )
    return rows
