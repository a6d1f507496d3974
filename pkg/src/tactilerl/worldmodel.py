"""Ensemble world model: replay buffer, dynamics ensemble, reward head.

The dynamics model is K independently initialized probabilistic nets, each
predicting a diagonal Gaussian over the normalized change in observation.
Disagreement between members is what the planner's curiosity term feeds on,
so members are kept diverse by independent init and per-member bootstrap
resampling of the training data. A single shared head predicts reward from
the arrived observation.

Observations are normalized by running Welford statistics owned by the
replay buffer; predictions are mapped back to raw units, so everything
outside this module speaks raw observations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import nets, streams
from .planner import GaussianBelief

STD_FLOOR = 1e-6


class InsufficientDataError(RuntimeError):
    """Raised when a fit or prediction needs more data than the buffer holds."""


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    episode: int
    step: int


class RunningNormalizer:
    """Per-dimension Welford mean/variance tracker."""

    def __init__(self, dim: int) -> None:
        self.dim = int(dim)
        self.count = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    @property
    def initialized(self) -> bool:
        return self.count >= 2

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, STD_FLOOR * STD_FLOOR))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_doc(self) -> dict:
        doc = {"kind": "normalizer", "dim": self.dim, "count": self.count}
        doc.update(nets.doc_from_arrays({"mean": self.mean, "m2": self.m2}))
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "RunningNormalizer":
        out = cls(int(doc["dim"]))
        out.count = int(doc["count"])
        arrays = nets.arrays_from_doc(doc)
        out.mean = arrays["mean"]
        out.m2 = arrays["m2"]
        return out


class ReplayBuffer:
    """Ring buffer of transitions; evicts oldest first when full.

    The attached normalizer sees each pushed transition's observation exactly
    once, in push order.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.normalizer = RunningNormalizer(self.obs_dim)
        self._items: list[Transition] = []

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def push(self, t: Transition) -> None:
        obs = np.asarray(t.obs, dtype=float)
        next_obs = np.asarray(t.next_obs, dtype=float)
        action = np.asarray(t.action, dtype=float)
        if obs.shape != (self.obs_dim,) or next_obs.shape != (self.obs_dim,):
            raise ValueError(
                f"obs shape {obs.shape}/{next_obs.shape} != ({self.obs_dim},)"
            )
        if action.shape != (self.action_dim,):
            raise ValueError(f"action shape {action.shape} != ({self.action_dim},)")
        if (np.abs(action) > 1.0 + 1e-9).any():
            raise ValueError(f"action outside [-1, 1]: {action}")
        if not (
            np.isfinite(obs).all()
            and np.isfinite(next_obs).all()
            and np.isfinite(action).all()
            and math.isfinite(float(t.reward))
        ):
            raise ValueError("non-finite transition rejected")
        stored = Transition(
            obs, action, float(t.reward), next_obs, bool(t.done), int(t.episode), int(t.step)
        )
        if len(self._items) >= self.capacity:
            self._items.pop(0)
        self._items.append(stored)
        self.normalizer.update(obs)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if not self._items:
            raise InsufficientDataError("empty buffer")
        obs = np.stack([t.obs for t in self._items])
        act = np.stack([t.action for t in self._items])
        rew = np.array([t.reward for t in self._items])
        nxt = np.stack([t.next_obs for t in self._items])
        done = np.array([t.done for t in self._items], dtype=bool)
        return obs, act, rew, nxt, done

    def dump(self, path) -> None:
        """One JSON record per line, oldest first, plus trailing normalizer line."""
        with open(path, "w", encoding="utf-8") as fh:
            for t in self._items:
                rec = {
                    "o": t.obs.tolist(),
                    "a": t.action.tolist(),
                    "r": t.reward,
                    "n": t.next_obs.tolist(),
                    "d": t.done,
                    "ep": t.episode,
                    "st": t.step,
                }
                fh.write(json.dumps(rec) + "\n")
            fh.write(json.dumps({"normalizer": self.normalizer.to_doc()}) + "\n")

    @classmethod
    def restore(cls, path, capacity: int, obs_dim: int, action_dim: int) -> "ReplayBuffer":
        buf = cls(capacity, obs_dim, action_dim)
        normalizer_doc = None
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if "normalizer" in rec:
                    normalizer_doc = rec["normalizer"]
                    continue
                buf._items.append(
                    Transition(
                        np.array(rec["o"], dtype=float),
                        np.array(rec["a"], dtype=float),
                        float(rec["r"]),
                        np.array(rec["n"], dtype=float),
                        bool(rec["d"]),
                        int(rec["ep"]),
                        int(rec["st"]),
                    )
                )
        if len(buf._items) > capacity:
            raise ValueError("restored records exceed capacity")
        if normalizer_doc is not None:
            buf.normalizer = RunningNormalizer.from_doc(normalizer_doc)
        else:
            for t in buf._items:
                buf.normalizer.update(t.obs)
        return buf


class EnsembleDynamics:
    """K probabilistic nets predicting the normalized observation delta."""

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        members: int = 5,
        hidden: tuple[int, ...] = (64, 64),
        lr: float = 1e-3,
        seed: int = 0,
        pred_std: float = 0.1,
    ) -> None:
        if members < 2:
            raise ValueError(f"need >= 2 members for disagreement, got {members}")
        if not pred_std > 0.0:
            raise ValueError(f"pred_std must be > 0, got {pred_std}")
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.members = int(members)
        self.hidden = tuple(int(h) for h in hidden)
        self.lr = float(lr)
        self.seed = int(seed)
        self.pred_std = float(pred_std)
        sizes = (self.obs_dim + self.action_dim, *self.hidden, 2 * self.obs_dim)
        self.nets: list[nets.Network] = []
        self.opts: list[nets.AdamState] = []
        for k in range(self.members):
            rng = streams.make_rng(self.seed, streams.MEMBER_INIT, k)
            net = nets.Network.init(sizes, rng, head="gaussian")
            self.nets.append(net)
            self.opts.append(nets.AdamState.for_network(net, lr=self.lr))
        self.normalizer: RunningNormalizer | None = None

    def _require_normalizer(self) -> RunningNormalizer:
        if self.normalizer is None or not self.normalizer.initialized:
            raise InsufficientDataError(
                "normalizer not initialized (needs >= 2 observations)"
            )
        return self.normalizer

    def predict_batch(self, obs: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Member beliefs over next observations, raw units.

        Returns (means, vars) of shape (K, B, obs_dim). The mean is
        obs + std * predicted_delta. The emitted variance is the fixed
        pred_std^2 (normalized units) scaled back by std^2, identical for
        every member: the per-input variance heads are a training device
        only, because off the data manifold they extrapolate arbitrarily
        and would let variance disagreement masquerade as novelty. With a
        shared scale, ensemble disagreement is carried by the means alone.
        """
        norm = self._require_normalizer()
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        action = np.atleast_2d(np.asarray(action, dtype=float))
        x = np.concatenate([norm.normalize(obs), action], axis=1)
        std = norm.std
        means = np.empty((self.members, obs.shape[0], self.obs_dim))
        for k, net in enumerate(self.nets):
            out = net.forward_batch(x)
            delta_mean, _ = nets.split_gaussian(out)
            means[k] = obs + std * delta_mean
        var_row = (self.pred_std * self.pred_std) * (std * std)
        variances = np.broadcast_to(var_row, means.shape).copy()
        return means, variances

    def to_doc(self) -> dict:
        return {
            "kind": "ensemble",
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "members": self.members,
            "hidden": list(self.hidden),
            "lr": self.lr,
            "seed": self.seed,
            "pred_std": self.pred_std,
            "nets": [n.to_doc() for n in self.nets],
            "opts": [o.to_doc() for o in self.opts],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EnsembleDynamics":
        model = cls(
            int(doc["obs_dim"]),
            int(doc["action_dim"]),
            members=int(doc["members"]),
            hidden=tuple(doc["hidden"]),
            lr=float(doc["lr"]),
            seed=int(doc["seed"]),
            pred_std=float(doc.get("pred_std", 0.1)),
        )
        model.nets = [nets.Network.from_doc(d) for d in doc["nets"]]
        model.opts = [nets.AdamState.from_doc(d) for d in doc["opts"]]
        return model


class RewardHead:
    """Single probabilistic net predicting reward from the arrived observation."""

    def __init__(
        self,
        obs_dim: int,
        hidden: tuple[int, ...] = (64, 64),
        lr: float = 1e-3,
        seed: int = 0,
    ) -> None:
        self.obs_dim = int(obs_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.lr = float(lr)
        self.seed = int(seed)
        rng = streams.make_rng(self.seed, streams.MEMBER_INIT, 1_000_000)
        self.net = nets.Network.init(
            (self.obs_dim, *self.hidden, 2), rng, head="gaussian"
        )
        self.opt = nets.AdamState.for_network(self.net, lr=self.lr)
        self.normalizer: RunningNormalizer | None = None

    def predict_batch(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.normalizer is None or not self.normalizer.initialized:
            raise InsufficientDataError(
                "normalizer not initialized (needs >= 2 observations)"
            )
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        out = self.net.forward_batch(self.normalizer.normalize(obs))
        mean, logvar = nets.split_gaussian(out)
        return mean[:, 0], np.exp(logvar[:, 0])

    def to_doc(self) -> dict:
        return {
            "kind": "reward_head",
            "obs_dim": self.obs_dim,
            "hidden": list(self.hidden),
            "lr": self.lr,
            "seed": self.seed,
            "net": self.net.to_doc(),
            "opt": self.opt.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RewardHead":
        head = cls(
            int(doc["obs_dim"]),
            hidden=tuple(doc["hidden"]),
            lr=float(doc["lr"]),
            seed=int(doc["seed"]),
        )
        head.net = nets.Network.from_doc(doc["net"])
        head.opt = nets.AdamState.from_doc(doc["opt"])
        return head


def ensemble_predict(
    model: EnsembleDynamics, obs: np.ndarray, action: np.ndarray
) -> list[GaussianBelief]:
    """One belief per ensemble member for a single (obs, action) pair."""
    obs = np.asarray(obs, dtype=float).reshape(model.obs_dim)
    action = np.asarray(action, dtype=float).reshape(model.action_dim)
    means, variances = model.predict_batch(obs[None], action[None])
    return [GaussianBelief(means[k, 0], variances[k, 0]) for k in range(model.members)]


def reward_predict(head: RewardHead, obs: np.ndarray) -> GaussianBelief:
    obs = np.asarray(obs, dtype=float).reshape(head.obs_dim)
    mean, var = head.predict_batch(obs[None])
    return GaussianBelief(np.array([mean[0]]), np.array([var[0]]))


@dataclass
class TrainReport:
    """Deterministic summary of one fit: per-member NLL, reward NLL, val MSE."""

    member_nll: tuple[float, ...]
    reward_nll: float
    val_mse: float
    n_train: int
    n_val: int
    epochs: int


def _holdout_split(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic ~10% validation slice: every index congruent to seed mod 10."""
    idx = np.arange(n)
    val_mask = (idx % 10) == (seed % 10)
    if not val_mask.any():
        val_mask[-1] = True
    return idx[~val_mask], idx[val_mask]


def fit_models(
    model: EnsembleDynamics,
    head: RewardHead,
    buffer: ReplayBuffer,
    epochs: int,
    batch_size: int,
    fit_key: int = 0,
) -> TrainReport:
    """Train ensemble and reward head on the buffer; report final metrics.

    Each member trains on its own bootstrap resample of the shared training
    split, drawn from a stream keyed by (model seed, member, fit_key), so
    identical buffers and seeds give bit-identical reports. epochs = 0 skips
    all updates and just evaluates the current nets. Fewer transitions than
    one batch is an InsufficientDataError and nothing changes.
    """
    n = len(buffer)
    if n < batch_size or n < 2:
        raise InsufficientDataError(
            f"buffer has {n} transitions, need at least {max(batch_size, 2)}"
        )
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    model.normalizer = buffer.normalizer
    head.normalizer = buffer.normalizer
    obs, act, rew, nxt, _ = buffer.arrays()
    norm = buffer.normalizer
    std = norm.std
    x_dyn = np.concatenate([norm.normalize(obs), act], axis=1)
    t_dyn = (nxt - obs) / std
    x_rew = norm.normalize(nxt)
    t_rew = rew[:, None]

    train_idx, val_idx = _holdout_split(n, model.seed)
    ones_dyn = np.ones((1, model.obs_dim))
    ones_rew = np.ones((1, 1))

    for k in range(model.members):
        rng = streams.make_rng(model.seed, streams.SHUFFLE, k, fit_key)
        for _ in range(epochs):
            boot = train_idx[rng.integers(0, len(train_idx), len(train_idx))]
            for start in range(0, len(boot), batch_size):
                sel = boot[start : start + batch_size]
                nets.net_train_step_arrays(
                    model.nets[k], model.opts[k], x_dyn[sel], t_dyn[sel], ones_dyn
                )
    rng = streams.make_rng(model.seed, streams.SHUFFLE, model.members, fit_key)
    for _ in range(epochs):
        perm = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(perm), batch_size):
            sel = perm[start : start + batch_size]
            nets.net_train_step_arrays(head.net, head.opt, x_rew[sel], t_rew[sel], ones_rew)

    member_nll = tuple(
        float(
            nets.batch_losses(
                model.nets[k], x_dyn[train_idx], t_dyn[train_idx], ones_dyn
            ).mean()
        )
        for k in range(model.members)
    )
    reward_nll = float(
        nets.batch_losses(head.net, x_rew[train_idx], t_rew[train_idx], ones_rew).mean()
    )
    means, _ = model.predict_batch(obs[val_idx], act[val_idx])
    val_mse = float(np.mean((means.mean(axis=0) - nxt[val_idx]) ** 2))
    return TrainReport(member_nll, reward_nll, val_mse, len(train_idx), len(val_idx), epochs)
