"""Minimal feedforward network substrate with manual backprop and Adam.

Everything downstream (dynamics ensemble, reward head) builds on the two
network flavours defined here:

* ``head="linear"``: plain regression net, tanh hidden layers, identity output.
* ``head="gaussian"``: the output layer is split in half; the first half is a
  mean vector and the second half is a log-variance vector squashed smoothly
  into ``[LOGVAR_MIN, LOGVAR_MAX]`` so predicted variances stay positive and
  finite no matter what the linear layer emits.

All math is float64 numpy. No autograd: gradients are coded by hand and
validated against central finite differences (see ``finite_diff_check``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

LOGVAR_MIN = -6.0
LOGVAR_MAX = 2.0
# slope chosen so the squash has unit derivative at raw = 0
_LOGVAR_SLOPE = 4.0 / (LOGVAR_MAX - LOGVAR_MIN)
_LN_2PI = math.log(2.0 * math.pi)


class NonFiniteError(ValueError):
    """A training step hit a non-finite loss, gradient or parameter.

    ``batch_index`` is the offending sample's position in the batch, or -1
    when the problem only appears in the batch aggregate.
    """

    def __init__(self, message: str, batch_index: int = -1, stage: str = "") -> None:
        super().__init__(message)
        self.batch_index = batch_index
        self.stage = stage


def sigmoid(x: np.ndarray) -> np.ndarray:
    # evaluated via exp of the negative magnitude to avoid overflow warnings
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def squash_logvar(raw: np.ndarray) -> np.ndarray:
    """Map an unbounded pre-activation into (LOGVAR_MIN, LOGVAR_MAX)."""
    s = sigmoid(_LOGVAR_SLOPE * np.asarray(raw, dtype=float))
    return LOGVAR_MIN + (LOGVAR_MAX - LOGVAR_MIN) * s


def unsquash_logvar(logvar: np.ndarray) -> np.ndarray:
    """Inverse of squash_logvar; logvar must lie strictly inside the clamp."""
    lv = np.asarray(logvar, dtype=float)
    s = (lv - LOGVAR_MIN) / (LOGVAR_MAX - LOGVAR_MIN)
    if not ((s > 0) & (s < 1)).all():
        raise ValueError(f"log-variance outside ({LOGVAR_MIN}, {LOGVAR_MAX})")
    return np.log(s / (1.0 - s)) / _LOGVAR_SLOPE


def _squash_logvar_deriv(raw: np.ndarray) -> np.ndarray:
    s = sigmoid(_LOGVAR_SLOPE * np.asarray(raw, dtype=float))
    return (LOGVAR_MAX - LOGVAR_MIN) * _LOGVAR_SLOPE * s * (1.0 - s)


def _tanh_deriv(activation: np.ndarray) -> np.ndarray:
    return 1.0 - activation * activation


def split_gaussian(output: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a gaussian-head output into (mean, log_variance) halves."""
    out = np.asarray(output, dtype=float)
    d = out.shape[-1] // 2
    return out[..., :d], out[..., d:]


@dataclass
class Network:
    """Fully connected net: tanh hidden layers, identity (or gaussian) output."""

    layer_sizes: tuple[int, ...]
    head: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(
        cls,
        layer_sizes: tuple[int, ...] | list[int],
        rng: np.random.Generator,
        head: str = "linear",
    ) -> "Network":
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must be >= 2 positive entries, got {sizes}")
        if head not in ("linear", "gaussian"):
            raise ValueError(f"unknown head {head!r}")
        if head == "gaussian" and sizes[-1] % 2 != 0:
            raise ValueError("gaussian head needs an even output width")
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, head, weights, biases)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def named_params(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"w{i}"] = w
            named[f"b{i}"] = b
        return named

    def _forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
        """Return (output, hidden activations per layer, raw final pre-activation)."""
        a = np.asarray(x, dtype=float)
        acts = [a]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w + b)
            acts.append(a)
        raw = a @ self.weights[-1] + self.biases[-1]
        if self.head == "gaussian":
            d = self.output_dim // 2
            out = np.concatenate([raw[..., :d], squash_logvar(raw[..., d:])], axis=-1)
        else:
            out = raw
        return out, acts, raw

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected (batch, {self.input_dim}) input, got {x.shape}")
        out, _, _ = self._forward_cache(x)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected ({self.input_dim},) input, got {x.shape}")
        return self.forward_batch(x[None, :])[0]

    def to_doc(self) -> dict:
        doc = {
            "kind": "network",
            "layer_sizes": list(self.layer_sizes),
            "head": self.head,
        }
        doc.update(doc_from_arrays(self.named_params()))
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Network":
        sizes = tuple(int(s) for s in doc["layer_sizes"])
        arrays = arrays_from_doc(doc)
        weights = []
        biases = []
        for i in range(len(sizes) - 1):
            weights.append(arrays[f"w{i}"])
            biases.append(arrays[f"b{i}"])
        return cls(sizes, str(doc["head"]), weights, biases)


@dataclass
class AdamState:
    """Adam optimizer state mirroring a network's parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: Network, lr: float = 1e-3) -> "AdamState":
        m = [np.zeros_like(p) for p in net.params()]
        v = [np.zeros_like(p) for p in net.params()]
        return cls(lr=lr, m=m, v=v)

    def propose(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        """Compute updated parameters without mutating anything yet."""
        t = self.t + 1
        new_params = []
        self._m_next = []
        self._v_next = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m_n = self.beta1 * m + (1.0 - self.beta1) * g
            v_n = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m_n / (1.0 - self.beta1**t)
            v_hat = v_n / (1.0 - self.beta2**t)
            new_params.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
            self._m_next.append(m_n)
            self._v_next.append(v_n)
        return new_params

    def commit(self) -> None:
        self.m = self._m_next
        self.v = self._v_next
        self.t += 1
        del self._m_next, self._v_next

    def to_doc(self) -> dict:
        named: dict[str, np.ndarray] = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            named[f"m{i}"] = m
            named[f"v{i}"] = v
        doc = {
            "kind": "adam",
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "count": len(self.m),
        }
        doc.update(doc_from_arrays(named))
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "AdamState":
        arrays = arrays_from_doc(doc)
        n = int(doc["count"])
        return cls(
            lr=float(doc["lr"]),
            beta1=float(doc["beta1"]),
            beta2=float(doc["beta2"]),
            eps=float(doc["eps"]),
            t=int(doc["t"]),
            m=[arrays[f"m{i}"] for i in range(n)],
            v=[arrays[f"v{i}"] for i in range(n)],
        )


def _as_batch_arrays(
    net: Network, batch
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a sequence of (input, target, weight) triples into arrays."""
    xs, ts, ws = [], [], []
    target_dim = net.output_dim // 2 if net.head == "gaussian" else net.output_dim
    for item in batch:
        x, t, w = item
        x = np.asarray(x, dtype=float).reshape(net.input_dim)
        t = np.asarray(t, dtype=float).reshape(target_dim)
        w = np.broadcast_to(np.asarray(w, dtype=float), (target_dim,))
        xs.append(x)
        ts.append(t)
        ws.append(np.array(w, dtype=float))
    if not xs:
        raise ValueError("empty batch")
    return np.stack(xs), np.stack(ts), np.stack(ws)


def _losses_and_output_grads(
    net: Network, out: np.ndarray, targets: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample weighted losses and d(loss_i)/d(output_i) rows."""
    if net.head == "gaussian":
        mean, logvar = split_gaussian(out)
        inv_var = np.exp(-logvar)
        err = mean - targets
        losses = 0.5 * np.sum(weights * (logvar + err * err * inv_var + _LN_2PI), axis=1)
        d_mean = weights * err * inv_var
        d_logvar = 0.5 * weights * (1.0 - err * err * inv_var)
        d_out = np.concatenate([d_mean, d_logvar], axis=1)
    else:
        err = out - targets
        losses = np.sum(weights * err * err, axis=1)
        d_out = 2.0 * weights * err
    return losses, d_out


def _backprop(
    net: Network,
    acts: list[np.ndarray],
    raw: np.ndarray,
    d_out: np.ndarray,
) -> list[np.ndarray]:
    """Gradients of sum_i d_out[i] . output[i] w.r.t. params, in params() order."""
    if net.head == "gaussian":
        d = net.output_dim // 2
        d_raw = np.concatenate(
            [d_out[:, :d], d_out[:, d:] * _squash_logvar_deriv(raw[:, d:])], axis=1
        )
    else:
        d_raw = d_out
    grads_w: list[np.ndarray] = [None] * len(net.weights)
    grads_b: list[np.ndarray] = [None] * len(net.biases)
    delta = d_raw
    for layer in range(len(net.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer].T) * _tanh_deriv(acts[layer])
    out: list[np.ndarray] = []
    for gw, gb in zip(grads_w, grads_b):
        out.append(gw)
        out.append(gb)
    return out


def batch_loss_and_grads(
    net: Network, inputs: np.ndarray, targets: np.ndarray, weights: np.ndarray
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Mean weighted loss over the batch, its parameter gradients, per-sample losses."""
    out, acts, raw = net._forward_cache(np.asarray(inputs, dtype=float))
    losses, d_out = _losses_and_output_grads(net, out, targets, weights)
    n = len(losses)
    grads = _backprop(net, acts, raw, d_out / n)
    return float(losses.mean()), grads, losses


def batch_losses(
    net: Network, inputs: np.ndarray, targets: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Per-sample weighted losses without gradient work (evaluation only)."""
    out = net.forward_batch(np.asarray(inputs, dtype=float))
    losses, _ = _losses_and_output_grads(
        net, out, np.asarray(targets, dtype=float), np.asarray(weights, dtype=float)
    )
    return losses


def _first_bad_row(arr: np.ndarray) -> int:
    bad = ~np.isfinite(arr)
    if bad.ndim > 1:
        bad = bad.any(axis=tuple(range(1, bad.ndim)))
    idx = np.nonzero(bad)[0]
    return int(idx[0]) if idx.size else -1


def net_train_step(net: Network, opt: AdamState, batch) -> float:
    """One Adam step on a batch of (input, target, per-output weight) triples.

    Returns the mean weighted loss measured before the update. If the loss,
    a gradient, or the updated parameters would be non-finite, nothing is
    mutated and NonFiniteError identifies the offending sample.
    """
    inputs, targets, weights = _as_batch_arrays(net, batch)
    return net_train_step_arrays(net, opt, inputs, targets, weights)


def net_train_step_arrays(
    net: Network,
    opt: AdamState,
    inputs: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
) -> float:
    """Same contract as net_train_step on pre-stacked (B, .) arrays."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = np.broadcast_to(weights, targets.shape)
    out, acts, raw = net._forward_cache(inputs)
    losses, d_out = _losses_and_output_grads(net, out, targets, weights)
    bad = _first_bad_row(losses)
    if bad >= 0:
        raise NonFiniteError(
            f"non-finite loss at batch index {bad}", batch_index=bad, stage="loss"
        )
    bad = _first_bad_row(d_out)
    if bad >= 0:
        raise NonFiniteError(
            f"non-finite output gradient at batch index {bad}",
            batch_index=bad,
            stage="gradient",
        )
    grads = _backprop(net, acts, raw, d_out / len(losses))
    if any(not np.isfinite(g).all() for g in grads):
        raise NonFiniteError(
            "non-finite parameter gradient in batch aggregate",
            batch_index=-1,
            stage="gradient",
        )
    new_params = opt.propose(net.params(), grads)
    if any(not np.isfinite(p).all() for p in new_params):
        raise NonFiniteError(
            "update would produce non-finite parameters", batch_index=-1, stage="update"
        )
    for i in range(len(net.weights)):
        net.weights[i] = new_params[2 * i]
        net.biases[i] = new_params[2 * i + 1]
    opt.commit()
    return float(losses.mean())


def finite_diff_check(
    net: Network,
    x: np.ndarray,
    target: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Uses the same loss the trainer uses (per-output weights all one) on the
    single sample (x, target). The relative error per parameter is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    target_dim = net.output_dim // 2 if net.head == "gaussian" else net.output_dim
    inputs = np.asarray(x, dtype=float).reshape(1, net.input_dim)
    targets = np.asarray(target, dtype=float).reshape(1, target_dim)
    weights = np.ones((1, target_dim))
    _, analytic, _ = batch_loss_and_grads(net, inputs, targets, weights)

    def loss_now() -> float:
        return float(batch_losses(net, inputs, targets, weights)[0])

    worst = 0.0
    for p, g in zip(net.params(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = loss_now()
            flat[i] = saved - h
            down = loss_now()
            flat[i] = saved
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


# --- checkpoint documents -------------------------------------------------
#
# A checkpoint is a JSON document of named tensors, each stored as a flat
# list plus a shape. Floats survive the round trip exactly: json emits
# repr(float), the shortest string that parses back to the same 64-bit value
# (at most 17 significant digits).


def doc_from_arrays(named: dict[str, np.ndarray]) -> dict:
    tensors = {}
    for name, arr in named.items():
        a = np.asarray(arr, dtype=float)
        tensors[name] = {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
    return {"tensors": tensors}


def arrays_from_doc(doc: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in doc["tensors"].items():
        out[name] = np.array(entry["data"], dtype=float).reshape(entry["shape"])
    return out


def save_doc(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_doc(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
