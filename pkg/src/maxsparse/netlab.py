"""Fully connected residual support classifier with hand-written gradients.

Layout: an input stage (affine, batch norm, activation) maps n inputs to
``hidden_width`` units; the remaining ``depth - 1`` stages are grouped in
pairs, each pair wrapped by an identity skip ``h + f2(f1(h))`` when
``residual`` is set (an odd leftover stage runs without a skip). A final
affine head emits m logits, squashed per coordinate by a logistic.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import ShapeMismatchError, SparseLabError

__all__ = [
    "NetworkConfig",
    "TrainConfig",
    "Network",
    "DivergenceError",
    "relu",
    "helu",
    "init_network",
    "fit_input_whitening",
    "forward",
    "head_outputs",
    "predict_proba",
    "predict_scores",
    "loss",
    "loss_and_gradients",
    "train",
    "gradient_check",
    "GradientCheckReport",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_hash",
]

BN_EPS = 1e-5
BN_DECAY = 0.9
PROB_CLAMP = 1e-7


class DivergenceError(SparseLabError, FloatingPointError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    output_dim: int
    depth: int = 20
    hidden_width: int | None = None
    residual: bool = True
    activation: str = "relu"  # "relu", "helu" or "identity"
    sigma: float = 0.1
    loss: str = "multilabel"  # or "quadratic"
    batch_norm: bool = True
    whiten_input: bool = False

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.activation not in ("relu", "helu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "helu" and not 0 < self.sigma < 1:
            raise ValueError("helu requires 0 < sigma < 1")
        if self.loss not in ("multilabel", "quadratic"):
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def width(self) -> int:
        return self.hidden_width or self.output_dim

    def blocks(self) -> list[tuple[int, ...]]:
        """Stage indices grouped as they are wired: (0,), (1, 2), (3, 4), ..."""
        out = [(0,)]
        i = 1
        while i < self.depth:
            out.append((i, i + 1) if i + 1 < self.depth else (i,))
            i += 2
        return out


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 250
    initial_lr: float = 0.01
    lr_drop_factor: float = 0.1
    drop_period_epochs: int = 50
    total_epochs: int = 150
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_drop_factor < 1:
            raise ValueError("lr_drop_factor must lie in (0, 1)")
        if min(self.batch_size, self.drop_period_epochs, self.total_epochs) < 1 or self.initial_lr <= 0:
            raise ValueError("batch size, periods and learning rate must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.initial_lr * self.lr_drop_factor ** (epoch // self.drop_period_epochs)


@dataclass
class Network:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "Network":
        return Network(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.running.items()},
        )

    @property
    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())


# activations ---------------------------------------------------------------


def relu(x):
    return np.maximum(x, 0.0)


def helu(x, sigma: float):
    """Continuous piecewise-linear surrogate for scalar hard thresholding."""
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) >= 1.0, x, 0.0)
    up = (x > 1.0 - sigma) & (x < 1.0)
    down = (x < sigma - 1.0) & (x > -1.0)
    out = np.where(up, (x - 1.0 + sigma) / sigma, out)
    return np.where(down, (x + 1.0 - sigma) / sigma, out)


def _act(cfg, s):
    if cfg.activation == "relu":
        return relu(s)
    if cfg.activation == "helu":
        return helu(s, cfg.sigma)
    return s


def _act_grad(cfg, s):
    if cfg.activation == "relu":
        return (s > 0).astype(float)
    if cfg.activation == "helu":
        a = np.abs(s)
        return np.where(a >= 1.0, 1.0, np.where(a > 1.0 - cfg.sigma, 1.0 / cfg.sigma, 0.0))
    return np.ones_like(s)


def _region(cfg, s):
    """Piece of the activation each unit sits on; used to spot kinks."""
    if cfg.activation == "relu":
        return s > 0
    if cfg.activation == "helu":
        return np.digitize(s, [-1.0, cfg.sigma - 1.0, 1.0 - cfg.sigma, 1.0])
    return np.zeros(s.shape, dtype=bool)


# construction --------------------------------------------------------------


def init_network(config: NetworkConfig, seed) -> Network:
    """He-normal weights (variance 2 / fan_in), zero biases, unit BN scale."""
    rng = np.random.default_rng(seed)
    params, running = {}, {}
    w = config.width
    for i in range(config.depth):
        fan_in = config.input_dim if i == 0 else w
        params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, w))
        if config.batch_norm:
            # the BN shift stands in for the stage bias, which mean subtraction would cancel
            params[f"g{i}"] = np.ones(w)
            params[f"be{i}"] = np.zeros(w)
            running[f"mean{i}"] = np.zeros(w)
            running[f"var{i}"] = np.ones(w)
        else:
            params[f"b{i}"] = np.zeros(w)
    params["Wh"] = rng.normal(0.0, np.sqrt(2.0 / w), size=(w, config.output_dim))
    params["bh"] = np.zeros(config.output_dim)
    return Network(config, params, running)


def fit_input_whitening(net: Network, X) -> Network:
    """Freeze a ZCA map (x - mean) C^-1/2 estimated from training inputs.

    Observations from a coherent dictionary concentrate in a few
    directions; whitening is a fixed reparametrization of the first stage
    that evens out the curvature SGD sees. Stored with the running moments.
    """
    X = np.asarray(X, dtype=float)
    w, V = np.linalg.eigh(np.cov(X, rowvar=False))
    floor = w.max() * 1e-12
    net.running["in_mean"] = X.mean(axis=0)
    net.running["in_map"] = (V / np.sqrt(np.maximum(w, floor))) @ V.T
    return net


# forward / backward --------------------------------------------------------


def _stage_forward(net, i, h, train, update_running, cache):
    cfg, P = net.config, net.params
    z = h @ P[f"W{i}"]
    if not cfg.batch_norm:
        z = z + P[f"b{i}"]
    entry = {"h": h}
    if cfg.batch_norm:
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_running:
                net.running[f"mean{i}"] = BN_DECAY * net.running[f"mean{i}"] + (1 - BN_DECAY) * mu
                net.running[f"var{i}"] = BN_DECAY * net.running[f"var{i}"] + (1 - BN_DECAY) * var
        else:
            mu, var = net.running[f"mean{i}"], net.running[f"var{i}"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * inv
        s = P[f"g{i}"] * zhat + P[f"be{i}"]
        entry.update(zhat=zhat, inv=inv)
    else:
        s = z
    entry["s"] = s
    cache[i] = entry
    return _act(cfg, s)


def _forward(net, X, train, update_running=False):
    cfg = net.config
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise ShapeMismatchError(f"expected batch of width {cfg.input_dim}, got shape {X.shape}")
    cache = {}
    h = X
    if "in_map" in net.running:
        h = (X - net.running["in_mean"]) @ net.running["in_map"]
    for block in cfg.blocks():
        out = h
        for i in block:
            out = _stage_forward(net, i, out, train, update_running, cache)
        h = h + out if (cfg.residual and len(block) == 2) else out
    cache["head_in"] = h
    logits = h @ net.params["Wh"] + net.params["bh"]
    return logits, cache


def _stage_backward(net, i, g, cache, grads):
    cfg, P = net.config, net.params
    e = cache[i]
    g = g * _act_grad(cfg, e["s"])
    if cfg.batch_norm:
        zhat, inv = e["zhat"], e["inv"]
        grads[f"g{i}"] = (g * zhat).sum(axis=0)
        grads[f"be{i}"] = g.sum(axis=0)
        gz = g * P[f"g{i}"]
        g = inv * (gz - gz.mean(axis=0) - zhat * (gz * zhat).mean(axis=0))
    else:
        grads[f"b{i}"] = g.sum(axis=0)
    grads[f"W{i}"] = e["h"].T @ g
    return g @ P[f"W{i}"].T


def _backward(net, cache, dlogits):
    cfg, P = net.config, net.params
    grads = {"Wh": cache["head_in"].T @ dlogits, "bh": dlogits.sum(axis=0)}
    g = dlogits @ P["Wh"].T
    for block in reversed(cfg.blocks()):
        skip = cfg.residual and len(block) == 2
        gb = g
        for i in reversed(block):
            gb = _stage_backward(net, i, gb, cache, grads)
        g = g + gb if skip else gb
    return grads


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def forward(net: Network, X, mode: str = "eval") -> np.ndarray:
    """Per-coordinate support probabilities, shape (batch, m).

    Train mode normalizes with batch statistics and updates the running
    moments; eval mode uses the running moments and touches nothing.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    logits, _ = _forward(net, X, mode == "train", update_running=mode == "train")
    return _sigmoid(logits)


def head_outputs(net: Network, X) -> np.ndarray:
    """Eval-mode pre-squash head activations (regression outputs)."""
    return _forward(net, X, False)[0]


def predict_proba(net: Network, X, batch_size: int = 4096) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.vstack([forward(net, X[i : i + batch_size]) for i in range(0, max(len(X), 1), batch_size)])


def predict_scores(net: Network, X) -> np.ndarray:
    """Support scores: probabilities, or |regression output| for quadratic heads."""
    if net.config.loss == "quadratic":
        return np.abs(head_outputs(net, X))
    return predict_proba(net, X)


# losses --------------------------------------------------------------------


def loss(output, target, kind: str = "multilabel") -> float:
    """Per-sample loss averaged over the batch.

    ``multilabel``: binary cross-entropy between probabilities ``output``
    (clamped to [1e-7, 1 - 1e-7]) and 0/1 labels, summed over coordinates.
    ``quadratic``: squared error between head outputs and targets, summed
    over coordinates.
    """
    output = np.atleast_2d(np.asarray(output, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if output.shape != target.shape:
        raise ShapeMismatchError(f"output {output.shape} vs target {target.shape}")
    if kind == "multilabel":
        p = np.clip(output, PROB_CLAMP, 1 - PROB_CLAMP)
        per = -(target * np.log(p) + (1 - target) * np.log1p(-p))
    elif kind == "quadratic":
        per = (output - target) ** 2
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return float(per.sum(axis=1).mean())


def _loss_from_logits(cfg, logits, target):
    B = logits.shape[0]
    if cfg.loss == "multilabel":
        # softplus(a) - t a, written to avoid overflow
        val = np.maximum(logits, 0) - target * logits + np.log1p(np.exp(-np.abs(logits)))
        return float(val.sum() / B), (_sigmoid(logits) - target) / B
    diff = logits - target
    return float((diff**2).sum() / B), 2.0 * diff / B


def loss_and_gradients(net: Network, X, target, *, update_running: bool = False):
    """Training-mode loss and its gradient for every parameter."""
    target = np.asarray(target, dtype=float)
    logits, cache = _forward(net, X, True, update_running)
    if target.shape != logits.shape:
        raise ShapeMismatchError(f"target {target.shape} vs output {logits.shape}")
    value, dlogits = _loss_from_logits(net.config, logits, target)
    return value, _backward(net, cache, dlogits)


# training ------------------------------------------------------------------


def _is_decayed(name):
    return name.startswith("W")


def train(net: Network, X, target, config: TrainConfig, *, log=None):
    """Momentum SGD with weight decay and a step learning-rate schedule.

    Mutates and returns ``net`` along with a per-epoch trace. Each epoch
    draws a fresh permutation from a generator seeded by ``config.seed``;
    a trailing partial batch is dropped. With ``whiten_input`` set and no
    map fitted yet, the input whitening is estimated from ``X`` first.
    """
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=float)
    if len(X) == 0:
        raise ValueError("empty training set")
    if net.config.whiten_input and "in_map" not in net.running:
        fit_input_whitening(net, X)
    rng = np.random.default_rng(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    bs = min(config.batch_size, len(X))
    trace = []
    for epoch in range(config.total_epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X) - bs + 1, bs):
            idx = order[start : start + bs]
            value, grads = loss_and_gradients(net, X[idx], target[idx], update_running=True)
            if not np.isfinite(value):
                raise DivergenceError(f"loss became {value} at epoch {epoch}")
            losses.append(value)
            for name, g in grads.items():
                if config.weight_decay and _is_decayed(name):
                    g = g + config.weight_decay * net.params[name]
                v = velocity[name]
                v *= config.momentum
                v -= lr * g
                net.params[name] += v
        record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)), "batch_losses": losses}
        trace.append(record)
        if log is not None:
            log(record)
    return net, trace


# verification ----------------------------------------------------------------


@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_error: float
    checked: int
    skipped_near_kink: int
    worst_parameter: str
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def gradient_check(
    net: Network, sample, tolerance: float = 1e-4, *, coordinates: int = 200, step: float = 1e-5, floor: float = 1e-8, seed=0
):
    """Compare analytic gradients with central differences.

    ``sample`` is ``(X, target)``; the loss is the training-mode loss with
    batch statistics recomputed at every probe (running moments untouched).
    Coordinates whose probe moves any unit across an activation kink are
    redrawn. Relative error is |a - f| / max(|a|, |f|, floor).
    """
    X, target = sample
    if net.parameter_count > 50_000:
        raise ValueError("network too large for finite differences")
    work = net.copy()
    _, grads = loss_and_gradients(work, X, target)
    cfg = work.config

    def signature():
        _, cache = _forward(work, X, True)
        return [_region(cfg, cache[i]["s"]) for i in range(cfg.depth)]

    base = signature()
    names = sorted(work.params)
    sizes = np.array([work.params[k].size for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    candidates = rng.permutation(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    for flat in candidates:
        if checked >= coordinates:
            break
        p = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, local = names[p], int(flat - offsets[p])
        arr = work.params[name].reshape(-1)
        orig = arr[local]
        vals, kinked = [], False
        for delta in (step, -step):
            arr[local] = orig + delta
            vals.append(loss_and_gradients(work, X, target)[0])
            if cfg.activation != "identity" and any(
                np.any(a != b) for a, b in zip(signature(), base)
            ):
                kinked = True
        arr[local] = orig
        if kinked:
            skipped += 1
            continue
        numeric = (vals[0] - vals[1]) / (2 * step)
        analytic = grads[name].reshape(-1)[local]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if rel > worst:
            worst, worst_name = rel, name
        checked += 1
    return GradientCheckReport(float(worst), checked, skipped, worst_name, tolerance)


# checkpoints -----------------------------------------------------------------


def _digest(net: Network) -> str:
    h = hashlib.sha256(json.dumps(asdict(net.config), sort_keys=True).encode())
    for store in (net.params, net.running):
        for k in sorted(store):
            h.update(k.encode())
            h.update(np.ascontiguousarray(store[k], dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(net: Network, path) -> str:
    """Write config, parameters and running moments to an .npz; returns the content hash."""
    digest = _digest(net)
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    arrays.update({f"running/{k}": v for k, v in net.running.items()})
    meta = json.dumps({"config": asdict(net.config), "sha256": digest})
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())
    return digest


def load_checkpoint(path) -> Network:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("param/")}
        running = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("running/")}
    net = Network(NetworkConfig(**meta["config"]), params, running)
    if _digest(net) != meta["sha256"]:
        raise ValueError(f"{path}: checkpoint content hash mismatch")
    return net


def checkpoint_hash(net: Network) -> str:
    return _digest(net)
