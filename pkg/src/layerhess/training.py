"""Full-batch training with checkpointed snapshot capture."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import datasets as ds_mod
from .datasets import CLASSIFICATION, Dataset, Rng
from .local_hessian import all_neuron_block_hessians
from .network import Activation, Network, activation_eval, init_network

log = logging.getLogger(__name__)

CROSS_ENTROPY = "cross_entropy"
MSE = "mse"
LOSSES = (CROSS_ENTROPY, MSE)
OPTIMIZERS = ("sgd", "adam", "rmsprop")

VARIANT_HIDDEN = {
    "no": [4],
    "sure": [32, 16],
    "huge": [256, 128, 64],
}

OPTIMIZER_DEFAULTS = {
    "sgd": {"lr": 0.05},
    "adam": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "rmsprop": {"lr": 0.001, "decay": 0.9, "eps": 1e-8},
}

DEFAULT_HESSIAN_STORE_CAP = 2048


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient.

    ``snapshots`` holds everything captured before the failure.
    """

    def __init__(self, message: str, snapshots=None):
        super().__init__(message)
        self.snapshots = list(snapshots or [])


# ---------------------------------------------------------------- losses

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(_log_softmax(np.atleast_2d(np.asarray(logits, dtype=np.float64))))


def loss_eval(kind: str, predictions, targets) -> tuple[float, np.ndarray]:
    """Mean loss over samples and its gradient w.r.t. ``predictions``.

    Cross-entropy takes raw logits (softmax applied internally) and integer
    class targets; MSE averages the squared error over every element.
    """
    p = np.asarray(predictions, dtype=np.float64)
    if kind == CROSS_ENTROPY:
        single = p.ndim == 1
        logits = np.atleast_2d(p)
        t = np.atleast_1d(np.asarray(targets))
        if t.shape != (logits.shape[0],):
            raise ValueError(f"targets shape {t.shape} does not match {logits.shape[0]} samples")
        if not np.issubdtype(t.dtype, np.integer):
            if not np.all(t == np.round(t)):
                raise ValueError("cross-entropy targets must be class indices")
            t = t.astype(np.int64)
        n, c = logits.shape
        if np.any((t < 0) | (t >= c)):
            raise ValueError(f"class index outside [0, {c})")
        logp = _log_softmax(logits)
        loss = -float(np.mean(logp[np.arange(n), t]))
        grad = np.exp(logp)
        grad[np.arange(n), t] -= 1.0
        grad /= n
        return loss, (grad[0] if single else grad)
    if kind == MSE:
        t = np.asarray(targets, dtype=np.float64)
        if t.size != p.size:
            raise ValueError(f"prediction shape {p.shape} does not match targets {t.shape}")
        diff = p - t.reshape(p.shape)
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    raise ValueError(f"unknown loss {kind!r}")


def backprop(net: Network, x, target, loss: str) -> tuple[float, list[np.ndarray]]:
    """Total loss and per-block gradients in each block's flattening order.

    ``x`` may be one sample or a batch (rows are samples).
    """
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != net.n_in:
        raise ValueError(f"network expects {net.n_in} inputs, got {h.shape[1]}")
    acts, pres = [h], []
    for blk in net.blocks:
        u = h @ blk.weights.T + blk.bias
        h = activation_eval(blk.activation, u)
        pres.append(u)
        acts.append(h)
    if loss == CROSS_ENTROPY:
        target = np.atleast_1d(np.asarray(target))
    value, dout = loss_eval(loss, h, target)
    grads: list[np.ndarray] = [None] * len(net.blocks)  # type: ignore[list-item]
    delta = dout * activation_eval(net.blocks[-1].activation, pres[-1], 1)
    for i in range(len(net.blocks) - 1, -1, -1):
        blk = net.blocks[i]
        gw = delta.T @ acts[i]
        gb = delta.sum(axis=0)
        grads[i] = np.concatenate([gw.reshape(-1), gb])
        if i:
            delta = (delta @ blk.weights) * activation_eval(net.blocks[i - 1].activation,
                                                            pres[i - 1], 1)
    return value, grads


# ------------------------------------------------------------ optimizers

class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    kind: str
    hyper: dict
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def make_optimizer(kind: str, **hyper) -> OptimizerState:
    kind = kind.lower()
    if kind not in OPTIMIZER_DEFAULTS:
        raise ConfigError(f"unknown optimizer {kind!r}; choose from {', '.join(OPTIMIZERS)}")
    merged = dict(OPTIMIZER_DEFAULTS[kind])
    for key, val in hyper.items():
        if val is None:
            continue
        if key not in merged:
            raise ConfigError(f"{kind} has no hyperparameter {key!r}")
        merged[key] = float(val)
    return OptimizerState(kind, merged)


def optimizer_step(state: OptimizerState, params: list[np.ndarray],
                   grads: list[np.ndarray]) -> list[np.ndarray]:
    """Apply one update; moment buffers in ``state`` are updated in place."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient, aborting")
    hp = state.hyper
    state.step += 1
    if state.kind == "sgd":
        return [p - hp["lr"] * g for p, g in zip(params, grads)]
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    out = []
    if state.kind == "adam":
        b1, b2 = hp["beta1"], hp["beta2"]
        c1 = 1.0 - b1 ** state.step
        c2 = 1.0 - b2 ** state.step
        for i, (p, g) in enumerate(zip(params, grads)):
            state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
            state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
            out.append(p - hp["lr"] * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + hp["eps"]))
        return out
    rho = hp["decay"]
    for i, (p, g) in enumerate(zip(params, grads)):
        state.v[i] = rho * state.v[i] + (1.0 - rho) * g * g
        out.append(p - hp["lr"] * g / (np.sqrt(state.v[i]) + hp["eps"]))
    return out


# --------------------------------------------------------------- metrics

def binary_auc(targets, scores) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    y = np.asarray(targets).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: targets contain a single class")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_metrics(targets, scores) -> dict:
    """Accuracy plus macro Precision/Recall/F1 and AUC.

    ``scores`` is either an (n, C) matrix of class probabilities or a vector
    of positive-class scores for a binary problem.
    """
    y = np.asarray(targets).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 1:
        s = np.column_stack([1.0 - s, s])
    n, c = s.shape
    if y.shape != (n,):
        raise ValueError("targets and scores disagree on sample count")
    pred = np.argmax(s, axis=1)
    prec, rec, f1 = [], [], []
    for k in range(c):
        tp = int(np.sum((pred == k) & (y == k)))
        fp = int(np.sum((pred == k) & (y != k)))
        fn = int(np.sum((pred != k) & (y == k)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    if c == 2:
        auc = binary_auc(y == 1, s[:, 1])
    else:
        aucs = [binary_auc(y == k, s[:, k]) for k in range(c) if 0 < np.sum(y == k) < n]
        if not aucs:
            raise ValueError("AUC undefined: targets contain a single class")
        auc = float(np.mean(aucs))
    return {
        "Accuracy": float(np.mean(pred == y)),
        "Precision": float(np.mean(prec)),
        "Recall": float(np.mean(rec)),
        "F1": float(np.mean(f1)),
        "AUC": auc,
    }


def regression_metrics(targets, predictions) -> dict:
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if t.size == 0 or t.size != p.size:
        raise ValueError("targets and predictions must be non-empty and equal length")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R2 undefined for constant targets")
    err = p - t
    return {
        "R2": 1.0 - float(np.sum(err * err)) / ss_tot,
        "MAE": float(np.mean(np.abs(err))),
        "RMSE": float(np.sqrt(np.mean(err * err))),
    }


# -------------------------------------------------------------- training

@dataclass
class TrainConfig:
    variant: str = "sure"
    hidden: list[int] | None = None  # defaults to the variant preset
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    optimizer: str = "adam"
    lr: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    eps: float | None = None
    decay: float | None = None
    loss: str | None = None  # inferred from the dataset task when unset
    iterations: int = 300
    checkpoint_every: int = 20
    seed: int = 0
    init_scale: float = 1.0
    hessian_store_cap: int = DEFAULT_HESSIAN_STORE_CAP
    run_id: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANT_HIDDEN:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from no, sure, huge")
        if self.hidden is None:
            self.hidden = list(VARIANT_HIDDEN[self.variant])
        if self.iterations < 1 or self.checkpoint_every < 1:
            raise ConfigError("iterations and checkpoint_every must be >= 1")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")
        if self.loss is not None and self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {', '.join(LOSSES)}")
        for name in (self.hidden_activation, self.output_activation):
            try:
                Activation(name)
            except ValueError:
                raise ConfigError(f"unknown activation {name!r}") from None
        make_optimizer(self.optimizer, **self.optimizer_hyper())

    def optimizer_hyper(self) -> dict:
        keys = {"sgd": ("lr",), "adam": ("lr", "beta1", "beta2", "eps"),
                "rmsprop": ("lr", "decay", "eps")}.get(self.optimizer.lower(), ())
        return {k: getattr(self, k) for k in keys}

    def resolved_loss(self, task: str) -> str:
        expected = CROSS_ENTROPY if task == CLASSIFICATION else MSE
        if self.loss is not None and self.loss != expected:
            raise ConfigError(f"loss {self.loss!r} does not fit a {task} dataset (use {expected})")
        return expected


def checkpoint_schedule(iterations: int, every: int) -> list[int]:
    its = list(range(0, iterations + 1, every))
    if its[-1] != iterations:
        its.append(iterations)
    return its


def variant_widths(config: TrainConfig, dataset: Dataset) -> list[int]:
    return [dataset.n_features, *config.hidden, dataset.output_dim]


def build_network(config: TrainConfig, dataset: Dataset) -> Network:
    widths = variant_widths(config, dataset)
    acts = [config.hidden_activation] * (len(widths) - 2) + [config.output_activation]
    return init_network(widths, acts, Rng(config.seed), config.init_scale)


def parameter_count(config: TrainConfig, dataset: Dataset) -> int:
    w = variant_widths(config, dataset)
    return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


@dataclass
class PreparedData:
    train: Dataset
    test: Dataset
    y_mean: float = 0.0
    y_scale: float = 1.0

    @property
    def probe(self) -> np.ndarray:
        return self.train.features[0]


def prepare(dataset: Dataset) -> PreparedData:
    """Standardize features (and regression targets), then split 80/20."""
    std = ds_mod.standardize(dataset)
    y_mean, y_scale = 0.0, 1.0
    if std.task != CLASSIFICATION:
        y_mean = float(std.targets.mean())
        y_scale = float(std.targets.std()) or 1.0
        std = replace(std, targets=(std.targets - y_mean) / y_scale)
    train, test = ds_mod.train_test_split(std)
    return PreparedData(train, test, y_mean, y_scale)


def evaluate(net: Network, data: Dataset, prep: PreparedData) -> dict:
    out = net.predict(data.features)
    if data.task == CLASSIFICATION:
        return classification_metrics(data.targets, softmax(out))
    pred = out[:, 0] * prep.y_scale + prep.y_mean
    return regression_metrics(data.targets * prep.y_scale + prep.y_mean, pred)


def _targets_for(loss: str, data: Dataset):
    return data.targets if loss == CROSS_ENTROPY else data.targets.reshape(-1, 1)


def train(config: TrainConfig, dataset: Dataset) -> list:
    """Train on the standardized 80% split and capture a snapshot at each checkpoint.

    The Hessian probe is the first training sample. Raises
    :class:`TrainingError` (carrying the partial snapshot list) on a
    non-finite loss or gradient.
    """
    from .snapshot import capture  # local import: snapshot depends on this module's metrics

    loss_kind = config.resolved_loss(dataset.task)
    prep = prepare(dataset)
    net = build_network(config, dataset)
    opt = make_optimizer(config.optimizer, **config.optimizer_hyper())
    schedule = set(checkpoint_schedule(config.iterations, config.checkpoint_every))
    run_id = config.run_id or f"{dataset.name}-{config.variant}-s{config.seed}"
    meta = {"run_id": run_id, "variant": config.variant, "dataset": dataset.name,
            "task": dataset.task}
    x, y = prep.train.features, _targets_for(loss_kind, prep.train)
    snaps = []
    for it in range(config.iterations + 1):
        value, grads = backprop(net, x, y, loss_kind)
        if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError(f"non-finite loss/gradient at iteration {it}", snaps)
        if it in schedule:
            scores = evaluate(net, prep.train, prep)
            scores["train_loss"] = value
            test_scores = evaluate(net, prep.test, prep)
            hessians = all_neuron_block_hessians(net, prep.probe)
            snaps.append(capture(net, grads, hessians, scores, it, meta,
                                 hessian_store_cap=config.hessian_store_cap,
                                 test_scores=test_scores))
            log.debug("%s it=%d loss=%.6g", run_id, it, value)
        if it < config.iterations:
            params = [b.flat_params() for b in net.blocks]
            try:
                new = optimizer_step(opt, params, grads)
            except NonFiniteGradient as exc:
                raise TrainingError(str(exc), snaps) from None
            net = Network([b.with_params(p) for b, p in zip(net.blocks, new)])
    return snaps
