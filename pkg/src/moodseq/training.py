"""Cross-entropy loss, Adam, early stopping and the shared epoch loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros((B, K), dtype=logits.dtype)
    onehot[np.arange(B), labels] = 1.0
    logp = T.log_softmax(logits, axis=-1)
    return -(logp * Tensor(onehot)).sum() * (1.0 / B)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, named_params: Sequence[tuple[str, Tensor]], **config):
        self.params = list(named_params)
        self.state = AdamState(**config)

    def step(self) -> None:
        adam_step(self.state, self.params)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def adam_step(state: AdamState, named_params: Sequence[tuple[str, Tensor]], grads=None) -> None:
    """One bias-corrected Adam update.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is an
    error rather than a silent skip.
    """
    grads = grads if grads is not None else [p.grad for _, p in named_params]
    for (name, _), g in zip(named_params, grads):
        if g is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for (name, p), g in zip(named_params, grads):
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    norm = T.parameters_grad_norm(params)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class EarlyStopConfig:
    patience: int = 5
    restore_best: bool = True
    enabled: bool = True


class EarlyStopping:
    """Tracks the monitored validation loss; ``update`` returns True when training should stop."""

    def __init__(self, cfg: EarlyStopConfig):
        self.cfg = cfg
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.cfg.enabled and self.wait >= self.cfg.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]])


class Trainable(Protocol):
    def forward(self, inputs, training: bool = False) -> Tensor: ...
    def named_parameters(self) -> list[tuple[str, Tensor]]: ...
    def state_dict(self) -> dict: ...
    def load_state_dict(self, state: dict) -> None: ...
    def train(self, mode: bool = True): ...


class Dataset(Protocol):
    labels: np.ndarray

    def __len__(self) -> int: ...
    def take(self, idx: np.ndarray): ...
    def epoch_view(self, rng: np.random.Generator) -> "Dataset": ...


@dataclass
class FitConfig:
    epochs_max: int = 100
    batch_size: int = 32
    clip_norm: float = 5.0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    early: EarlyStopConfig = field(default_factory=EarlyStopConfig)


def evaluate_loss(model: Trainable, data: Dataset, batch_size: int = 64) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in inference mode."""
    model.train(False)
    total, correct, n = 0.0, 0, len(data)
    with T.no_grad():
        for lo in range(0, n, batch_size):
            idx = np.arange(lo, min(lo + batch_size, n))
            inputs, labels = data.take(idx)
            logits = model.forward(inputs, training=False)
            total += cross_entropy(logits, labels).item() * len(idx)
            correct += int((logits.data.argmax(axis=-1) == labels).sum())
    return total / n, correct / n


def fit(model: Trainable, train: Dataset, val: Dataset, cfg: FitConfig | None = None,
        seed: int = 0) -> TrainingHistory:
    cfg = cfg or FitConfig()
    if len(train) == 0 or len(val) == 0:
        raise ValueError("fit needs non-empty training and validation sets")
    rng = np.random.default_rng(seed)
    if hasattr(model, "reseed"):
        model.reseed(seed)
    named = model.named_parameters()
    params = [p for _, p in named]
    opt = Adam(named, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    stopper = EarlyStopping(cfg.early)
    history = TrainingHistory()
    best_state = model.state_dict()

    for epoch in range(1, cfg.epochs_max + 1):
        view = train.epoch_view(rng)
        order = rng.permutation(len(view))
        model.train(True)
        run_loss, run_correct = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            inputs, labels = view.take(idx)
            opt.zero_grad()
            logits = model.forward(inputs, training=True)
            loss = cross_entropy(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, batch starting {lo}")
            run_correct += int((logits.data.argmax(axis=-1) == labels).sum())
            loss.backward()
            clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            run_loss += value * len(idx)
        train_loss = run_loss / len(order)
        train_acc = run_correct / len(order)
        val_loss, val_acc = evaluate_loss(model, val)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss became {val_loss} at epoch {epoch}")
        history.records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
        log.info("epoch %d train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f",
                 epoch, train_loss, train_acc, val_loss, val_acc)
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_state = model.state_dict()
        if stop:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_epoch
    if cfg.early.restore_best:
        model.load_state_dict(best_state)
    model.train(False)
    return history
