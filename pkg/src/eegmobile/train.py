"""Losses, Adam, step decay and the fit loop for teacher fine-tuning and
student distillation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .bench import distance_metric
from .data import DatasetContainer
from .errors import ConfigError, DimensionError, NumericError
from .models import Model, forward, predict
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


@dataclass
class KDConfig:
    temperature: float = 20.0
    lam: float = 0.9
    epochs: int = 15
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.3
    scheduler_step: int = 6
    scheduler_gamma: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # standardise targets with train-label statistics held in the head buffers
    normalize_targets: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.epochs < 1 or self.batch_size < 1 or self.scheduler_step < 1:
            raise ConfigError("epochs, batch_size and scheduler_step must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be >= 0")


# losses ----------------------------------------------------------------------

def true_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every entry."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = ops.sub(pred, target)
    return ops.mean(ops.mul(diff, diff))


def distill_loss(student_out: Tensor, teacher_out, T: float, scale: bool = True) -> Tensor:
    """T^2 * batch-mean KL(softmax(teacher/T) || softmax(student/T)).

    The teacher side is a constant: no gradient flows to it.
    """
    if not T > 0:
        raise ConfigError(f"temperature must be > 0, got {T}")
    t = teacher_out.data if isinstance(teacher_out, Tensor) else np.asarray(teacher_out, np.float32)
    if t.shape != student_out.shape:
        raise DimensionError(f"student {student_out.shape} and teacher {t.shape} outputs differ")
    loss = ops.mean(ops.softmax_kl(t, student_out, axis=1, scale=1.0 / T))
    return ops.mul(loss, float(T) * float(T)) if scale else loss


def kd_loss(student_out: Tensor, teacher_out, target, cfg: KDConfig) -> Tensor:
    """(1 - lambda) * true_loss + lambda * distill_loss."""
    lam = cfg.lam
    if lam == 0.0:
        return true_loss(student_out, target)
    if teacher_out is None:
        raise ConfigError("lambda > 0 needs teacher outputs")
    if lam == 1.0:
        return distill_loss(student_out, teacher_out, cfg.temperature)
    return ops.add(ops.mul(true_loss(student_out, target), 1.0 - lam),
                   ops.mul(distill_loss(student_out, teacher_out, cfg.temperature), lam))


# optimiser -------------------------------------------------------------------

@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: OptimState, params: list[np.ndarray], grads: list[np.ndarray | None],
              lr: float, weight_decay: float = 0.0) -> list[np.ndarray]:
    """One Adam update in place, with bias correction and weight decay added
    to the gradient (classic L2 coupling). ``None`` gradients count as zero."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise DimensionError("parameter, gradient and moment lists differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    step = np.float32(lr / c1)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if weight_decay:
            g = g + np.float32(weight_decay) * p
        m *= np.float32(b1)
        m += np.float32(1 - b1) * g
        v *= np.float32(b2)
        v += np.float32(1 - b2) * (g * g)
        denom = np.sqrt(v / np.float32(c2)) + np.float32(state.eps)
        p -= step * m / denom
    return params


def lr_at(epoch: int, cfg: KDConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.scheduler_gamma ** (epoch // cfg.scheduler_step)


# training loop ---------------------------------------------------------------

def set_target_stats(m: Model, labels: np.ndarray) -> None:
    lab = labels.astype(np.float64)
    std = lab.std(axis=0)
    m.buffers["head.target_mean"] = lab.mean(axis=0).astype(np.float32)
    m.buffers["head.target_std"] = np.where(std > 0, std, 1.0).astype(np.float32)


def _check_grads(m: Model) -> None:
    for name, p in m.params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError("backward", f"gradient of {name}")


def fit(model: Model, teacher: Model | None, train: DatasetContainer, val: DatasetContainer,
        cfg: KDConfig, eval_batch_size: int = 256) -> list[dict]:
    """Train ``model`` in place; with a teacher the loss is :func:`kd_loss`,
    otherwise :func:`true_loss`. Returns one record per epoch
    (epoch, lr, train_loss, val_rmse in pixels) and leaves the model holding
    the parameters of its best validation epoch."""
    if train.n_samples == 0 or val.n_samples == 0:
        raise ConfigError("fit needs nonempty train and validation sets")
    if cfg.lam > 0 and teacher is None:
        raise ConfigError("lambda > 0 needs a teacher model")
    if cfg.normalize_targets:
        set_target_stats(model, train.labels)

    teacher_out = None
    if teacher is not None and cfg.lam > 0:
        teacher.requires_grad_(False)
        teacher_out = predict(teacher, train.eeg, eval_batch_size)

    model.requires_grad_(True)
    params = model.parameters()
    state = OptimState(cfg.beta1, cfg.beta2, cfg.eps)
    history: list[dict] = []
    best_rmse, best_state = np.inf, None

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(train.n_samples)
        drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            x = Tensor(train.eeg[idx])
            y = train.labels[idx]
            with Tape() as tape:
                out = forward(model, x, train=True, rng=drop_rng)
                t_out = teacher_out[idx] if teacher_out is not None else None
                loss = kd_loss(out, t_out, y, cfg) if teacher_out is not None else true_loss(out, y)
            if not np.isfinite(loss.data).all():
                raise NumericError("loss", f"epoch {epoch}")
            tape.backward(loss)
            _check_grads(model)
            adam_step(state, [p.data for p in params], [p.grad for p in params], lr, cfg.weight_decay)
            model.zero_grad()
            total += float(loss.data) * len(idx)
            seen += len(idx)
        val_rmse = distance_metric(predict(model, val.eeg, eval_batch_size), val.labels, px_to_mm=1.0)
        rec = {"epoch": epoch, "lr": lr, "train_loss": total / seen, "val_rmse": val_rmse}
        history.append(rec)
        log.info("epoch %d lr %.2e train_loss %.4f val_rmse %.2f", epoch, lr, rec["train_loss"], val_rmse)
        if val_rmse < best_rmse:
            best_rmse, best_state = val_rmse, model.copy_state()

    model.load_state(best_state)
    return history


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_rmse")


def write_history(path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps({k: rec[k] for k in HISTORY_FIELDS}) + "\n")


def read_history(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
