"""Minibatch SGD training and evaluation for every pipeline phase."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..engine import GradientTape, backward, cosine_lr, sgd_step
from ..engine import autograd as ag
from ..engine.ops import cross_entropy
from ..errors import ProvenanceError, RangeError, TrainingDiverged, UsageError
from ..graph.runtime import forward
from . import checkpoint as ckpt

TRAINABLE = ("vanilla", "expanded")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr_init: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    dtype: str = "float32"
    schedule: str = "cosine"
    eval_every: int = 1
    augment: bool = False
    grad_clip: float = 0.0
    warmup_epochs: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise RangeError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise RangeError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr_init = 0 is accepted so a frozen run can be checked end to end
        if self.lr_init < 0:
            raise RangeError(f"lr_init must be >= 0, got {self.lr_init}")
        if not 0.0 <= self.momentum < 1.0:
            raise RangeError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise RangeError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.schedule not in ("cosine", "constant"):
            raise RangeError(f"unknown schedule {self.schedule!r}")
        if self.eval_every < 1:
            raise RangeError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.grad_clip < 0:
            raise RangeError(f"grad_clip must be >= 0 (0 disables), got {self.grad_clip}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise RangeError(f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}")
        if self.dtype not in ("float32", "float64"):
            raise RangeError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)


def evaluate(model, dataset, batch_size=256):
    """Top-1 accuracy and mean cross-entropy; ties in the argmax go to the lowest class index."""
    n = len(dataset)
    if n == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    correct = 0
    loss_sum = 0.0
    for s in range(0, n, batch_size):
        x = dataset.images[s:s + batch_size]
        y = dataset.labels[s:s + batch_size]
        logits = forward(model, x)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
        loss, _ = cross_entropy(logits, y)
        loss_sum += float(loss) * len(y)
    return correct / n, loss_sum / n


def _augment(x, rng):
    """Random 1-pixel shift crop with reflection padding plus horizontal flip."""
    n, _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    dy = rng.integers(0, 3, size=n)
    dx = rng.integers(0, 3, size=n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(x)
    for k in range(n):
        crop = padded[k, :, dy[k]:dy[k] + h, dx[k]:dx[k] + w]
        out[k] = crop[:, :, ::-1] if flip[k] else crop
    return out


def learning_rate(step, total_steps, iters_per_epoch, config):
    """Linear warmup over ``warmup_epochs``, then cosine (or constant) over the remaining steps."""
    warm = config.warmup_epochs * iters_per_epoch
    if step < warm:
        return config.lr_init * (step + 1) / warm
    if config.schedule == "constant":
        return config.lr_init
    return cosine_lr(step - warm, total_steps - warm, config.lr_init)


def _grad_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def _emit(log, record):
    if log is None:
        return
    if callable(log):
        log(record)
    else:
        with open(log, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def train(model, dataset, config, test_set=None, step_model=None, checkpoint_dir=None, resume=False,
          phase="train", log=None):
    """Train ``model`` in place with momentum SGD on a per-step cosine schedule.

    ``step_model(model, step)`` may return a variant of the model (sharing
    its parameters) to run for that step; PLT uses it to set slopes.
    ``log`` is a path for line-delimited JSON records or a callable.
    Returns ``(model, history)`` with one record per epoch.
    """
    if model.provenance not in TRAINABLE:
        raise ProvenanceError(f"train accepts {TRAINABLE} models, got provenance {model.provenance!r}")
    if len(dataset) == 0:
        raise UsageError("training set is empty")
    if model.dtype != config.dtype:
        model = model.astype(config.dtype)
    n = len(dataset)
    iters = math.ceil(n / config.batch_size)
    total_steps = config.epochs * iters
    rng = np.random.default_rng(config.seed)
    velocity = {}
    history = []
    step = 0
    start_epoch = 0

    if checkpoint_dir is not None and not resume:
        ckpt.clear(checkpoint_dir, phase)
    if resume and checkpoint_dir is not None:
        state = ckpt.load_latest(checkpoint_dir, phase)
        if state is not None:
            model = state.model if state.model.dtype == config.dtype else state.model.astype(config.dtype)
            velocity = state.velocity
            step = state.step
            start_epoch = state.epoch
            history = state.history
            rng.bit_generator.state = state.rng_state

    dtype = np.dtype(config.dtype)
    for epoch in range(start_epoch, config.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for b in range(iters):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            x = dataset.images[idx].astype(dtype, copy=False)
            y = dataset.labels[idx]
            if config.augment:
                x = _augment(x, rng)
            lr = learning_rate(step, total_steps, iters, config)
            run = step_model(model, step) if step_model is not None else model
            tape = GradientTape()
            logits = forward(run, x, tape)
            loss = ag.cross_entropy(logits, y, tape)
            grads = backward(tape, np.ones((), dtype=dtype))
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"{phase}: non-finite loss at step {step} (lr={lr:.6g}, grad-norm={_grad_norm(grads):.6g})"
                )
            if config.grad_clip > 0:
                norm = _grad_norm(grads)
                if norm > config.grad_clip:
                    scale = dtype.type(config.grad_clip / norm)
                    grads = {k: g * scale for k, g in grads.items()}
            sgd_step(model.params, grads, velocity, lr, config.momentum, config.weight_decay)
            loss_sum += float(loss) * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            step += 1
        record = {
            "phase": phase,
            "epoch": epoch + 1,
            "step": step,
            "lr": lr,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
        }
        if test_set is not None and ((epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs):
            run = step_model(model, step) if step_model is not None else model
            record["test_acc"], record["test_loss"] = evaluate(run, test_set)
        history.append(record)
        if checkpoint_dir is not None:
            ckpt.save(checkpoint_dir, phase, model, velocity, step, epoch + 1, rng.bit_generator.state, history)
        _emit(log, record)
    return model, history
