"""Checkpoints: ``phase-<tag>/step-<n>.nbm`` plus an optimizer sidecar.

The sidecar pair ``step-<n>.opt.npz`` (velocity tensors) and
``step-<n>.json`` (step, epoch, RNG state, history) is written before the
model file, so a model file only exists once its state is complete.
"""

import json
import os
import re
import shutil
from dataclasses import dataclass

import numpy as np

from ..graph.io import load_model, save_model

_STEP_RE = re.compile(r"^step-(\d+)\.nbm$")


@dataclass
class CheckpointState:
    model: object
    velocity: dict
    step: int
    epoch: int
    rng_state: dict
    history: list
    phase: str


def phase_dir(root, phase):
    return os.path.join(root, f"phase-{phase}")


def save(root, phase, model, velocity, step, epoch, rng_state, history):
    d = phase_dir(root, phase)
    os.makedirs(d, exist_ok=True)
    base = os.path.join(d, f"step-{step}")
    tmp = base + ".opt.tmp.npz"
    np.savez(tmp, **{k.replace("/", "|"): v for k, v in sorted(velocity.items())})
    os.replace(tmp, base + ".opt.npz")
    meta = {"phase": phase, "step": step, "epoch": epoch, "rng_state": rng_state, "history": history}
    with open(base + ".json.tmp", "w") as f:
        json.dump(meta, f, sort_keys=True)
    os.replace(base + ".json.tmp", base + ".json")
    save_model(model, base + ".nbm")
    return base + ".nbm"


def clear(root, phase):
    """Drop every checkpoint of ``phase`` (a fresh, non-resumed run starts clean)."""
    shutil.rmtree(phase_dir(root, phase), ignore_errors=True)


def latest_step(root, phase):
    d = phase_dir(root, phase)
    if not os.path.isdir(d):
        return None
    steps = [int(m.group(1)) for m in map(_STEP_RE.match, os.listdir(d)) if m]
    return max(steps) if steps else None


def load(root, phase, step):
    base = os.path.join(phase_dir(root, phase), f"step-{step}")
    with open(base + ".json") as f:
        meta = json.load(f)
    with np.load(base + ".opt.npz") as z:
        velocity = {k.replace("|", "/"): z[k].copy() for k in z.files}
    return CheckpointState(load_model(base + ".nbm"), velocity, meta["step"], meta["epoch"], meta["rng_state"],
                           meta["history"], meta["phase"])


def load_latest(root, phase):
    step = latest_step(root, phase)
    return None if step is None else load(root, phase, step)
