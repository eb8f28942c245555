"""expand -> train giant -> PLT -> contract -> evaluate, plus an equal-budget vanilla baseline."""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import engine
from ..contraction import contract_model
from ..errors import NetBoosterError
from ..expansion import expand_model
from ..graph.io import save_model
from ..graph.runtime import predict
from ..graph.shapes import count_complexity
from ..oracle import relative_error
from ..plt import make_schedule, plt_phase
from .train import TrainConfig, evaluate, train


class PhaseError(NetBoosterError):
    """A pipeline phase failed; ``phase`` names it and the cause is chained."""

    def __init__(self, phase, cause):
        super().__init__(f"phase {phase!r} failed: {type(cause).__name__}: {cause}")
        self.phase = phase


@dataclass(frozen=True)
class PLTSettings:
    decay_epochs: int = 2
    finetune_epochs: int = 10


@dataclass(frozen=True)
class PipelineConfigs:
    giant: TrainConfig = TrainConfig(epochs=30)
    tune: TrainConfig = TrainConfig(epochs=12, lr_init=0.01)
    expand_seed: int = 0
    baseline: bool = True


@dataclass
class PipelineReport:
    seed: int
    backend: str
    plan: dict
    vanilla_hash: str
    contracted_hash: str
    complexity: dict
    trajectories: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    agreement_rate: float = 0.0
    logit_max_rel_diff: float = 0.0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def summary(self):
        c = self.complexity
        lines = [
            f"seed {self.seed}  backend {self.backend}",
            f"vanilla     flops {c['vanilla']['flops']:>10}  params {c['vanilla']['params']:>8}",
            f"expanded    flops {c['expanded']['flops']:>10}  params {c['expanded']['params']:>8}",
            f"contracted  flops {c['contracted']['flops']:>10}  params {c['contracted']['params']:>8}",
            f"architecture restored: {self.vanilla_hash == self.contracted_hash}",
            f"linearized/contracted agreement {self.agreement_rate:.4f}, logit max rel diff {self.logit_max_rel_diff:.3e}",
        ]
        for k in sorted(self.final):
            lines.append(f"{k:<22} {self.final[k]:.4f}")
        return "\n".join(lines)


def _totals(model):
    flops, params = count_complexity(model).totals()
    return {"flops": flops, "params": params}


def _phase(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:
        raise PhaseError(name, e) from e


def run_pipeline(vanilla_model, plan, plt_settings, configs, train_set, test_set, out_dir=None, resume=False,
                 seed=0):
    """Run every stage and return a :class:`PipelineReport`.

    With ``out_dir`` set, stage models, checkpoints, ``metrics.jsonl`` and
    ``report.json`` / ``report.txt`` are written there. The tuning config's
    epoch count must equal decay + finetune epochs.
    """
    ckpt_dir = log = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        log = os.path.join(out_dir, "metrics.jsonl")
        if not resume and os.path.exists(log):
            os.remove(log)

    def dump(model, name):
        if out_dir is not None:
            save_model(model, os.path.join(out_dir, name))

    dtype = configs.giant.dtype
    vanilla = vanilla_model.astype(dtype)
    dump(vanilla, "vanilla.nbm")

    expanded = _phase("expand", expand_model, vanilla, plan, seed=configs.expand_seed)
    dump(expanded, "expanded.nbm")
    giant, giant_hist = _phase("giant", train, expanded, train_set, configs.giant, test_set=test_set,
                               checkpoint_dir=ckpt_dir, resume=resume, phase="giant", log=log)
    dump(giant, "giant.nbm")

    iters = -(-len(train_set) // configs.tune.batch_size)
    schedule = _phase("plt", make_schedule, giant, plt_settings.decay_epochs, iters, plt_settings.finetune_epochs)
    linearized, plt_hist = _phase("plt", plt_phase, giant, schedule, configs.tune, train_set, test_set=test_set,
                                  checkpoint_dir=ckpt_dir, resume=resume, log=log)
    dump(linearized, "linearized.nbm")

    contracted = _phase("contract", contract_model, linearized)
    dump(contracted, "contracted.nbm")

    def final_eval():
        lin_logits = predict(linearized, test_set.images)
        con_logits = predict(contracted, test_set.images)
        agree = float(np.mean(np.argmax(lin_logits, 1) == np.argmax(con_logits, 1)))
        return agree, relative_error(con_logits, lin_logits), evaluate(linearized, test_set), evaluate(contracted, test_set)

    agree, diff, (lin_acc, lin_loss), (con_acc, con_loss) = _phase("evaluate", final_eval)

    trajectories = {"giant": giant_hist, "plt": plt_hist}
    final = {"linearized_test_acc": lin_acc, "linearized_test_loss": lin_loss,
             "contracted_test_acc": con_acc, "contracted_test_loss": con_loss}
    if configs.baseline:
        budget = configs.giant.epochs + configs.tune.epochs
        base_cfg = configs.giant.replace(epochs=budget)
        baseline, base_hist = _phase("baseline", train, vanilla.copy(), train_set, base_cfg, test_set=test_set,
                                     checkpoint_dir=ckpt_dir, resume=resume, phase="baseline", log=log)
        dump(baseline, "baseline.nbm")
        trajectories["baseline"] = base_hist
        final["baseline_test_acc"], final["baseline_test_loss"] = evaluate(baseline, test_set)

    report = PipelineReport(
        seed=seed,
        backend=engine.BACKEND,
        plan={"targets": list(plan.targets), "block_type": plan.block_type, "expansion_ratio": plan.expansion_ratio,
              "dw_kernel": plan.dw_kernel, "fraction": plan.fraction, "include_skip": plan.include_skip,
              "decay_epochs": plt_settings.decay_epochs, "finetune_epochs": plt_settings.finetune_epochs},
        vanilla_hash=vanilla.architecture_hash(),
        contracted_hash=contracted.architecture_hash(),
        complexity={"vanilla": _totals(vanilla), "expanded": _totals(expanded), "contracted": _totals(contracted)},
        trajectories=trajectories,
        final=final,
        agreement_rate=agree,
        logit_max_rel_diff=diff,
    )
    if out_dir is not None:
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            f.write(report.to_json())
        with open(os.path.join(out_dir, "report.txt"), "w") as f:
            f.write(report.summary() + "\n")
    return report
