"""Progressive linearization: ramp activation slopes inside expanded blocks to 1.

A single shared slope ``alpha = min(1, step / T_d)`` is applied to every
target activation before each training iteration, where ``T_d`` is the
decay horizon in iterations. Activations outside expanded blocks are
never touched.
"""

import math
from dataclasses import dataclass

from .errors import ProvenanceError, UsageError
from .graph.spec import BlockSpec, set_alpha


@dataclass(frozen=True)
class PLTSchedule:
    targets: tuple
    decay_epochs: int
    iterations_per_epoch: int
    finetune_epochs: int = 0

    def __post_init__(self):
        if self.decay_epochs < 1 or self.iterations_per_epoch < 1:
            raise UsageError("decay_epochs and iterations_per_epoch must be >= 1")
        if self.finetune_epochs < 0:
            raise UsageError("finetune_epochs must be >= 0")

    @property
    def decay_steps(self):
        return self.decay_epochs * self.iterations_per_epoch

    @property
    def total_epochs(self):
        return self.decay_epochs + self.finetune_epochs


def alpha_at(step, schedule):
    if step < 0:
        raise UsageError(f"step must be >= 0, got {step}")
    if step >= schedule.decay_steps:
        return 1.0
    return step / schedule.decay_steps


def decay_epochs_for(total_tuning_epochs, share=0.2):
    """Decay horizon as a share of the tuning budget (at least one epoch)."""
    return max(1, int(math.floor(share * total_tuning_epochs + 0.5)))


def block_activations(model):
    """Ids of every activation that lives inside an expanded block."""
    ids = []
    for i, node in enumerate(model.nodes):
        if isinstance(node, BlockSpec):
            ids += [f"{i}.{j}" for j, layer in enumerate(node.layers) if layer.kind == "activation"]
    return tuple(ids)


def make_schedule(model, decay_epochs, iterations_per_epoch, finetune_epochs=0):
    return PLTSchedule(block_activations(model), decay_epochs, iterations_per_epoch, finetune_epochs)


def set_alphas(model, targets, alpha):
    """New model (sharing parameters) with ``alpha`` on every target activation."""
    nodes = list(model.nodes)
    for tid in targets:
        parts = str(tid).split(".")
        try:
            i, j = int(parts[0]), int(parts[1])
            block = nodes[i]
            layer = block.layers[j]
        except (IndexError, ValueError, AttributeError):
            raise UsageError(f"PLT target {tid!r} is not a layer inside an expanded block") from None
        if not isinstance(block, BlockSpec) or layer.kind != "activation":
            raise UsageError(f"PLT target {tid!r} is not an activation inside an expanded block")
        layers = list(block.layers)
        layers[j] = set_alpha(layer, alpha)
        nodes[i] = BlockSpec(tuple(layers), block.skip, block.replaces, block.block_type)
    return model.with_nodes(nodes)


def apply_alpha(model, schedule, step):
    return set_alphas(model, schedule.targets, alpha_at(step, schedule))


def plt_phase(model, schedule, config, train_set, test_set=None, checkpoint_dir=None, resume=False, log=None):
    """Train while ramping slopes for ``decay_epochs``, then finetune at slope 1.

    Returns ``(linearized model, history)``; every target activation of the
    returned model has slope exactly 1.
    """
    from .trainer.train import train

    if model.provenance != "expanded":
        raise ProvenanceError(f"PLT needs an expanded model, got provenance {model.provenance!r}")
    if config.epochs != schedule.total_epochs:
        raise UsageError(f"config.epochs={config.epochs} != decay + finetune = {schedule.total_epochs}")
    iterations = math.ceil(len(train_set) / config.batch_size)
    if iterations != schedule.iterations_per_epoch:
        raise UsageError(f"schedule assumes {schedule.iterations_per_epoch} iterations per epoch, data gives {iterations}")
    trained, history = train(model, train_set, config, test_set=test_set,
                             step_model=lambda m, step: apply_alpha(m, schedule, step),
                             checkpoint_dir=checkpoint_dir, resume=resume, phase="plt", log=log)
    return set_alphas(trained, schedule.targets, 1.0), history
