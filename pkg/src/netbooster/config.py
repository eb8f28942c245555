"""Run configuration: one YAML file drives every command.

Every key has a default (``DEFAULTS``); unknown keys and ill-typed values
are rejected with the dotted key and the line number where it appears.
"""

import copy

import yaml

from .errors import ConfigError, RangeError

_TRAIN_KEYS = {
    "batch_size": 64,
    "lr_init": 0.05,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "dtype": "float32",
    "schedule": "cosine",
    "eval_every": 1,
    "augment": False,
    "grad_clip": 2.0,
    "warmup_epochs": 0,
}

DEFAULTS = {
    "seed": 0,
    "out": "runs/netbooster",
    "model": {
        "preset": "desk-tnn",
        "path": None,
        "layers": None,
        "act": "relu",
        "width": 8,
        "input_shape": [1, 12, 12],
        "num_classes": 10,
    },
    "expansion": {
        "fraction": 0.5,
        "ratio": 6,
        "block_type": "inverted_residual",
        "dw_kernel": 1,
        "location": "uniform",
        "include_skip": True,
        "zero_init_residual": True,
    },
    "plt": {
        "epochs": 12,
        "decay_epochs": None,
    },
    "train": dict(_TRAIN_KEYS, epochs=30),
    "tune": dict(_TRAIN_KEYS, lr_init=0.01),
    "baseline": True,
    "dataset": {
        "kind": "bundled",
        "n_train": 500,
        "n_test": 1000,
        "image_size": 12,
        "num_classes": 10,
        "seed": 0,
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
    },
    "sweep": {
        "ratio": [2, 4, 6, 8],
        "fraction": [0.25, 0.5, 0.75, 1.0],
        "location": ["first", "middle", "last", "uniform"],
    },
}

# keys whose default is None but which take a value of this type
_NULLABLE = {
    "model.path": str,
    "model.layers": list,
    "plt.decay_epochs": int,
    "dataset.train_images": str,
    "dataset.train_labels": str,
    "dataset.test_images": str,
    "dataset.test_labels": str,
}


def _check_type(key, value, default, line):
    if value is None:
        if default is None:
            return
        raise ConfigError(f"{key} may not be null", key=key, line=line)
    want = _NULLABLE.get(key) if default is None else type(default)
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return
    if want is bool and not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}", key=key, line=line)
    if want is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{key} must be an integer, got {value!r}", key=key, line=line)
    if not isinstance(value, want):
        raise ConfigError(f"{key} must be of type {want.__name__}, got {value!r}", key=key, line=line)


def _merge(node, defaults, prefix, lines, out):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{prefix or 'config'} must be a mapping", key=prefix or None,
                          line=node.start_mark.line + 1)
    for knode, vnode in node.value:
        key = knode.value
        dotted = f"{prefix}.{key}" if prefix else key
        line = knode.start_mark.line + 1
        if key not in defaults:
            raise ConfigError(f"unknown key {dotted!r}", key=dotted, line=line)
        lines[dotted] = line
        default = defaults[key]
        if isinstance(default, dict):
            _merge(vnode, default, dotted, lines, out[key])
            continue
        value = yaml.safe_load(yaml.serialize(vnode))
        _check_type(dotted, value, default, line)
        out[key] = value


class RunConfig(dict):
    """Merged config dict; ``line(key)`` gives the source line of a dotted key, if any."""

    def __init__(self, data, lines=None, path=None):
        super().__init__(data)
        self.lines = lines or {}
        self.path = path

    def line(self, key):
        return self.lines.get(key)

    def error(self, key, message):
        return ConfigError(f"{key}: {message}", key=key, line=self.line(key))


def parse_config(text, path=None):
    data = copy.deepcopy(DEFAULTS)
    lines = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(e, 'problem', e)}", line=mark.line + 1 if mark else None) from None
    if node is not None:
        _merge(node, DEFAULTS, "", lines, data)
    return RunConfig(data, lines, path)


def load_config(path=None):
    if path is None:
        return RunConfig(copy.deepcopy(DEFAULTS))
    with open(path) as f:
        text = f.read()
    return parse_config(text, path)


def apply_override(config, assignment):
    """Apply ``section.key=value`` (value parsed as YAML) on top of a config."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    defaults, target = DEFAULTS, config
    for p in parts[:-1]:
        if not isinstance(defaults.get(p), dict):
            raise ConfigError(f"unknown key {key!r}", key=key)
        defaults, target = defaults[p], target[p]
    last = parts[-1]
    if last not in defaults or isinstance(defaults[last], dict):
        raise ConfigError(f"unknown key {key!r}", key=key)
    value = yaml.safe_load(raw)
    _check_type(key, value, defaults[last], None)
    target[last] = value
    config.lines.pop(key, None)


def train_config(config, section, epochs, seed):
    from .trainer.train import TrainConfig

    values = dict(config[section])
    values.pop("epochs", None)
    try:
        return TrainConfig(epochs=epochs, seed=seed, **values)
    except RangeError as e:
        field = str(e).split()[0]
        key = f"{section}.{field}"
        raise ConfigError(str(e), key=key, line=config.line(key) or config.line(section)) from None
