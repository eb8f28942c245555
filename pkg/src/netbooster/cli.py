"""``netbooster`` command line.

    netbooster <expand|train|plt|contract|pipeline|verify|flops|sweep> [--config PATH]
               [--seed N] [--out DIR] [--resume] [--model PATH] [--set key=value ...]

Exit status: 0 on success, 1 when a stage or a verification fails, 2 for
usage and configuration errors.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfg
from .contraction import contract_model
from .errors import ConfigError, NetBoosterError, UsageError
from .expansion import LOCATIONS, make_plan, expand_model
from .graph.init import init_params
from .graph.io import load_model, save_model
from .graph.presets import PRESETS
from .graph.shapes import count_complexity, infer_shapes
from .graph.spec import ModelGraph, node_from_dict
from .plt import decay_epochs_for, make_schedule, plt_phase
from .trainer import data as datamod
from .trainer.pipeline import PLTSettings, PipelineConfigs, run_pipeline
from .trainer.train import evaluate, train
from .verify import SUITES, run_suite

COMMANDS = ("expand", "train", "plt", "contract", "pipeline", "verify", "flops", "sweep")


def build_parser():
    p = argparse.ArgumentParser(prog="netbooster", description="Expand, linearize and contract tiny networks.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("target", nargs="?", help="suite for verify (fusion|gradients|conv|all), model path for flops")
    p.add_argument("--config", help="YAML run config; built-in defaults when omitted")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoints in --out")
    p.add_argument("--model", help="input model file (overrides model.path)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--cases", type=int, default=None, help="verify: number of random cases per suite")
    p.add_argument("--dtype", default="float64", choices=["float64", "float32"], help="verify: precision")
    p.add_argument("--param", choices=["ratio", "fraction", "location"], help="sweep: parameter to vary")
    p.add_argument("--json", action="store_true", help="flops: print the JSON report instead of the table")
    return p


# -- helpers -----------------------------------------------------------------

def _load_config(args):
    config = cfg.load_config(args.config)
    for assignment in args.set:
        cfg.apply_override(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out"] = args.out
    if args.model is not None:
        config["model"]["path"] = args.model
    return config


def _write_report(out_dir, name, text, payload):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{name}.txt"), "w") as f:
        f.write(text + "\n")
    with open(os.path.join(out_dir, f"{name}.json"), "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def _metrics_path(out, resume):
    path = os.path.join(out, "metrics.jsonl")
    if not resume and os.path.exists(path):
        os.remove(path)
    return path


def build_model(config):
    m = config["model"]
    dtype = config["train"]["dtype"]
    if m["path"]:
        return load_model(m["path"])
    if m["layers"] is not None:
        try:
            nodes = [node_from_dict(d) for d in m["layers"]]
        except (KeyError, TypeError, ValueError) as e:
            raise config.error("model.layers", f"bad layer entry: {e}") from None
        model = ModelGraph("custom", nodes, tuple(m["input_shape"]), dtype=dtype)
        infer_shapes(model)
        return init_params(model, np.random.default_rng(config["seed"]))
    if m["preset"] not in PRESETS:
        raise config.error("model.preset", f"unknown preset {m['preset']!r}; choose from {sorted(PRESETS)}")
    return PRESETS[m["preset"]](tuple(m["input_shape"]), m["num_classes"], m["act"], m["width"],
                               seed=config["seed"], dtype=dtype)


def load_datasets(config):
    d = config["dataset"]
    if d["kind"] == "bundled":
        return datamod.load_idx_pair(datamod.bundled_paths(), d["num_classes"])
    if d["kind"] == "synthetic":
        return datamod.synthetic_splits(d["n_train"], d["n_test"], d["image_size"], d["num_classes"], d["seed"])
    if d["kind"] == "idx":
        paths = {k: d[k] for k in datamod.IDX_NAMES}
        missing = [k for k, v in paths.items() if not v]
        if missing:
            raise config.error(f"dataset.{missing[0]}", "required when dataset.kind is idx")
        return datamod.load_idx_pair(paths, d["num_classes"])
    raise config.error("dataset.kind", f"unknown dataset kind {d['kind']!r}; choose bundled, synthetic or idx")


def build_plan(config, model):
    e = config["expansion"]
    if e["location"] not in LOCATIONS:
        raise config.error("expansion.location", f"unknown location {e['location']!r}; choose from {LOCATIONS}")
    return make_plan(model, e["fraction"], e["ratio"], e["block_type"], e["dw_kernel"], e["include_skip"],
                     e["location"], e["zero_init_residual"])


def plt_settings(config):
    total = config["plt"]["epochs"]
    decay = config["plt"]["decay_epochs"]
    if decay is None:
        decay = decay_epochs_for(total)
    if not 1 <= decay <= total:
        raise config.error("plt.decay_epochs", f"must lie in [1, plt.epochs={total}], got {decay}")
    return PLTSettings(decay, total - decay)


def pipeline_configs(config):
    seed = config["seed"]
    giant = cfg.train_config(config, "train", config["train"]["epochs"], seed)
    tune = cfg.train_config(config, "tune", config["plt"]["epochs"], seed + 1)
    return PipelineConfigs(giant, tune, expand_seed=seed, baseline=config["baseline"])


# -- commands ----------------------------------------------------------------

def cmd_expand(config, args):
    model = build_model(config)
    plan = build_plan(config, model)
    expanded = expand_model(model, plan, seed=config["seed"])
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    save_model(expanded, os.path.join(out, "expanded.nbm"))
    before, after = count_complexity(model), count_complexity(expanded)
    payload = {"targets": list(plan.targets), "expansion_ratio": plan.expansion_ratio,
               "block_type": plan.block_type, "vanilla": before.to_dict(), "expanded": after.to_dict()}
    text = (f"expanded nodes {list(plan.targets)} with {plan.block_type} blocks, ratio {plan.expansion_ratio}\n"
            f"flops {before.flops} -> {after.flops}, params {before.params} -> {after.params}")
    _write_report(out, "expand", text, payload)
    print(text)
    return 0


def cmd_train(config, args):
    model = build_model(config)
    train_set, test_set = load_datasets(config)
    tc = cfg.train_config(config, "train", config["train"]["epochs"], config["seed"])
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    trained, history = train(model, train_set, tc, test_set=test_set, checkpoint_dir=os.path.join(out, "checkpoints"),
                             resume=args.resume, phase="train", log=_metrics_path(out, args.resume))
    save_model(trained, os.path.join(out, "trained.nbm"))
    acc, loss = evaluate(trained, test_set)
    _write_report(out, "train", f"test accuracy {acc:.4f}, loss {loss:.4f}", {"history": history, "test_acc": acc,
                                                                               "test_loss": loss})
    print(f"trained {tc.epochs} epochs: test accuracy {acc:.4f}, loss {loss:.4f}")
    return 0


def cmd_plt(config, args):
    model = build_model(config)
    train_set, test_set = load_datasets(config)
    settings = plt_settings(config)
    tc = cfg.train_config(config, "tune", config["plt"]["epochs"], config["seed"] + 1)
    iters = -(-len(train_set) // tc.batch_size)
    schedule = make_schedule(model, settings.decay_epochs, iters, settings.finetune_epochs)
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    linearized, history = plt_phase(model, schedule, tc, train_set, test_set=test_set,
                                    checkpoint_dir=os.path.join(out, "checkpoints"), resume=args.resume,
                                    log=_metrics_path(out, args.resume))
    save_model(linearized, os.path.join(out, "linearized.nbm"))
    acc, loss = evaluate(linearized, test_set)
    _write_report(out, "plt", f"linearized test accuracy {acc:.4f}, loss {loss:.4f}",
                  {"history": history, "decay_epochs": settings.decay_epochs,
                   "finetune_epochs": settings.finetune_epochs, "test_acc": acc, "test_loss": loss})
    print(f"PLT {settings.decay_epochs} decay + {settings.finetune_epochs} finetune epochs: "
          f"test accuracy {acc:.4f}, loss {loss:.4f}")
    return 0


def cmd_contract(config, args):
    model = build_model(config)
    contracted = contract_model(model)
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    save_model(contracted, os.path.join(out, "contracted.nbm"))
    report = count_complexity(contracted)
    _write_report(out, "contract", report.format_table(), report.to_dict())
    print(f"contracted {len(model.blocks())} blocks: flops {report.flops}, params {report.params}")
    return 0


def cmd_pipeline(config, args):
    model = build_model(config)
    train_set, test_set = load_datasets(config)
    plan = build_plan(config, model)
    report = run_pipeline(model, plan, plt_settings(config), pipeline_configs(config), train_set, test_set,
                          out_dir=config["out"], resume=args.resume, seed=config["seed"])
    print(report.summary())
    return 0


def cmd_verify(config, args):
    suite = args.target or "all"
    if suite not in SUITES + ("all",):
        raise UsageError(f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
    cases = 100 if args.cases is None else args.cases
    if cases < 1:
        raise UsageError(f"--cases must be >= 1, got {cases}")
    seed = 0 if args.seed is None else args.seed
    suites = SUITES if suite == "all" else (suite,)
    sink = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        sink = open(os.path.join(args.out, f"verify-{suite}.jsonl"), "w")
    failed = total = 0
    try:
        for name in suites:
            for rep in run_suite(name, cases, seed, args.dtype):
                line = rep.to_json()
                print(line)
                if sink:
                    sink.write(line + "\n")
                total += 1
                failed += not rep.passed
    finally:
        if sink:
            sink.close()
    print(f"{total - failed}/{total} cases passed ({', '.join(suites)}; seed {seed})")
    return 0 if failed == 0 else 1


def cmd_flops(config, args):
    path = args.target if args.target is not None else args.model
    if path is None:
        raise UsageError("flops needs a model path")
    report = count_complexity(load_model(path))
    if args.json:
        print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    else:
        print(report.format_table())
    if args.out:
        _write_report(args.out, "flops", report.format_table(), report.to_dict())
    return 0


def _sweep_value(param, raw):
    return {"ratio": int, "fraction": float, "location": str}[param](raw)


def cmd_sweep(config, args):
    if args.param is None:
        raise UsageError("sweep needs --param ratio|fraction|location")
    param = args.param
    values = config["sweep"][param]
    train_set, test_set = load_datasets(config)
    out = os.path.join(config["out"], f"sweep-{param}")
    vanilla = build_model(config)
    configs = pipeline_configs(config)
    settings = plt_settings(config)
    rows = []
    baseline = None
    for i, raw in enumerate(values):
        value = _sweep_value(param, raw)
        row = {param: value}
        cell = dict(config)
        cell["expansion"] = dict(config["expansion"], **{param: value})
        cell = cfg.RunConfig(cell, config.lines, config.path)
        # the vanilla baseline does not depend on the swept parameter; train it once
        cell_cfgs = PipelineConfigs(configs.giant, configs.tune, configs.expand_seed, baseline=(i == 0 and configs.baseline))
        try:
            plan = build_plan(cell, vanilla)
            rep = run_pipeline(vanilla, plan, settings, cell_cfgs, train_set, test_set,
                               out_dir=os.path.join(out, str(value)), resume=args.resume, seed=config["seed"])
            row.update({
                "expanded_flops": rep.complexity["expanded"]["flops"],
                "expanded_params": rep.complexity["expanded"]["params"],
                "contracted_flops": rep.complexity["contracted"]["flops"],
                "contracted_params": rep.complexity["contracted"]["params"],
                "linearized_acc": rep.final["linearized_test_acc"],
                "contracted_acc": rep.final["contracted_test_acc"],
                "agreement": rep.agreement_rate,
            })
            if "baseline_test_acc" in rep.final:
                baseline = rep.final["baseline_test_acc"]
        except (NetBoosterError, ValueError) as e:
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)
    lines = [f"{param:>10} {'exp FLOPs':>10} {'exp params':>10} {'FLOPs':>8} {'params':>7} {'acc':>7} {'agree':>6}"]
    for row in rows:
        if "error" in row:
            lines.append(f"{row[param]!s:>10}  failed: {row['error']}")
            continue
        lines.append(f"{row[param]!s:>10} {row['expanded_flops']:>10} {row['expanded_params']:>10} "
                     f"{row['contracted_flops']:>8} {row['contracted_params']:>7} {row['contracted_acc']:>7.4f} "
                     f"{row['agreement']:>6.3f}")
    if baseline is not None:
        lines.append(f"{'vanilla':>10} {'':>10} {'':>10} {'':>8} {'':>7} {baseline:>7.4f}")
    text = "\n".join(lines)
    _write_report(out, "sweep", text, {"parameter": param, "rows": rows, "baseline_acc": baseline})
    print(text)
    return 0 if not any("error" in r for r in rows) else 1


HANDLERS = {
    "expand": cmd_expand,
    "train": cmd_train,
    "plt": cmd_plt,
    "contract": cmd_contract,
    "pipeline": cmd_pipeline,
    "verify": cmd_verify,
    "flops": cmd_flops,
    "sweep": cmd_sweep,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        if args.command not in ("verify", "flops") and args.target is not None:
            raise UsageError(f"{args.command} takes no positional argument (got {args.target!r})")
        return HANDLERS[args.command](config, args)
    except (ConfigError, UsageError) as e:
        print(f"netbooster {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (NetBoosterError, OSError, ValueError) as e:
        print(f"netbooster {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
