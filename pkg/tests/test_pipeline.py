import json
import os

import numpy as np
import pytest

from netbooster.expansion import make_plan
from netbooster.graph import desk_tnn, load_model
from netbooster.trainer import PhaseError, PipelineConfigs, PLTSettings, TrainConfig, run_pipeline, synthetic_splits


@pytest.fixture(scope="module")
def data():
    return synthetic_splits(96, 64, num_classes=10, seed=4)


def _configs(giant_epochs=2, tune_epochs=3):
    return PipelineConfigs(TrainConfig(epochs=giant_epochs, batch_size=32, lr_init=0.05, grad_clip=2.0),
                           TrainConfig(epochs=tune_epochs, batch_size=32, lr_init=0.01, grad_clip=2.0, seed=1))


def _run(data, out=None, resume=False):
    m = desk_tnn()
    return run_pipeline(m, make_plan(m, 0.5, 6), PLTSettings(1, 2), _configs(), *data, out_dir=out, resume=resume)


def test_small_pipeline_report(data, tmp_path):
    rep = _run(data, tmp_path)
    assert rep.vanilla_hash == rep.contracted_hash
    assert rep.complexity["contracted"] == rep.complexity["vanilla"]
    assert rep.complexity["expanded"]["flops"] > rep.complexity["vanilla"]["flops"]
    assert rep.agreement_rate == 1.0
    assert rep.logit_max_rel_diff <= 1e-4
    assert rep.final["linearized_test_acc"] == rep.final["contracted_test_acc"]
    assert [len(rep.trajectories[k]) for k in ("giant", "plt", "baseline")] == [2, 3, 5]
    for name in ("vanilla", "expanded", "giant", "linearized", "contracted", "baseline"):
        assert os.path.exists(tmp_path / f"{name}.nbm")
    assert load_model(tmp_path / "contracted.nbm").architecture_hash() == rep.vanilla_hash
    assert json.loads((tmp_path / "report.json").read_text())["agreement_rate"] == 1.0
    rows = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert [r["phase"] for r in rows] == ["giant"] * 2 + ["plt"] * 3 + ["baseline"] * 5
    assert "architecture restored: True" in (tmp_path / "report.txt").read_text()


def test_pipeline_is_deterministic(data, tmp_path):
    a = _run(data, tmp_path / "a")
    b = _run(data, tmp_path / "b")
    assert a.to_json() == b.to_json()
    for name in ("contracted.nbm", "baseline.nbm", "metrics.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_after_completion_reproduces_report(data, tmp_path):
    a = _run(data, tmp_path)
    b = _run(data, tmp_path, resume=True)
    assert a.to_json() == b.to_json()


def test_phase_failure_names_phase_and_keeps_checkpoints(data, tmp_path):
    m = desk_tnn()
    with pytest.raises(PhaseError) as exc:
        run_pipeline(m, make_plan(m), PLTSettings(1, 5), _configs(), *data, out_dir=tmp_path)
    assert exc.value.phase == "plt"
    assert (tmp_path / "checkpoints" / "phase-giant" / "step-6.nbm").exists()
    assert (tmp_path / "giant.nbm").exists()


def test_pipeline_without_baseline(data):
    m = desk_tnn()
    cfgs = PipelineConfigs(_configs().giant, _configs().tune, baseline=False)
    rep = run_pipeline(m, make_plan(m), PLTSettings(1, 2), cfgs, *data)
    assert "baseline" not in rep.trajectories and "baseline_test_acc" not in rep.final
    assert np.isfinite(rep.final["contracted_test_loss"])
