import json
import os

import numpy as np
import pytest
import tensorflow as tf

from divae import constants
from divae.core import checkpoint as ckpt
from divae.core import train
from divae.core.exceptions import CheckpointLockedError, NumericError
from divae.core.unet import InjectionSpec
from tests.core.conftest import tiny_config


def vq_losses(history):
    return [r["loss"] for r in history if r["phase"] == "vq" and "loss" in r]


def test_learning_rate_warmup():
    assert train.learning_rate(1, 1e-3, 4) == pytest.approx(2.5e-4)
    assert train.learning_rate(4, 1e-3, 4) == pytest.approx(1e-3)
    assert train.learning_rate(9, 1e-3, 4) == pytest.approx(1e-3)
    assert train.learning_rate(1, 1e-3, 0) == 1e-3

    schedule = train.WarmupSchedule(1e-3, 4)
    # the optimizer passes the number of updates applied so far
    assert float(schedule(0)) == pytest.approx(2.5e-4)
    assert float(schedule(3)) == pytest.approx(1e-3)


def test_batch_stream_resumes_mid_epoch(tiny_dataset):
    train_set, _ = tiny_dataset

    full = train.batch_stream(train_set, 4, seed=3)
    seen = [next(full)[1].tolist() for _ in range(5)]
    resumed = train.batch_stream(train_set, 4, seed=3, start_step=3)

    assert [next(resumed)[1].tolist() for _ in range(2)] == seen[3:]
    assert all(len(indices) == 4 for indices in seen)


def test_training_writes_a_loadable_checkpoint(trained_model_path):
    checkpoint = ckpt.Checkpoint.load(trained_model_path)

    assert checkpoint.completed_phases == ["vq", "decoder", "prior"]
    assert set(checkpoint.components()) == set(ckpt.COMPONENTS)
    assert checkpoint.labels == ["blue", "red"]
    assert not os.path.exists(os.path.join(trained_model_path,
                                           constants.CHECKPOINT_LOCK_FILE))

    with open(os.path.join(trained_model_path,
                           constants.METRICS_LOG_FILE)) as f:
        records = [json.loads(line) for line in f]
    phases = [r["phase"] for r in records if "loss" in r]
    assert phases == ["vq", "vq", "decoder", "decoder", "prior", "prior"]
    assert all("prior_bpd" in r for r in records
               if r["phase"] == "decoder" and "loss" in r)
    assert any("val_l_rec" in r for r in records)
    assert any("val_l_simple" in r for r in records)


def test_resume_continues_where_it_stopped(tmpdir, tiny_dataset,
                                           monkeypatch):
    config = tiny_config(phase=("vq",), total_steps=4, checkpoint_every=2)
    uninterrupted = train.train(config, tmpdir.join("a").strpath,
                                tiny_dataset, progress=False)

    original_step = train.vq_step
    calls = []

    def crash_on_third_step(*args, **kwargs):
        calls.append(1)
        if len(calls) == 3:
            raise RuntimeError("killed")
        return original_step(*args, **kwargs)

    out_dir = tmpdir.join("b").strpath
    monkeypatch.setattr(train, "vq_step", crash_on_third_step)
    with pytest.raises(RuntimeError):
        train.train(config, out_dir, tiny_dataset, progress=False)
    monkeypatch.setattr(train, "vq_step", original_step)

    assert ckpt.Checkpoint.load(out_dir).step == 2
    resumed = train.train(config, out_dir, tiny_dataset, resume=True,
                          progress=False)

    expected = vq_losses(uninterrupted.history)[2:]
    np.testing.assert_allclose(vq_losses(resumed.history), expected,
                               rtol=1e-4)
    assert ckpt.Checkpoint.load(out_dir).completed_phases == ["vq"]


def test_non_finite_loss_writes_a_snapshot(tmpdir, tiny_dataset,
                                           monkeypatch):
    def diverge(*args, **kwargs):
        raise NumericError("The training term 'loss' is not finite: nan.")

    monkeypatch.setattr(train, "vq_step", diverge)
    with pytest.raises(NumericError):
        train.train(tiny_config(phase=("vq",)), tmpdir.strpath, tiny_dataset,
                    progress=False)

    snapshot = tmpdir.join(train.NAN_SNAPSHOT_DIR)
    with open(snapshot.join("error.json").strpath) as f:
        error = json.load(f)
    assert error["phase"] == "vq"
    assert error["step"] == 0
    assert "not finite" in error["message"]
    assert ckpt.Checkpoint.load(snapshot.strpath).phase == "vq"


def test_locked_directory_is_refused(tmpdir, tiny_dataset):
    with ckpt.CheckpointLock(tmpdir.strpath):
        with pytest.raises(CheckpointLockedError):
            train.train(tiny_config(phase=("vq",)), tmpdir.strpath,
                        tiny_dataset, progress=False)


def test_init_checkpoint_provides_the_encoder(tmpdir, tiny_dataset):
    vq_dir = tmpdir.join("vq").strpath
    first = train.train(tiny_config(phase=("vq",)), vq_dir, tiny_dataset,
                        progress=False)

    second = train.train(tiny_config(phase=("decoder",),
                                     init_checkpoint=vq_dir),
                         None, tiny_dataset, progress=False)

    np.testing.assert_array_equal(second.model.codebook.entries.numpy(),
                                  first.model.codebook.entries.numpy())
    assert {"encoder", "codebook", "unet"} <= second.model.trained


def test_joint_training_updates_the_encoder(tiny_dataset):
    config = tiny_config(phase=("joint",))
    result = train.train(config, None, tiny_dataset, progress=False)

    records = [r for r in result.history if "loss" in r]
    assert len(records) == 2
    assert all(np.isfinite(r["l_vq"]) for r in records)
    assert {"encoder", "unet", "unet_ema"} <= result.model.trained


def test_ablation_cells():
    cells = train.ablation_cells()

    assert len(cells) == 5
    assert InjectionSpec("concat", "middle") in cells
    assert InjectionSpec("concat", "encoder") in cells
    assert InjectionSpec("attention", "middle") in cells


def test_summarize_cells_skips_failures():
    cells = [{"method": "concat", "position": "middle", "seed": 0,
              "final_loss": 1.0, "fid_proxy": 2.0, "mse": 0.5,
              "val_l_simple": None},
             {"method": "concat", "position": "middle", "seed": 1,
              "final_loss": 3.0, "fid_proxy": 4.0, "mse": 0.1,
              "val_l_simple": None},
             {"method": "add", "position": "middle", "seed": 0,
              "error": {"error": "NumericError", "message": "nan"}}]

    summary = {(e["method"], e["position"]): e
               for e in train.summarize_cells(cells)}

    concat = summary[("concat", "middle")]
    assert concat["runs"] == 2
    assert concat["final_loss"] == pytest.approx(2.0)
    assert concat["fid_proxy"] == pytest.approx(3.0)
    assert concat["val_l_simple"] is None
    assert summary[("add", "middle")]["failed"] == 1
    assert summary[("add", "middle")]["runs"] == 0
    assert summary[("concat", "decoder")]["runs"] == 0


def test_ablate_reports_every_cell(tmpdir, tiny_dataset):
    config = tiny_config(phase=("vq", "decoder"))

    report = train.ablate(config, tmpdir.strpath, budget=1.0, seeds=1,
                          data=tiny_dataset)

    assert len(report["cells"]) == 5
    assert all("error" not in cell for cell in report["cells"])
    assert all(cell["fid_proxy"] >= 0. for cell in report["cells"])


def test_ablation_without_training_steps_reports_finite_baselines(
        tmpdir, tiny_dataset):
    config = tiny_config(phase=("vq", "decoder"))

    report = train.ablate(config, tmpdir.strpath, budget=0.0, seeds=1,
                          data=tiny_dataset)

    assert report["total_steps"] == 0
    assert len(report["cells"]) == 5
    for cell in report["cells"]:
        assert "error" not in cell
        assert np.isfinite(cell["fid_proxy"])
        assert np.isfinite(cell["mse"])
    assert all(entry["runs"] == 1 for entry in report["summary"])
    assert report["total_steps"] == 2
    assert os.path.isfile(tmpdir.join("ablation.json").strpath)
    tables = tmpdir.join("ablation.txt").read()
    assert "Method of inputting embeddings" in tables
    assert "Position of inputting embeddings" in tables
    assert "attention" in tables


@pytest.mark.slow
def test_vq_phase_learns_to_reconstruct(tiny_dataset):
    config = tiny_config(phase=("vq",), total_steps=300, warmup_steps=20)

    result = train.train(config, None, tiny_dataset, progress=False)

    losses = vq_losses(result.history)
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


@pytest.mark.slow
def test_decoder_phase_lowers_the_simple_loss(tiny_dataset):
    tf.random.set_seed(0)
    config = tiny_config(phase=("vq", "decoder"), total_steps=400,
                         warmup_steps=20)

    result = train.train(config, None, tiny_dataset, progress=False)

    simple = [r["l_simple"] for r in result.history
              if r["phase"] == "decoder" and "l_simple" in r]
    assert np.mean(simple[-20:]) < np.mean(simple[:20])
