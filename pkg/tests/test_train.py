import struct

import numpy as np
import pytest

from deepselect.checkpoint import (
    BadMagicError,
    Checkpoint,
    TruncatedCheckpointError,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from deepselect.evaluate import EvalReport, evaluate
from deepselect.synthdata import SceneConfig, generate_dataset
from deepselect.train import ConfigError, DataError, TrainConfig, Trainer, format_loss_log, split_dataset

TINY_MODEL = dict(feature_dim=6, rnn_hidden=4, head_widths=(5, 3), conv_channels=(2, 3, 2), frame_shape=(1, 16, 16))


@pytest.fixture(scope="module")
def seqs():
    return generate_dataset(SceneConfig(num_cameras=3, frames_per_seq=20, height=16, width=16), [0, 1, 2], [0, 1])


def tiny_cfg(**kw):
    base = dict(lr=1e-3, fragment_len=6, batch_size=2, epochs=3, steps_per_epoch=2, model=TINY_MODEL, seed=3)
    return TrainConfig(**{**base, **kw})


def same_params(a, b):
    return list(a) == list(b) and all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)


def test_sequence_out_split(seqs):
    train, test = split_dataset(seqs, "sequence-out")
    assert [s.num_frames for s in train] == [16] * 6 and [s.num_frames for s in test] == [4] * 6
    assert train[0].frames.tobytes() + test[0].frames.tobytes() == seqs[0].frames.tobytes()


def test_surgery_out_split(seqs):
    train, test = split_dataset(seqs, "surgery-out")
    assert {s.scene_id for s in test} == {2} and {s.scene_id for s in train} == {0, 1}
    _, test = split_dataset(seqs, "surgery-out", heldout=[0])
    assert {s.scene_id for s in test} == {0}
    with pytest.raises(DataError):
        split_dataset(seqs, "surgery-out", heldout=[0, 1, 2])
    with pytest.raises(DataError):
        split_dataset(seqs, "surgery-out", heldout=[9])


def test_config_errors():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ConfigError):
        TrainConfig(protocol="leave-one-out")
    with pytest.raises(ConfigError):
        TrainConfig(model={"dropout": 0.1})


def test_fragment_longer_than_data(seqs):
    with pytest.raises(DataError, match="fragment_len"):
        Trainer(tiny_cfg(fragment_len=50), split_dataset(seqs, "sequence-out")[0])


def test_lr_zero_leaves_params(seqs):
    train, _ = split_dataset(seqs, "sequence-out")
    tr = Trainer(tiny_cfg(lr=0.0, epochs=1), train)
    before = tr.params.copy()
    tr.fit()
    assert same_params(tr.params, before)
    assert tr.adam.t == 2


def test_training_changes_params_and_logs(seqs):
    train, _ = split_dataset(seqs, "sequence-out")
    tr = Trainer(tiny_cfg(), train)
    before = tr.params.copy()
    log = tr.fit()
    assert [e for e, _ in log] == [1, 2, 3]
    assert not same_params(tr.params, before)
    text = format_loss_log(log)
    assert text.splitlines()[0] == "epoch,loss" and float(text.splitlines()[1].split(",")[1]) == log[0][1]


def test_same_seed_same_loss_log(seqs):
    train, _ = split_dataset(seqs, "sequence-out")
    a = Trainer(tiny_cfg(), train).fit()
    b = Trainer(tiny_cfg(), train).fit()
    assert format_loss_log(a) == format_loss_log(b)
    c = Trainer(tiny_cfg(seed=4), train).fit()
    assert format_loss_log(a) != format_loss_log(c)


def _checkpoint(tr):
    return Checkpoint(
        params=tr.params, model_config=tr.model_cfg, adam=tr.adam, train_config=tr.cfg.to_dict(),
        rng_state=tr.rng.bit_generator.state, epoch=tr.epoch, loss_log=tr.loss_log,
    )


def test_resume_equals_uninterrupted(seqs, tmp_path):
    train, _ = split_dataset(seqs, "sequence-out")
    full = Trainer(tiny_cfg(), train)
    full.fit()
    first = Trainer(tiny_cfg(), train)
    first.fit(1)
    save_checkpoint(_checkpoint(first), tmp_path / "a.ckpt")
    ck = load_checkpoint(tmp_path / "a.ckpt")
    resumed = Trainer(
        TrainConfig.from_dict(ck.train_config), train, params=ck.params, adam=ck.adam,
        rng_state=ck.rng_state, epoch=ck.epoch, loss_log=ck.loss_log,
    )
    resumed.fit()
    assert format_loss_log(resumed.loss_log) == format_loss_log(full.loss_log)
    assert same_params(resumed.params, full.params)


def test_checkpoint_round_trip(seqs, tmp_path):
    train, _ = split_dataset(seqs, "sequence-out")
    tr = Trainer(tiny_cfg(epochs=1), train)
    tr.fit()
    save_checkpoint(_checkpoint(tr), tmp_path / "c.ckpt")
    ck = load_checkpoint(tmp_path / "c.ckpt")
    assert same_params(ck.params, tr.params)
    assert ck.model_config == tr.model_cfg
    assert ck.adam.t == tr.adam.t and all(ck.adam.m[k].tobytes() == tr.adam.m[k].tobytes() for k in tr.adam.m)
    assert ck.loss_log == tr.loss_log


def test_checkpoint_float32(seqs, tmp_path):
    train, _ = split_dataset(seqs, "sequence-out")
    tr = Trainer(tiny_cfg(epochs=0), train)
    save_checkpoint(_checkpoint(tr), tmp_path / "f4.ckpt", dtype="<f4")
    ck = load_checkpoint(tmp_path / "f4.ckpt")
    for k in tr.params:
        np.testing.assert_allclose(ck.params[k].data, tr.params[k].data, rtol=1e-6)
    assert (tmp_path / "f4.ckpt").stat().st_size < sum(p.data.nbytes for p in tr.params.values())


def test_checkpoint_errors(seqs, tmp_path):
    train, _ = split_dataset(seqs, "sequence-out")
    path = tmp_path / "x.ckpt"
    save_checkpoint(_checkpoint(Trainer(tiny_cfg(), train)), path)
    raw = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "version").write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "version")
    (tmp_path / "short").write_bytes(raw[:-10])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "stub").write_bytes(raw[:30])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(tmp_path / "stub")


def test_evaluate_report(seqs, tmp_path):
    train, _ = split_dataset(seqs, "surgery-out")
    tr = Trainer(tiny_cfg(epochs=1, protocol="surgery-out"), train)
    tr.fit()
    report = evaluate(tr.params, tr.model_cfg, seqs, "surgery-out")
    assert set(report.per_scene) == {2} and len(report.per_sequence) == 2
    assert 0.0 <= report.overall <= 1.0
    report.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "level,scene,sequence,dice,switches,gt_switches"
    assert lines[-1].startswith("overall,")


def test_overall_is_mean_of_scene_means():
    rows = [
        {"sequence": "a", "scene": 0, "dice": 1.0, "switches": 0, "gt_switches": 0},
        {"sequence": "b", "scene": 0, "dice": 0.0, "switches": 0, "gt_switches": 0},
        {"sequence": "c", "scene": 1, "dice": 1.0, "switches": 0, "gt_switches": 0},
    ]
    report = EvalReport.from_predictions(rows)
    assert report.per_scene == {0: 0.5, 1: 1.0}
    assert report.overall == 0.75
