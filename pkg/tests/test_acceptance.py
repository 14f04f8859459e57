"""Acceptance suite: one test (or a few) per criterion, each tagged ``criterion(n)``.

A summary block with one PASS/FAIL line per criterion is printed at the end
of the pytest run (see conftest.py).  Criteria 6 to 8 train real models and
are marked ``slow``; deselect them with ``-m "not slow"``.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from deepselect import nn
from deepselect import tensor as T
from deepselect.baselines import area_select, dijkstra_smooth
from deepselect.checkpoint import load_checkpoint, save_checkpoint
from deepselect.cli import trainer_checkpoint
from deepselect.evaluate import evaluate, evaluate_sequences
from deepselect.losses import LossConfig, binary_cross_entropy, focal_loss, focal_terms, label_imbalance, one_hot
from deepselect.model import (
    ModelConfig,
    MultiCamSequence,
    aggregate_sequential,
    aggregate_spatial,
    forward,
    forward_frames,
    predict_probabilities,
)
from deepselect.synthdata import SceneConfig, annotate_labels, generate_dataset
from deepselect.tensor import Tensor, finite_difference_check
from deepselect.train import TrainConfig, Trainer, format_loss_log, split_dataset
from reference import brute_force_path, hysteresis_reference, primitive_cases, scalarize

FD_EPS = 1e-5
FD_TOL = 1e-4
REDUCED = ModelConfig(feature_dim=6, rnn_hidden=3, head_widths=(5, 4), conv_channels=(2, 3, 2), frame_shape=(1, 8, 8))

# the default dataset: 5 scenes x 4 sequences, N=4, T=200, 32x32
DEFAULT_SCENE = SceneConfig(num_cameras=4)
DEFAULT_SCENES, DEFAULT_SEEDS = range(5), range(4)
EPOCHS = 15
TRAIN_SEED = 0
ABLATION_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def default_dataset():
    return generate_dataset(DEFAULT_SCENE, DEFAULT_SCENES, DEFAULT_SEEDS)


def _param_fd(fn, params, paths=None):
    """Worst finite-difference error of ``fn(params)`` over the given parameter tensors."""
    worst = 0.0
    for path in paths or list(params):
        def f(w, path=path):
            local = nn.ParamStore(dict(params.items()))
            local[path] = w
            return fn(local)

        worst = max(worst, finite_difference_check(f, params[path].data, eps=FD_EPS))
    return worst


# ---------------------------------------------------------------------------
# 1. gradient integrity


@pytest.mark.criterion(1)
def test_gradient_integrity(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errors = {}

    # every primitive, several random small instances each
    for trial in range(5):
        for name, fn, x in primitive_cases(rng, 5):
            wseed = int(rng.integers(2**31))
            err = finite_difference_check(lambda t: scalarize(fn(t), np.random.default_rng(wseed)), x, eps=FD_EPS)
            errors[f"primitive:{name}"] = max(errors.get(f"primitive:{name}", 0.0), err)
    covered = {k.split(":")[1].split("_input")[0].split("_kernel")[0].split("_rhs")[0] for k in errors}
    assert set(T.PRIMITIVES) <= covered

    params = nn.init_params(REDUCED, 7)
    frames = rng.uniform(-1, 1, size=(3, 2, 1, 8, 8))
    gt = one_hot(rng.integers(0, 2, size=3), 2)

    # every layer
    w, b = rng.normal(size=(4, 3)), rng.normal(size=3)
    x = rng.normal(size=(5, 4))
    proj3 = Tensor(rng.normal(size=(5, 3)))
    errors["layer:linear"] = max(
        finite_difference_check(lambda t: T.sum_over_axis(T.mul(nn.linear_forward(t, Tensor(w), Tensor(b)), proj3)), x),
        finite_difference_check(lambda t: T.sum_over_axis(T.mul(nn.linear_forward(Tensor(x), t, Tensor(b)), proj3)), w),
        finite_difference_check(lambda t: T.sum_over_axis(T.mul(nn.linear_forward(Tensor(x), Tensor(w), t), proj3)), b),
    )
    enc_proj = Tensor(rng.normal(size=(6, REDUCED.feature_dim)))
    flat = frames.reshape(6, 1, 8, 8)
    enc = lambda p, fr=Tensor(flat): T.sum_over_axis(T.mul(nn.conv_encoder_forward(fr, p, REDUCED), enc_proj))  # noqa: E731
    errors["layer:conv_encoder"] = max(
        _param_fd(enc, params, [k for k in params if k.startswith("encoder.")]),
        finite_difference_check(lambda t: enc(params, t), flat),
    )
    feats = rng.normal(size=(3, 2, REDUCED.feature_dim))
    errors["layer:spatial_aggregation"] = finite_difference_check(
        lambda t: scalarize(aggregate_spatial(t), np.random.default_rng(1)), feats
    )
    ctx = rng.normal(size=(3, 2, 2 * REDUCED.feature_dim))
    seq_fn = lambda p, c=Tensor(ctx): scalarize(aggregate_sequential(c, p, REDUCED), np.random.default_rng(2))  # noqa: E731
    errors["layer:bilstm"] = max(
        _param_fd(seq_fn, params, [k for k in params if k.startswith("rnn.")]),
        finite_difference_check(lambda t: seq_fn(params, t), ctx),
    )
    hidden = rng.normal(size=(3, 2, 2 * REDUCED.rnn_hidden))

    def head(p, h=Tensor(hidden)):
        # training mode with a fixed dropout mask
        return scalarize(predict_probabilities(h, p, REDUCED, True, np.random.default_rng(3)), np.random.default_rng(4))

    errors["layer:head_with_dropout"] = max(
        _param_fd(head, params, [k for k in params if k.startswith("head.")]),
        finite_difference_check(lambda t: head(params, t), hidden),
    )

    # end-to-end focal objective, N=2, T=3, 8x8 frames, every parameter
    errors["end_to_end_focal"] = _param_fd(
        lambda p: focal_loss(forward_frames(Tensor(frames), p, REDUCED, True, np.random.default_rng(5)), gt), params
    )
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    record_property("max_rel_err", f"{errors[worst]:.2e} ({worst})")
    record_property("runtime_s", f"{elapsed:.1f}")
    bad = {k: v for k, v in errors.items() if not v < FD_TOL}
    assert not bad, bad
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 2. permutation equivariance


@pytest.mark.criterion(2)
def test_permutation_equivariance(record_property):
    t0 = time.perf_counter()
    cfg = ModelConfig()
    params = nn.init_params(cfg, 11)
    rng = np.random.default_rng(12)
    for _ in range(100):
        N, steps = int(rng.integers(2, 6)), int(rng.integers(1, 7))
        frames = rng.integers(0, 256, size=(steps, N, 1, 32, 32), dtype=np.uint8)
        seq = MultiCamSequence(frames, rng.integers(0, N, size=steps))
        perm = rng.permutation(N)
        moved_seq = seq.permute_cameras(perm)
        base, moved = forward(seq, params, cfg), forward(moved_seq, params, cfg)
        assert moved.probs.tobytes() == base.probs[:, perm].tobytes()
        # new camera j is old camera perm[j]: labels map through the permutation
        assert np.array_equal(perm[moved.labels], base.labels)
        assert np.array_equal(perm[moved_seq.labels], seq.labels)
    elapsed = time.perf_counter() - t0
    record_property("instances", 100)
    record_property("runtime_s", f"{elapsed:.1f}")
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 3. loss identities


@pytest.mark.criterion(3)
def test_loss_identities(record_property):
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(100):
        steps, N = int(rng.integers(1, 11)), int(rng.integers(2, 6))
        probs = rng.uniform(0.0, 1.0, size=(steps, N))
        gt = one_hot(rng.integers(0, N, size=steps), N)
        focal0 = focal_loss(Tensor(probs), gt, LossConfig(gamma=0.0)).item()
        bce = binary_cross_entropy(Tensor(probs), gt).item()
        worst = max(worst, abs(focal0 - bce))
        focal2 = focal_terms(Tensor(probs), gt, LossConfig(gamma=2.0)).data
        bce_terms = focal_terms(Tensor(probs), gt, LossConfig(gamma=0.0)).data
        assert np.all(focal2 <= bce_terms)
    record_property("max_abs_diff_gamma0", f"{worst:.1e}")
    assert worst <= 1e-12
    assert label_imbalance(4) == Fraction(1, 3)
    mask = one_hot(np.arange(40) % 4, 4)
    assert Fraction(int(mask.sum()), int((1 - mask).sum())) == Fraction(1, 3)


# ---------------------------------------------------------------------------
# 4. Dijkstra correctness


@pytest.mark.criterion(4)
def test_dijkstra_correctness(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(14)
    for i in range(500):
        steps, N = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        if i % 2:
            scores, lam = rng.uniform(size=(steps, N)), float(rng.uniform(0, 1))
        else:
            scores, lam = rng.integers(0, 5, size=(steps, N)) / 4, float(rng.integers(0, 5)) / 4
        want, _ = brute_force_path(scores, lam)
        assert dijkstra_smooth(scores, lam).tolist() == want, (scores, lam)
        assert dijkstra_smooth(scores, 0.0).tolist() == area_select(scores).tolist()
        best_const = int(np.argmax(scores.sum(axis=0)))
        assert dijkstra_smooth(scores, math.inf).tolist() == [best_const] * steps
    elapsed = time.perf_counter() - t0
    record_property("instances", 500)
    record_property("runtime_s", f"{elapsed:.1f}")
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 5. hysteresis annotator


@pytest.mark.criterion(5)
def test_hysteresis_matches_reference(record_property):
    rng = np.random.default_rng(15)
    for i in range(500):
        steps, N = int(rng.integers(1, 21)), int(rng.integers(2, 5))
        v = rng.uniform(size=(steps, N)) if i % 2 else rng.integers(0, 6, size=(steps, N)) / 5
        margin = float(rng.choice([0.0, 0.05, 0.1, 0.2, 0.4]))
        h = int(rng.integers(1, 5))
        assert annotate_labels(v, margin, h).tolist() == hysteresis_reference(v, margin, h), (v, margin, h)
    record_property("instances", 500)


# ---------------------------------------------------------------------------
# 6. learnability at desk scale (shared with 8)


def paper_recipe(**kw):
    base = dict(lr=1e-4, fragment_len=40, batch_size=2, gamma=2.0, dropout=0.5, epochs=EPOCHS, seed=TRAIN_SEED)
    return TrainConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def sequence_out_run(default_dataset, tmp_path_factory):
    cfg = paper_recipe(protocol="sequence-out")
    train_seqs, _ = split_dataset(default_dataset, cfg.protocol)
    t0 = time.perf_counter()
    trainer = Trainer(cfg, train_seqs)
    trainer.fit()
    elapsed = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("ckpt") / "sequence_out.ckpt"
    save_checkpoint(trainer_checkpoint(trainer), path)
    return trainer, path, elapsed


@pytest.mark.slow
@pytest.mark.criterion(6)
def test_learnability(default_dataset, sequence_out_run, record_property):
    trainer, path, elapsed = sequence_out_run
    report = evaluate(trainer.params, trainer.model_cfg, default_dataset, "sequence-out")
    record_property("heldout_dice", f"{report.overall:.3f}")
    record_property("epochs", trainer.epoch)
    record_property("train_min", f"{elapsed / 60:.1f}")
    assert trainer.epoch <= EPOCHS
    assert elapsed < 30 * 60
    assert report.overall >= 0.80


# ---------------------------------------------------------------------------
# 7. ablation ordering


VARIANTS = {
    "full": dict(use_spatial=True, use_sequential=True),
    "no_spatial": dict(use_spatial=False, use_sequential=True),
    "no_sequential": dict(use_spatial=True, use_sequential=False),
    "no_spatial_no_sequential": dict(use_spatial=False, use_sequential=False),
}


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_ablation_ordering(default_dataset, record_property):
    means = {}
    for name, flags in VARIANTS.items():
        scores = []
        for seed in ABLATION_SEEDS:
            cfg = paper_recipe(protocol="surgery-out", seed=seed, **flags)
            train_seqs, _ = split_dataset(default_dataset, cfg.protocol)
            trainer = Trainer(cfg, train_seqs)
            trainer.fit()
            scores.append(evaluate(trainer.params, trainer.model_cfg, default_dataset, "surgery-out").overall)
        means[name] = float(np.mean(scores))
        record_property(name, f"{means[name]:.3f}")
    assert means["full"] > means["no_spatial_no_sequential"]
    assert means["full"] >= means["no_spatial"] - 0.02
    assert means["full"] >= means["no_sequential"] - 0.02


# ---------------------------------------------------------------------------
# 8. camera-count transfer


@pytest.mark.slow
@pytest.mark.criterion(8)
@pytest.mark.parametrize("N", [3, 5])
def test_camera_count_transfer(sequence_out_run, N, record_property):
    _, path, _ = sequence_out_run
    ckpt = load_checkpoint(path)
    seqs = generate_dataset(SceneConfig(num_cameras=N, seed=100 + N), DEFAULT_SCENES, range(2))
    for s in seqs:
        out = forward(s, ckpt.params, ckpt.model_config)
        assert out.probs.shape == (s.num_frames, N)
        assert np.all(np.isfinite(out.probs)) and np.all((out.probs >= 0) & (out.probs <= 1))
    report = evaluate_sequences(ckpt.params, ckpt.model_config, seqs)
    record_property(f"dice_N{N}", f"{report.overall:.3f}")
    record_property(f"random_N{N}", f"{1 / N:.3f}")
    assert report.overall >= 1.0 / N + 0.15


# ---------------------------------------------------------------------------
# 9. determinism and persistence


@pytest.mark.criterion(9)
def test_determinism_and_resume(default_dataset, tmp_path, record_property):
    data = [s.window(0, 60) for s in default_dataset[::5]]
    cfg = paper_recipe(epochs=3, steps_per_epoch=2, lr=1e-3)
    train_seqs, _ = split_dataset(data, cfg.protocol)

    a = Trainer(cfg, train_seqs)
    a.fit()
    b = Trainer(cfg, train_seqs)
    b.fit()
    assert format_loss_log(a.loss_log) == format_loss_log(b.loss_log)

    first = Trainer(cfg, train_seqs)
    first.fit(1)
    save_checkpoint(trainer_checkpoint(first), tmp_path / "part.ckpt")
    ck = load_checkpoint(tmp_path / "part.ckpt")
    resumed = Trainer(
        TrainConfig.from_dict(ck.train_config), train_seqs, params=ck.params, adam=ck.adam,
        rng_state=ck.rng_state, epoch=ck.epoch, loss_log=ck.loss_log,
    )
    resumed.fit()
    assert format_loss_log(resumed.loss_log) == format_loss_log(a.loss_log)
    assert all(resumed.params[k].data.tobytes() == a.params[k].data.tobytes() for k in a.params)
    for k in a.adam.m:
        assert resumed.adam.m[k].tobytes() == a.adam.m[k].tobytes()
        assert resumed.adam.v[k].tobytes() == a.adam.v[k].tobytes()
    record_property("loss_log", "bitwise equal")
    record_property("resume", "bitwise equal")
