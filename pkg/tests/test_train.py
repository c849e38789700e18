import math

import numpy as np
import pytest

from restoreib.degrade import DegradationSpec, make_dataset
from restoreib.metrics import psnr
from restoreib.nn import GeneratorConfig, build_generator, build_patchgan
from restoreib.train import (
    LossRecord,
    LossTrace,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    pretrain_reconstruction,
    restore,
    train_gan,
)


@pytest.fixture(scope="module")
def tiny():
    return make_dataset(DegradationSpec(kind="rain"), 5, 32, 0)


def nets(seed=0, depth=2):
    return build_generator(GeneratorConfig(depth=depth, base_channels=8), seed=seed), build_patchgan(6, 8, seed=seed)


@pytest.mark.parametrize("kind", ["lsgan", "jsgan", "l1_only"])
def test_one_epoch_smoke(tiny, kind):
    g, d = nets()
    trace = train_gan(g, d, tiny.train, TrainConfig(loss_kind=kind, epochs=1, crop_size=32))
    assert len(trace) == 1 and trace[0].epoch == 1
    r = trace[0]
    assert all(math.isfinite(v) for v in (r.g_loss, r.d_loss, r.l1, r.adv))
    if kind == "l1_only":
        assert r.d_loss == 0.0 and r.g_loss == r.l1


def test_same_seed_same_trace_and_params(tiny):
    runs = []
    for _ in range(2):
        g, d = nets(seed=3)
        trace = train_gan(g, d, tiny.train, TrainConfig(loss_kind="jsgan", epochs=2, crop_size=24, seed=5))
        runs.append((trace.to_csv(), b"".join(p.data.tobytes() for _, p in g.parameters())))
    assert runs[0] == runs[1]
    g, d = nets(seed=3)
    other = train_gan(g, d, tiny.train, TrainConfig(loss_kind="jsgan", epochs=2, crop_size=24, seed=6))
    assert other.to_csv() != runs[0][0]


def test_samples_per_epoch_controls_steps(tiny):
    g, d = nets()
    seen = []
    train_gan(g, None, tiny.train, TrainConfig(loss_kind="l1_only", epochs=2, crop_size=8, samples_per_epoch=7), on_epoch=seen.append)
    assert [r.epoch for r in seen] == [1, 2]


def test_adversarial_needs_discriminator(tiny):
    g, _ = nets()
    with pytest.raises(ValueError, match="discriminator"):
        train_gan(g, None, tiny.train, TrainConfig(loss_kind="lsgan", epochs=1))


def test_divergence_guard(tiny):
    g, d = nets()
    for _, p in g.parameters():
        p.data[...] = np.nan
    with pytest.raises(TrainingDiverged) as err:
        train_gan(g, d, tiny.train, TrainConfig(loss_kind="lsgan", epochs=1, crop_size=24))
    assert err.value.epoch == 1 and err.value.step == 0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss_kind="wgan")
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=4)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"lr": 1e-3, "momentum": 0.9})
    cfg = TrainConfig(loss_kind="jsgan", epochs=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.batch_size) == (2e-4, 0.5, 0.999, 0.0, 1)


def test_pretraining_reduces_reconstruction_loss(tiny):
    g, _ = nets(depth=2)
    cfg = TrainConfig(crop_size=16, samples_per_epoch=40, lr=1e-3)
    trace = pretrain_reconstruction(g, [y for _, y in tiny.train], cfg, epochs=4)
    losses = trace.column("g_loss")
    assert losses[-1] < losses[0]


def test_trace_csv_round_trip(tmp_path):
    trace = LossTrace([LossRecord(1, 1.5, 0.25, 0.01, 0.5), LossRecord(2, 1.0 / 3.0, 0.2, 0.005, 0.4)])
    text = trace.to_csv(tmp_path / "t.csv")
    assert text.splitlines()[0] == "epoch,g_loss,d_loss,l1,adv"
    back = LossTrace.from_csv(tmp_path / "t.csv")
    assert back == trace
    assert LossTrace.from_csv(text) == trace


def test_restore_and_evaluate_ranges(tiny):
    g, _ = nets()
    out = restore(g, tiny.test[0][0])
    assert out.shape == tiny.test[0][0].shape and out.min() >= 0 and out.max() <= 1
    res = evaluate(g, tiny.test)
    assert res["count"] == len(tiny.test) and math.isfinite(res["psnr"])


def test_identity_mapping_carries_most_of_the_restoration():
    ds = make_dataset(DegradationSpec(kind="rain"), 20, 32, 1)
    g = build_generator(GeneratorConfig(depth=3), seed=0)
    train_gan(g, None, ds.train, TrainConfig(loss_kind="l1_only", epochs=6, crop_size=32, lr=1e-3))
    trained = evaluate(g, ds.test)["psnr"]
    identity = float(np.mean([psnr(x, y) for x, y in ds.test]))
    assert identity > 0.6 * trained
