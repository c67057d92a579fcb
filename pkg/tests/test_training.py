import csv
import math
from collections import Counter

import numpy as np
import pytest

from uamd import tensor as T
from uamd import training
from uamd.data import synth_dataset
from uamd.losses import LossWeights, loss_lidar
from uamd.network import ModalCombo, NetworkConfig, forward, init_params, load_checkpoint
from uamd.training import (
    DEFAULT_SCHEDULES,
    MODAL_DROPOUT,
    Adam,
    MdtState,
    StepResult,
    TrainConfig,
    TrainingDiverged,
    checkpoint_path,
    fit,
    lr_at,
    mdt_sample,
    train_step_semi,
    train_step_supervised,
)

NET = NetworkConfig(max_disparity=16, feature_scale=4, branch_channels=(4, 4, 4), aggregated_channels=4)


@pytest.fixture(scope="module")
def data():
    return [s for s, _ in synth_dataset(3, 16, 32, 2, 6, seed=5, keep_fraction=0.3)]


def _arrays(params):
    return {k: v.copy() for k, v in params.arrays().items()}


@pytest.mark.parametrize("epoch, expected", [(0, 1e-4), (9, 1e-4), (10, 5e-5), (12, 5e-5),
                                             (14, 1e-5), (16, 1e-5), (17, 1e-6), (18, 1e-6)])
def test_supervised_schedule(epoch, expected):
    assert lr_at(epoch, TrainConfig(lr0=1e-4)) == pytest.approx(expected, rel=1e-12)


def test_semi_schedule_counts_iterations():
    cfg = TrainConfig(mode="semi", combo="dual", lr0=1e-4)
    assert cfg.schedule == DEFAULT_SCHEDULES["semi"]
    assert lr_at(9_999, cfg) == 1e-4
    assert lr_at(10_000, cfg) == pytest.approx(1e-5)
    assert lr_at(20_000, cfg) == pytest.approx(1e-6)


def test_custom_schedule_and_validation():
    cfg = TrainConfig(lr0=1.0, lr_schedule=[(2, 0.5), (4, 0.25)])
    assert [lr_at(p, cfg) for p in range(6)] == [1.0, 1.0, 0.5, 0.5, 0.25, 0.25]
    with pytest.raises(ValueError, match="non-decreasing"):
        TrainConfig(lr_schedule=((4, 0.5), (2, 0.1)))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(mode="unsupervised")


def test_mdt_draws_are_uniform_and_reproducible():
    state = MdtState("supervised", seed=11)
    counts = Counter(mdt_sample(state) for _ in range(3000))
    assert set(counts) == set(ModalCombo)
    assert all(900 <= c <= 1100 for c in counts.values())
    a, b = MdtState("supervised", 3), MdtState("supervised", 3)
    assert [a.sample() for _ in range(50)] == [b.sample() for _ in range(50)]


def test_semi_universe_never_draws_mono_lidar():
    state = MdtState("semi", seed=0)
    draws = {state.sample() for _ in range(3000)}
    assert draws == {ModalCombo.DUAL_LIDAR, ModalCombo.DUAL}


def test_semi_mono_lidar_rejected(data):
    with pytest.raises(ValueError, match="dual_lidar, dual"):
        TrainConfig(mode="semi", combo="mono_lidar")
    params = init_params(NET, 0)
    with pytest.raises(ValueError, match="stereo"):
        train_step_semi(data[:1], ModalCombo.MONO_LIDAR, params, NET, TrainConfig(mode="semi", combo="dual"),
                        Adam(), 1e-3)


def test_zero_learning_rate_leaves_params_identical(data):
    params = init_params(NET, 0)
    before = _arrays(params)
    res = train_step_supervised(data[:2], ModalCombo.DUAL_LIDAR, params, NET, Adam(), 0.0)
    assert math.isfinite(res.loss) and not res.skipped
    assert all(np.array_equal(before[k], v) for k, v in params.arrays().items())


@pytest.mark.parametrize("combo", list(ModalCombo))
def test_supervised_step_is_finite_and_updates(data, combo):
    params = init_params(NET, 0)
    before = _arrays(params)
    res = train_step_supervised(data[:2], combo, params, NET, Adam(), 1e-3)
    assert math.isfinite(res.loss) and res.loss >= 0
    assert res.components["sup"] == pytest.approx(res.loss)
    assert params.all_finite()
    assert any(not np.array_equal(before[k], v) for k, v in params.arrays().items())


@pytest.mark.parametrize("combo", [ModalCombo.DUAL_LIDAR, ModalCombo.DUAL])
def test_semi_step_is_finite(data, combo):
    params = init_params(NET, 0)
    noise = {data[0].sample_id: data[0].gt.astype(np.float32)}
    res = train_step_semi(data[:2], combo, params, NET, TrainConfig(mode="semi", combo=combo.key),
                          Adam(), 1e-3, noise)
    assert math.isfinite(res.loss) and res.loss >= 0
    assert all(math.isfinite(v) and v >= 0 for v in res.components.values())
    assert params.all_finite()


def test_weight_limit_reduces_to_lidar_loss(data):
    params = init_params(NET, 0)
    cfg = TrainConfig(mode="semi", combo="dual_lidar", weights=LossWeights(1.0, 0.0, 0.0, 0.0))
    res = train_step_semi(data[:1], ModalCombo.DUAL_LIDAR, params, NET, cfg, Adam(), 0.0)
    pred = forward(data[0], ModalCombo.DUAL_LIDAR, params, NET, side="right")
    assert res.loss == pytest.approx(loss_lidar(pred.depth, data[0].sparse_right).item(), rel=1e-6)
    assert res.components["photometric"] == res.components["gradient"] == res.components["noise"] == 0.0


def test_batch_without_supervision_is_skipped(data):
    empty = data[0].replace(gt=np.zeros_like(data[0].gt), sparse_left=np.zeros_like(data[0].gt))
    params = init_params(NET, 0)
    before = _arrays(params)
    res = train_step_supervised([empty], ModalCombo.DUAL, params, NET, Adam(), 1e-3)
    assert res.skipped and math.isnan(res.loss)
    assert all(np.array_equal(before[k], v) for k, v in params.arrays().items())


def test_non_finite_loss_skips_update(data, monkeypatch):
    params = init_params(NET, 0)
    before = _arrays(params)
    monkeypatch.setattr(training, "loss_sup", lambda depth, gt: T.scale(T.mean(depth), math.nan))
    res = train_step_supervised(data[:1], ModalCombo.DUAL, params, NET, Adam(), 1e-3)
    assert math.isnan(res.loss) and not res.skipped
    assert all(np.array_equal(before[k], v) for k, v in params.arrays().items())


def test_divergence_guard(data, monkeypatch):
    monkeypatch.setattr(training, "train_step_supervised",
                        lambda *a, **k: StepResult(math.inf, {"sup": math.inf}))
    with pytest.raises(TrainingDiverged, match="10 consecutive"):
        fit(data, TrainConfig(combo="dual", steps=50), NET)


def test_fit_is_deterministic_and_logs_every_step(data, tmp_path):
    cfg = TrainConfig(combo=MODAL_DROPOUT, batch_size=2, steps=4, lr0=1e-3, seed=7)
    a = fit(data, cfg, NET, csv_path=tmp_path / "a.csv", checkpoint=tmp_path / "a.ckpt")
    b = fit(data, cfg, NET, csv_path=tmp_path / "b.csv", checkpoint=tmp_path / "b.ckpt")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert len(rows) == 4 and list(rows[0]) == ["step", "epoch", "combo", "lr", "loss", "sup"]
    assert [float(r["loss"]) for r in rows] == [r["loss"] for r in a.trace]
    assert a.trace == b.trace
    restored, net = load_checkpoint(tmp_path / "a.ckpt")
    assert net == NET
    assert all(np.array_equal(restored[k].values, v.values) for k, v in a.params.items())


def test_seed_changes_the_run(data):
    runs = [fit(data, TrainConfig(batch_size=1, steps=3, seed=s), NET).trace for s in (0, 1)]
    assert [r["loss"] for r in runs[0]] != [r["loss"] for r in runs[1]]


def test_checkpoint_cadence(data, tmp_path):
    final = tmp_path / "model.ckpt"
    fit(data, TrainConfig(combo="dual", batch_size=1, steps=5, checkpoint_every=2), NET, checkpoint=final)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "model.ckpt", checkpoint_path(final, 2).name, checkpoint_path(final, 4).name]
    assert checkpoint_path(final, 2).name == "model_step000002.ckpt"


def test_semi_fit_with_noise_labels(data, tmp_path):
    noise = {s.sample_id: s.gt for s in data}
    res = fit(data, TrainConfig(mode="semi", batch_size=1, steps=3), NET, noise_labels=noise,
              csv_path=tmp_path / "semi.csv")
    assert {r["combo"] for r in res.trace} <= {"dual_lidar", "dual"}
    assert all(math.isfinite(r["loss"]) for r in res.trace)
    header = next(csv.reader(open(tmp_path / "semi.csv")))
    assert header[5:] == ["lidar", "photometric", "gradient", "noise"]


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        fit([], TrainConfig(), NET)


def test_smoothed_loss_decreases_monotonically_on_one_sample(data):
    cfg = TrainConfig(combo="dual_lidar", batch_size=1, steps=100, lr0=1e-3, lr_schedule=())
    losses = np.array([r["loss"] for r in fit(data[:1], cfg, NET).trace])
    smoothed = losses.reshape(10, 10).mean(axis=1)
    assert np.all(np.diff(smoothed) < 0)
    assert smoothed[-1] < 0.1 * smoothed[0]


def test_semi_dual_uses_lidar_as_a_label_only(data):
    params = init_params(NET, 0)
    cfg = TrainConfig(mode="semi", combo="dual")
    res = train_step_semi(data[:1], ModalCombo.DUAL, params, NET, cfg, Adam(), 0.0)
    pred = forward(data[0], ModalCombo.DUAL, params, NET, side="right")
    assert res.components["lidar"] == pytest.approx(loss_lidar(pred.depth, data[0].sparse_right).item(), rel=1e-6)
    assert res.components["lidar"] > 0
