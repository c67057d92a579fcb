"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
repeated in the terminal summary.
"""

import filecmp
import functools
import os
import subprocess
import sys
import time
from collections import Counter

import numpy as np
import pytest
from gradient_cases import CASES, GRAD_TOL, worst_error

from uamd import tensor as T
from uamd.data import Calibration, synth_dataset, synth_scene
from uamd.eval import (
    ImageFull,
    ImageHalfH,
    ImageHalfV,
    LidarDropout,
    Rotation,
    apply_failure,
    compute_metrics,
    evaluate,
    fallback_combo,
)
from uamd.losses import (
    LossComponents,
    LossWeights,
    loss_gradient,
    loss_lidar,
    loss_noise,
    loss_photometric,
    loss_semi,
    loss_sup,
    warp_image,
)
from uamd.network import ModalCombo, NetworkConfig, drl, forward, init_params, soft_argmax
from uamd.sgm import SgmConfig, aggregate_paths, matching_cost, run_sgm
from uamd.tensor import DiffTensor, check_gradients
from uamd.training import MdtState, TrainConfig, _seeds, fit

RESULTS: dict[int, str] = {}

DESK_NET = NetworkConfig(max_disparity=48, branch_channels=(8, 8, 8), aggregated_channels=8)
DESK_STEPS = 500


def desk_config(combo: str) -> TrainConfig:
    return TrainConfig(mode="supervised", combo=combo, batch_size=5, lr0=1e-3, steps=DESK_STEPS,
                       lr_schedule=((300, 0.5), (400, 0.1)))


def criterion(number: int, title: str):
    """Run the body, which returns ``(ok, detail)``, and record one line for it."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                ok, detail = False, f"error: {type(exc).__name__}: {exc}"
            line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
            RESULTS[number] = line
            print(line)
            assert ok, line
        return run
    return wrap


@pytest.fixture(scope="module")
def desk_data():
    return [s for s, _ in synth_dataset(5, 64, 128, 3, 24, seed=0, min_disp=8)]


@pytest.fixture(scope="module")
def specialist(desk_data):
    start = time.perf_counter()
    result = fit(desk_data, desk_config("dual_lidar"), DESK_NET)
    return result, time.perf_counter() - start


@pytest.fixture(scope="module")
def modal_dropout(desk_data):
    return fit(desk_data, desk_config("modal_dropout"), DESK_NET)


@criterion(1, "gradient oracle")
def test_01_gradient_oracle():
    start = time.perf_counter()
    errors = {name: worst_error(name) for name in CASES}
    worst_name = max(errors, key=errors.get)
    s, _ = synth_scene(16, 32, 2, 6, seed=5, keep_fraction=0.3)
    net = NetworkConfig(max_disparity=16, feature_scale=4, branch_channels=(4, 4, 4), aggregated_channels=4,
                        dtype="float64")
    params = init_params(net, seed=6)
    r = np.random.default_rng(7).standard_normal((16, 32))
    right = s.right.astype(np.float64)

    def end_to_end(left):
        pred = forward(s, ModalCombo.DUAL_LIDAR, params, net, images=(left, right))
        return T.sum(pred.disparity * r)

    e2e = check_gradients(end_to_end, [s.left.astype(np.float64)])
    elapsed = time.perf_counter() - start
    ok = errors[worst_name] <= GRAD_TOL and e2e <= 1e-3 and elapsed < 300
    return ok, (f"{len(CASES)} ops x 20 instances, worst {errors[worst_name]:.1e} ({worst_name}); "
                f"end-to-end 16x32 {e2e:.1e}; {elapsed:.0f} s")


@criterion(2, "disparity regression contract")
def test_02_drl_contract():
    rng = np.random.default_rng(0)
    worst = 0.0
    for scale in (1.0, 50.0, 1e4):
        _, prob = soft_argmax(DiffTensor(rng.standard_normal((48, 6, 7)) * scale))
        worst = max(worst, float(np.abs(prob.values.sum(axis=0) - 1).max()))
    cfg = NetworkConfig(max_disparity=16, feature_scale=1, branch_channels=(4,), dtype="float64")
    one_hot = np.full((1, 16, 3, 4), 1e4)
    one_hot[0, 7] = 0.0
    disp7 = drl(DiffTensor(one_hot), Calibration(100.0, 0.5), cfg).disparity.values
    at10 = np.full((1, 16, 2, 2), 1e4)
    at10[0, 10] = 0.0
    depth = drl(DiffTensor(at10), Calibration(100.0, 0.5), cfg).depth.values
    ok = worst <= 1e-6 and np.all(np.abs(disp7 - 7.0) <= 0.01) and np.all(depth == 5.0)
    return ok, (f"max |sum p - 1| {worst:.1e}; one-hot bin 7 -> {disp7.min():.4f}..{disp7.max():.4f}; "
                f"f=100 b=0.5 disp=10 -> {np.unique(depth)} m")


@criterion(3, "overfit convergence")
def test_03_overfit(desk_data, specialist):
    result, elapsed = specialist
    start = init_params(DESK_NET, _seeds(desk_config("dual_lidar").seed)[0])  # the weights fit starts from
    first = evaluate(start, desk_data, DESK_NET, ModalCombo.DUAL_LIDAR).rmse_mm
    after = evaluate(result.params, desk_data, DESK_NET, ModalCombo.DUAL_LIDAR).rmse_mm
    ratio = after / first
    ok = ratio < 0.1 and elapsed < 15 * 60
    return ok, (f"RMSE {first:.0f} mm at step 1 -> {after:.0f} mm after {DESK_STEPS} steps "
                f"(ratio {ratio:.3f}); {elapsed / 60:.1f} min")


@criterion(4, "modal-dropout model vs fixed-combo specialist")
def test_04_modal_dropout(desk_data, specialist, modal_dropout):
    finite = True
    for combo in ModalCombo:
        for s in desk_data:
            depth = forward(s, combo, modal_dropout.params, DESK_NET).depth.values
            finite &= bool(np.all(np.isfinite(depth)) and np.all(depth > 0))
    rmse = {combo.key: evaluate(modal_dropout.params, desk_data, DESK_NET, combo).rmse_mm for combo in ModalCombo}
    spec = evaluate(specialist[0].params, desk_data, DESK_NET, ModalCombo.DUAL_LIDAR).rmse_mm
    ok = finite and spec < rmse["dual_lidar"]
    per_combo = ", ".join(f"{k} {v:.0f}" for k, v in rmse.items())
    return ok, (f"finite positive depth under all combos: {finite}; dual_lidar RMSE specialist {spec:.0f} mm "
                f"< modal-dropout {rmse['dual_lidar']:.0f} mm (modal-dropout: {per_combo})")


UNREAD = {
    ModalCombo.DUAL_LIDAR: ("sparse_right", "gt"),
    ModalCombo.MONO_LIDAR: ("right", "sparse_right", "gt"),
    ModalCombo.DUAL: ("sparse_left", "sparse_right", "gt"),
}


def _randomized(sample, fields, rng):
    changes = {}
    for name in fields:
        old = getattr(sample, name)
        if name == "right":
            changes[name] = rng.random(old.shape).astype(old.dtype)
        else:
            new = rng.uniform(1, 90, old.shape) * (rng.random(old.shape) < 0.3)
            changes[name] = new.astype(old.dtype)
    if "gt" in changes:  # keep gt at least as dense as the left scan
        changes["gt"] = np.maximum(changes["gt"], changes.get("sparse_left", sample.sparse_left))
    return sample.replace(**changes)


@criterion(5, "input independence")
def test_05_input_independence():
    net = NetworkConfig(max_disparity=16, feature_scale=4, branch_channels=(4, 4, 4), aggregated_channels=4)
    params = init_params(net, 3)
    rng = np.random.default_rng(1)
    checked = 0
    identical = True
    for s, _ in synth_dataset(2, 16, 32, 2, 6, seed=2, keep_fraction=0.3):
        for combo, fields in UNREAD.items():
            ref = forward(s, combo, params, net)
            for _ in range(5):
                out = forward(_randomized(s, fields, rng), combo, params, net)
                identical &= np.array_equal(out.disparity.values, ref.disparity.values)
                identical &= np.array_equal(out.depth.values, ref.depth.values)
                checked += 1
    return identical, f"{checked} randomized replacements over 3 combos, all outputs bit-identical: {identical}"


@criterion(6, "modal-dropout trigger distribution")
def test_06_mdt_distribution():
    sup = MdtState("supervised", seed=0)
    counts = Counter(sup.sample().key for _ in range(3000))
    semi = MdtState("semi", seed=0)
    semi_counts = Counter(semi.sample().key for _ in range(3000))
    ok = len(counts) == 3 and all(900 <= c <= 1100 for c in counts.values()) and "mono_lidar" not in semi_counts
    return ok, f"supervised {dict(counts)}; semi {dict(semi_counts)}"


@criterion(7, "loss-weight plumbing")
def test_07_loss_weights():
    total = loss_semi(LossComponents(1, 2, 3, 4), LossWeights(1, 1.3, 0.01, 0.1)).item()
    rng = np.random.default_rng(0)
    zero = True
    nonneg = True
    for _ in range(50):
        gt = rng.uniform(1, 80, (6, 8)) * (rng.random((6, 8)) < 0.5)
        gt[0, 0] = 10.0
        img = rng.random((3, 6, 8))
        for fn in (loss_sup, loss_lidar, loss_noise):
            zero &= fn(gt, gt).item() == 0
            nonneg &= fn(rng.uniform(0, 80, (6, 8)), gt).item() >= 0
        mask = np.ones((6, 8), bool)
        zero &= abs(loss_photometric(img, img, mask).item()) <= 1e-12
        nonneg &= loss_photometric(img, rng.random((3, 6, 8)), mask).item() >= 0
        zero &= loss_gradient(np.full((6, 8), rng.uniform(1, 40)), img).item() == 0
        nonneg &= loss_gradient(rng.uniform(0, 40, (6, 8)), img).item() >= 0
    ok = total == 4.03 and zero and nonneg
    return ok, f"total {total!r}; zero under perfect prediction: {zero}; nonnegative on 50 draws: {nonneg}"


@criterion(8, "photometric oracle")
def test_08_photometric():
    worst = 0.0
    for seed in range(5):
        s, truth = synth_scene(64, 128, 3, 24, seed=seed)
        rec, valid = warp_image(s.right.astype(np.float64), truth.disparity_left.astype(np.float64), 1)
        worst = max(worst, loss_photometric(s.left, rec, valid & truth.nonoccluded_left).item())
        rec, valid = warp_image(s.left.astype(np.float64), truth.disparity_right.astype(np.float64), -1)
        worst = max(worst, loss_photometric(s.right, rec, valid & truth.nonoccluded_right).item())
    return worst <= 1e-3, f"worst loss over 5 scenes x 2 views {worst:.2e}"


@criterion(9, "semi-global matching oracle")
def test_09_sgm():
    cfg = SgmConfig(max_disp=24)
    accuracies = []
    for seed in range(5):
        s, truth = synth_scene(96, 192, 3, 16, seed=seed, blur_px=0)
        result = run_sgm(s.left, s.right, s.calib, cfg)
        m = truth.nonoccluded_left
        accuracies.append(float(np.mean(result.disparity_left[m] == truth.disparity_left[m])))
    s, _ = synth_scene(32, 96, 3, 16, seed=0, blur_px=0)
    cost = matching_cost(s.left, s.right, cfg)
    exact = all(np.array_equal(aggregate_paths(cost, SgmConfig(max_disp=24, p1=0, p2=0, num_paths=n)), n * cost)
                for n in (4, 8))
    ok = min(accuracies) >= 0.95 and exact
    return ok, f"exact-disparity rate {min(accuracies):.3f} (worst of 5 stereograms); penalty-free = paths x cost: {exact}"


@criterion(10, "metrics fixtures")
def test_10_metrics():
    m = compute_metrics(np.array([2.0, 3.0]), np.array([1.0, 3.0]))
    inv = compute_metrics(np.array([25.0]), np.array([20.0]))
    rng = np.random.default_rng(0)
    ordered = all(r.rmse_mm >= r.mae_mm and r.irmse_per_km >= r.imae_per_km
                  for r in (compute_metrics(rng.uniform(0.5, 90, n), rng.uniform(0.5, 90, n))
                            for n in rng.integers(1, 200, 100)))
    gt = rng.uniform(1, 80, (10, 10))
    perfect = compute_metrics(gt, gt)
    zeros = (perfect.rmse_mm, perfect.mae_mm, perfect.irmse_per_km, perfect.imae_per_km) == (0, 0, 0, 0)
    ok = (abs(m.mae_mm - 500) <= 1e-3 and abs(m.rmse_mm - 707.107) <= 1e-3 and abs(inv.imae_per_km - 10) <= 1e-3
          and ordered and zeros)
    return ok, (f"MAE {m.mae_mm:.3f} mm, RMSE {m.rmse_mm:.3f} mm, iMAE {inv.imae_per_km:.3f} /km; "
                f"RMSE >= MAE on 100 fixtures: {ordered}; perfect -> zeros: {zeros}")


@criterion(11, "failure harness")
def test_11_failures():
    net = NetworkConfig(max_disparity=16, feature_scale=4, branch_channels=(4, 4, 4), aggregated_channels=4)
    params = init_params(net, 2)
    data = [s for s, _ in synth_dataset(3, 32, 64, 3, 12, seed=4, keep_fraction=0.2)]
    once = apply_failure(data[0], ImageFull)
    twice = apply_failure(once, ImageFull)
    idempotent = all(np.array_equal(getattr(once, f), getattr(twice, f))
                     for f in ("left", "right", "sparse_left", "sparse_right", "gt"))
    rotated = apply_failure(data[0], Rotation(0.0))
    identity = (np.array_equal(rotated.sparse_left, data[0].sparse_left)
                and np.array_equal(rotated.sparse_right, data[0].sparse_right))
    plain = evaluate(params, data, net, ModalCombo.DUAL)
    dropped = evaluate(params, data, net, ModalCombo.DUAL, LidarDropout)
    mapping = {kind.name: fallback_combo(kind).key for kind in (ImageHalfH, ImageHalfV, ImageFull, Rotation(),
                                                                 LidarDropout)}
    expected = {"ImageHalfH": "mono_lidar", "ImageHalfV": "mono_lidar", "ImageFull": "mono_lidar",
                "Rotation(5)": "dual", "LidarDropout": "dual"}
    ok = idempotent and identity and plain == dropped and mapping == expected
    return ok, (f"ImageFull idempotent: {idempotent}; Rotation(0) identity: {identity}; "
                f"dual with LidarDropout bit-equal: {plain == dropped}; fallback {mapping}")


def _cli(*args, cwd):
    env = dict(os.environ, UAMD_THREADS="1")
    return subprocess.run([sys.executable, "-m", "uamd.cli", *args], cwd=cwd, env=env,
                          capture_output=True, text=True)


@criterion(12, "reproducible CLI training")
def test_12_reproducibility(tmp_path):
    (tmp_path / "run.ini").write_text(
        "[model]\nmax_disparity = 16\nbranch_channels = 4, 4, 4\naggregated_channels = 4\n"
        "[train]\ncombo = modal_dropout\nbatch_size = 2\nsteps = 12\nlr0 = 0.001\ncheckpoint_every = 5\nseed = 3\n")
    gen = _cli("gen-data", "--out", "ds", "--count", "4", "--height", "32", "--width", "64", "--max-disp", "6",
               cwd=tmp_path)
    assert gen.returncode == 0, gen.stderr
    runs = []
    for name in ("a", "b"):
        proc = _cli("train", "--config", "run.ini", "--data", "ds", "--out", f"{name}/model.ckpt", cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr
        runs.append(tmp_path / name)
    files = sorted(p.name for p in runs[0].iterdir())
    same = files == sorted(p.name for p in runs[1].iterdir()) and all(
        filecmp.cmp(runs[0] / f, runs[1] / f, shallow=False) for f in files)
    rows = (runs[0] / "model.csv").read_text().count("\n") - 1
    ok = same and rows == 12 and len(files) == 4
    return ok, f"two runs, files {files} byte-identical: {same}; {rows} loss rows"
