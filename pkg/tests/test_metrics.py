import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

import oracles
from conftest import random_pair
from tvnet import metrics
from tvnet.metrics import (
    MetricsError,
    dice_iou_curves,
    e_measure_curve,
    e_measure_max,
    evaluate_directory,
    evaluate_pair,
    f_beta_mean,
    f_beta_weighted,
    f_measure_curve,
    m_dice_iou,
    mae,
    nearest_foreground,
    s_measure,
)

PERFECT = (1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0)


def blob(size=8):
    gt = np.zeros((size, size), dtype=bool)
    gt[2:5, 3:7] = True
    return gt


def test_mae_basic():
    gt = blob()
    assert mae(gt.astype(float), gt) == 0.0
    assert mae(1.0 - gt, gt) == 1.0


def test_mae_hand_sum(rng):
    pred = rng.random((4, 4))
    gt = rng.random((4, 4)) < 0.5
    expected = sum(abs(pred[i, j] - gt[i, j]) for i in range(4) for j in range(4)) / 16
    assert mae(pred, gt) == pytest.approx(expected, abs=1e-15)


def test_shape_mismatch():
    with pytest.raises(MetricsError):
        mae(np.zeros((4, 4)), np.zeros((4, 5)))


def test_s_measure_cases():
    gt = blob()
    assert s_measure(gt.astype(float), gt) == pytest.approx(1.0, abs=1e-12)
    assert s_measure(1.0 - gt, gt) < 0.5
    empty = np.zeros((8, 8), dtype=bool)
    assert s_measure(np.zeros((8, 8)), empty) == 1.0
    assert s_measure(np.full((8, 8), 0.25), empty) == 0.75


def test_s_measure_inverse_matches_oracle():
    gt = blob()
    assert s_measure(1.0 - gt, gt) == pytest.approx(oracles.s_measure(1.0 - gt, gt), abs=1e-12)


def test_e_measure_perfect_and_degenerate():
    gt = blob()
    assert e_measure_max(gt.astype(float), gt) == pytest.approx(1.0, abs=1e-12)
    empty = np.zeros((8, 8), dtype=bool)
    assert e_measure_max(np.zeros((8, 8)), empty) == 1.0
    assert e_measure_max(np.full((8, 8), 0.01), empty) == 0.0


def test_e_measure_sweep_matches_single_cut_oracle(rng):
    for _ in range(10):
        pred, gt = random_pair(rng)
        if not gt.any():
            continue
        curve = e_measure_curve(pred, gt)
        p, g = oracles.to_lists(pred, gt)
        for k, cut in enumerate(oracles.CUTS):
            assert curve[k] == pytest.approx(oracles.e_single(oracles.binarize(p, cut), g), abs=1e-9)


def test_e_measure_perfect_is_global_max_on_3x3():
    maps = [np.array(b, dtype=float).reshape(3, 3) for b in itertools.product([0, 1], repeat=9)]
    for g in maps[1:]:
        gt = g > 0.5
        scores = [e_measure_max(p, gt) for p in maps]
        assert max(scores) == e_measure_max(g, gt) == pytest.approx(1.0, abs=1e-12)
        assert min(scores) >= 0.0


def test_e_measure_is_not_monotone_counterexample():
    # adding a correct pixel can lower the published alignment score
    gt = np.zeros((3, 3), dtype=bool)
    gt[2, 2] = True
    pred = np.zeros((3, 3))
    pred[2, 1] = 1
    better = pred.copy()
    better[2, 2] = 1
    before, after = e_measure_max(pred, gt), e_measure_max(better, gt)
    assert before == pytest.approx(oracles.e_max(pred, gt), abs=1e-12)
    assert after == pytest.approx(oracles.e_max(better, gt), abs=1e-12)
    assert before == pytest.approx(0.8093491124260286, abs=1e-12)
    assert after < before


def test_f_measures_cases():
    gt = blob()
    perfect = gt.astype(float)
    assert f_beta_weighted(perfect, gt) == pytest.approx(1.0, abs=1e-12)
    assert f_beta_mean(perfect, gt) == 1.0
    assert f_beta_weighted(np.zeros((8, 8)), gt) == 0.0
    assert f_beta_mean(np.zeros((8, 8)), gt) == 0.0


def test_f_mean_sweep_matches_single_cut_oracle(rng):
    for _ in range(10):
        pred, gt = random_pair(rng)
        curve = f_measure_curve(pred, gt)
        p, g = oracles.to_lists(pred, gt)
        for k, cut in enumerate(oracles.CUTS):
            assert curve[k] == pytest.approx(oracles.f_single(oracles.binarize(p, cut), g), abs=1e-12)


def test_adaptive_variants_are_bounded(rng):
    for _ in range(20):
        pred, gt = random_pair(rng)
        d, i = m_dice_iou(pred, gt, adaptive=True)
        f = f_beta_mean(pred, gt, adaptive=True)
        assert 0.0 <= i <= d <= 1.0
        assert 0.0 <= f <= 1.0


def test_dice_iou_cases():
    gt = blob()
    assert m_dice_iou(gt.astype(float), gt) == (1.0, 1.0)
    disjoint = np.zeros((8, 8))
    disjoint[6:, :2] = 1.0
    assert m_dice_iou(disjoint, gt) == (0.0, 0.0)


def test_dice_iou_identity_per_cut(rng):
    for _ in range(50):
        pred, gt = random_pair(rng)
        dice, iou = dice_iou_curves(pred, gt)
        assert np.max(np.abs(dice - 2 * iou / (1 + iou))) < 1e-9


def test_nearest_foreground_matches_brute_force(rng):
    for _ in range(30):
        gt = rng.random((9, 11)) < rng.uniform(0.05, 0.5)
        if not gt.any():
            continue
        dist, nr, nc = nearest_foreground(gt)
        fg = np.argwhere(gt)
        for r in range(9):
            for c in range(11):
                d2, br, bc = min(((fr - r) ** 2 + (fc - c) ** 2, fr, fc) for fr, fc in fg)
                assert (nr[r, c], nc[r, c]) == (br, bc)
                assert dist[r, c] == pytest.approx(np.sqrt(d2))


@pytest.mark.parametrize("seed", range(5))
def test_weighted_f_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_pair(rng)
    assert f_beta_weighted(pred, gt) == pytest.approx(oracles.f_weighted(pred, gt), abs=1e-6)


def test_all_metrics_match_oracles(rng):
    for _ in range(25):
        pred, gt = random_pair(rng)
        rep = evaluate_pair(pred, gt)
        dice, iou = oracles.m_dice_iou(pred, gt)
        assert rep.MAE == pytest.approx(oracles.mae(pred, gt), abs=1e-6)
        assert rep.S_alpha == pytest.approx(oracles.s_measure(pred, gt), abs=1e-6)
        assert rep.E_phi_max == pytest.approx(oracles.e_max(pred, gt), abs=1e-6)
        assert rep.F_beta_mean == pytest.approx(oracles.f_mean(pred, gt), abs=1e-6)
        assert rep.F_beta_w == pytest.approx(oracles.f_weighted(pred, gt), abs=1e-6)
        assert rep.mDice == pytest.approx(dice, abs=1e-6)
        assert rep.mIoU == pytest.approx(iou, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (6, 7), elements=st.floats(0, 1)),
    arrays(np.bool_, (6, 7)),
)
def test_metrics_in_unit_interval(pred, gt):
    for v in evaluate_pair(pred, gt).as_row():
        assert 0.0 <= v <= 1.0 + 1e-12


def test_perfect_prediction_report():
    rep = evaluate_pair(blob().astype(float), blob())
    np.testing.assert_allclose(rep.as_row(), PERFECT, atol=1e-12)


# directory evaluation


def _write(path, arr):
    Image.fromarray(arr.astype(np.uint8)).save(path)


@pytest.fixture
def pred_gt_dirs(tmp_path, rng):
    pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
    pred_dir.mkdir()
    gt_dir.mkdir()
    for i in range(4):
        _, gt = random_pair(rng, 16)
        gt[0, 0] = True
        _write(gt_dir / f"img{i}.png", gt * 255)
        _write(pred_dir / f"img{i}.png", rng.integers(0, 256, gt.shape))
    _write(gt_dir / "bg.png", np.zeros((16, 16)))
    _write(pred_dir / "bg.png", np.zeros((16, 16)))
    return pred_dir, gt_dir


def test_directory_of_perfect_predictions(tmp_path, pred_gt_dirs):
    _, gt_dir = pred_gt_dirs
    rep = evaluate_directory(gt_dir, gt_dir)
    np.testing.assert_allclose(rep.as_row(), PERFECT, atol=1e-12)


def test_single_image_directory(tmp_path, rng):
    pred, gt = random_pair(rng, 16)
    gt[3, 3] = True
    pred8 = np.rint(pred * 255)
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    _write(tmp_path / "p" / "a.png", pred8)
    _write(tmp_path / "g" / "a.png", gt * 255)
    rep = evaluate_directory(tmp_path / "p", tmp_path / "g")
    assert rep == evaluate_pair(pred8 / 255.0, gt)


def test_directory_permutation_invariance(tmp_path, pred_gt_dirs):
    pred_dir, gt_dir = pred_gt_dirs
    base = evaluate_directory(pred_dir, gt_dir)
    # same pairs under shuffled names
    order = ["img2", "img0", "bg", "img3", "img1"]
    for name, sub in (("p2", pred_dir), ("g2", gt_dir)):
        (tmp_path / name).mkdir()
        for j, stem in enumerate(order):
            (tmp_path / name / f"z{4 - j}.png").write_bytes((sub / f"{stem}.png").read_bytes())
    assert evaluate_directory(tmp_path / "p2", tmp_path / "g2") == base


def test_background_exclusion(pred_gt_dirs):
    pred_dir, gt_dir = pred_gt_dirs
    excluded = evaluate_directory(pred_dir, gt_dir)
    included = evaluate_directory(pred_dir, gt_dir, exclude_background=False)
    assert excluded != included


def test_unmatched_files(pred_gt_dirs):
    pred_dir, gt_dir = pred_gt_dirs
    (pred_dir / "img0.png").unlink()
    with pytest.raises(MetricsError, match="img0"):
        evaluate_directory(pred_dir, gt_dir)


def test_report_files(tmp_path):
    rep = metrics.MetricsReport(*PERFECT)
    csv_path, json_path = metrics.write_report(rep, tmp_path)
    header = csv_path.read_text().splitlines()[0]
    assert header.split(",") == list(metrics.COLUMNS)
    assert '"MAE": 0.0' in json_path.read_text()
