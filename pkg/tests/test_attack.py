import json

import numpy as np
import pytest

from cloudmap.attack import (BLOCKED_GRADIENT, AttackReport, asr,
                             attack_suite, fgsm, input_point_gradient,
                             make_pipeline)
from cloudmap.cloud import PointCloud, synth_shape
from cloudmap.net import loss_and_grad


def labeled(points, label=0):
    return PointCloud(np.asarray(points, dtype=np.float64), label=label)


def small_testset(per=3, n=96):
    out = []
    for ci, kind in enumerate(("sphere", "cube", "torus")):
        for i in range(per):
            c = synth_shape(kind, n, seed=[50, ci, i])
            out.append(PointCloud(c.points, label=ci))
    return out


# ---------------------------------------------------------------------------
# input_point_gradient

def test_blocked_pipelines_return_marker():
    for name in ("basic", "zbuffer"):
        pipe = make_pipeline(name, 3, seed=0)
        g = input_point_gradient(pipe, labeled(np.zeros((4, 3))), 0)
        assert g is BLOCKED_GRADIENT
        assert not g  # falsy marker


def test_single_point_gradient_is_half_net_gradient():
    pipe = make_pipeline("leaky", 3, seed=0)
    cloud = labeled([[0.25, -0.5, 0.75]])
    image = pipe.map_image(cloud)
    x = pipe.net_input_from_image(image)
    _, _, d_input = loss_and_grad(pipe.net, x, 0, downsample=pipe.downsample)
    r, c = image.leak_map[0, 0], image.leak_map[0, 1]
    expected = 0.5 * pipe.gain * d_input[r, c, :]
    got = input_point_gradient(pipe, cloud, 0)
    assert got.shape == (1, 3)
    assert np.allclose(got[0], expected, atol=1e-15)
    assert np.any(got != 0.0)


def test_leak_gradient_matches_finite_differences():
    from cloudmap.project import remap_frozen
    pipe = make_pipeline("leaky", 3, seed=0)
    cloud = labeled(synth_shape("sphere", 64, seed=1).points, label=1)
    image = pipe.map_image(cloud)
    grad = input_point_gradient(pipe, cloud, 1, image=image)

    def frozen_loss(pts):
        data = remap_frozen(image, PointCloud(pts))
        x = pipe.net_input_from_image(
            type(image)(data, image.grad_path, leak_map=image.leak_map,
                        source_key=image.source_key))
        loss, _, _ = loss_and_grad(pipe.net, x, 1, downsample=pipe.downsample)
        return loss

    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(8):
        i, j = int(rng.integers(64)), int(rng.integers(3))
        eps = 1e-6
        pts = cloud.points.copy()
        pts[i, j] += eps
        lp = frozen_loss(pts)
        pts[i, j] -= 2 * eps
        lm = frozen_loss(pts)
        fd = (lp - lm) / (2 * eps)
        denom = max(abs(fd), abs(grad[i, j]), 1e-8)
        worst = max(worst, abs(fd - grad[i, j]) / denom)
    assert worst < 1e-3


def test_stale_leak_map_rejected():
    pipe = make_pipeline("leaky", 3, seed=0)
    cloud = labeled(synth_shape("cube", 64, seed=3).points)
    image = pipe.map_image(cloud)
    moved = labeled(cloud.points + 0.01)
    with pytest.raises(ValueError):
        input_point_gradient(pipe, moved, 0, image=image)


def test_graphdraw_gradient_touches_every_point():
    pipe = make_pipeline("graphdraw", 3, seed=0)
    cloud = labeled(synth_shape("torus", 96, seed=4).points, label=2)
    grad = input_point_gradient(pipe, cloud, 2)
    assert grad.shape == (96, 3)
    # links exist for every point and channel; with a trained-free random
    # net most gradients are nonzero
    assert np.count_nonzero(np.linalg.norm(grad, axis=1)) > 90


# ---------------------------------------------------------------------------
# fgsm

def test_fgsm_blocked_identity():
    pipe = make_pipeline("basic", 3, seed=0)
    cloud = labeled(synth_shape("sphere", 64, seed=5).points)
    res = fgsm(pipe, cloud, 0, epsilon=0.1)
    assert res.blocked
    assert res.grad_norm == 0.0
    assert res.cloud is cloud  # literally unchanged
    assert np.linalg.norm(res.cloud.points - cloud.points) == 0.0


def test_fgsm_epsilon_zero_identity():
    pipe = make_pipeline("leaky", 3, seed=0)
    cloud = labeled(synth_shape("cube", 64, seed=6).points)
    res = fgsm(pipe, cloud, 0, epsilon=0.0)
    assert not res.blocked
    assert np.array_equal(res.cloud.points, cloud.points)


def test_fgsm_moves_by_exactly_epsilon():
    pipe = make_pipeline("leaky", 3, seed=0)
    cloud = labeled(synth_shape("torus", 64, seed=7).points, label=1)
    grad = input_point_gradient(pipe, cloud, 1)
    res = fgsm(pipe, cloud, 1, epsilon=0.1)
    assert np.array_equal(res.cloud.points,
                          cloud.points + 0.1 * np.sign(grad))
    delta = res.cloud.points - cloud.points
    nz = grad != 0.0
    assert np.allclose(np.abs(delta[nz]), 0.1, atol=1e-12)
    assert np.all(delta[~nz] == 0.0)
    assert res.grad_norm == pytest.approx(float(np.linalg.norm(grad)))


def test_fgsm_rejects_zero_iterations():
    pipe = make_pipeline("leaky", 3, seed=0)
    with pytest.raises(ValueError):
        fgsm(pipe, labeled(np.zeros((2, 3))), 0, iterations=0)


def test_fgsm_pure_function():
    pipe = make_pipeline("leaky", 3, seed=0)
    cloud = labeled(synth_shape("cone", 64, seed=8).points)
    a = fgsm(pipe, cloud, 0, epsilon=0.1)
    b = fgsm(pipe, cloud, 0, epsilon=0.1)
    assert np.array_equal(a.cloud.points, b.cloud.points)


# ---------------------------------------------------------------------------
# asr formula against the frozen reference pairs

def test_asr_reference_row_one():
    assert abs(asr(90.15, 45.99) - 48.99) < 0.01


def test_asr_reference_row_two():
    assert abs(asr(84.97, 24.76) - 70.86) < 0.01


def test_asr_reference_row_three():
    assert abs(asr(89.51, 89.51) - 0.00) < 0.01


def test_asr_edge_cases():
    assert asr(0.0, 0.0) == 0.0
    assert asr(50.0, 60.0) == 0.0  # attack helped; clamped
    assert asr(50.0, 0.0) == 100.0


# ---------------------------------------------------------------------------
# attack_suite

def test_attack_suite_blocked_exact_equality():
    pipe = make_pipeline("basic", 3, seed=0)
    report = attack_suite(pipe, small_testset(), epsilon=0.1)
    assert report.attacked_accuracy == report.clean_accuracy
    assert report.attack_success_rate == 0.0
    assert report.mean_perturbation_l2 == 0.0
    for o in report.outcomes:
        assert o["attacked_pred"] == o["clean_pred"]
        assert o["perturbation_l2"] == 0.0


def test_attack_suite_leak_perturbs():
    pipe = make_pipeline("leaky", 3, seed=0)
    report = attack_suite(pipe, small_testset(), epsilon=0.1)
    assert report.mean_perturbation_l2 > 0.0
    assert 0.0 <= report.attack_success_rate <= 100.0
    assert len(report.outcomes) == 9


def test_attack_suite_empty_rejected():
    pipe = make_pipeline("basic", 3, seed=0)
    with pytest.raises(ValueError):
        attack_suite(pipe, [], epsilon=0.1)


def test_attack_suite_unlabeled_rejected():
    pipe = make_pipeline("basic", 3, seed=0)
    with pytest.raises(ValueError):
        attack_suite(pipe, [PointCloud(np.zeros((4, 3)))], epsilon=0.1)


def test_attack_suite_deterministic():
    pipe = make_pipeline("leaky", 3, seed=0)
    data = small_testset(per=2)
    a = attack_suite(pipe, data, epsilon=0.1)
    b = attack_suite(pipe, data, epsilon=0.1)
    assert a.clean_accuracy == b.clean_accuracy
    assert a.attacked_accuracy == b.attacked_accuracy
    assert a.mean_perturbation_l2 == b.mean_perturbation_l2


# ---------------------------------------------------------------------------
# report serialization

def test_report_json(tmp_path):
    report = AttackReport(90.0, 45.0, 50.0, 1.25,
                          [{"sample": 0, "label": 1, "clean_pred": 1,
                            "attacked_pred": 0, "perturbation_l2": 1.25}])
    path = tmp_path / "report.json"
    report.to_json(path)
    data = json.loads(path.read_text())
    assert data["clean_accuracy"] == 90.0
    assert data["attack_success_rate"] == 50.0
    assert data["n_samples"] == 1


def test_report_csv(tmp_path):
    report = AttackReport(90.0, 45.0, 50.0, 1.25,
                          [{"sample": 0, "label": 1, "clean_pred": 1,
                            "attacked_pred": 0, "perturbation_l2": 1.25}])
    path = tmp_path / "report.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "sample,label,clean_pred,attacked_pred,perturbation_l2"
    assert lines[1] == "0,1,1,0,1.25"
