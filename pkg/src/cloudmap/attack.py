"""FGSM attack harness. The interesting part is not the sign step but the
gradient topology: quantized mappers return a Blocked marker and the
attack degenerates to a no-op, while mappers that write coordinates into
intensities expose a differentiable route from the loss back to every
point, chained through the recorded leak_map links.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .net import loss_and_grad, predict
from .pipeline import PIPELINE_NAMES, Pipeline, make_pipeline  # noqa: F401
from .project import GradPath, MappedImage, cloud_key


class _BlockedMarker:
    """Singleton returned where a gradient would be if one existed."""

    def __repr__(self):
        return "BLOCKED_GRADIENT"

    def __bool__(self):
        return False


BLOCKED_GRADIENT = _BlockedMarker()


def input_point_gradient(pipeline: Pipeline, cloud: PointCloud, label: int,
                         image: MappedImage | None = None):
    """Gradient of the classification loss wrt every point coordinate,
    or BLOCKED_GRADIENT when the mapper quantizes coordinates away.

    Pixel and cell assignments are held fixed: only the intensity values
    are differentiated, and each recorded link contributes with the 1/2
    factor of the (t + 1) / 2 encode."""
    if image is None:
        image = pipeline.map_image(cloud)
    if image.grad_path is GradPath.BLOCKED:
        return BLOCKED_GRADIENT
    if image.source_key != cloud_key(cloud):
        raise ValueError("stale leak_map: cloud changed since it was mapped")
    if pipeline.adain_params is not None:
        raise ValueError("leak gradient with adain modulation is not supported")
    x = pipeline.net_input_from_image(image)
    _, _, d_input = loss_and_grad(pipeline.net, x, label,
                                  downsample=pipeline.downsample)
    grad = np.zeros_like(cloud.points)
    links = image.leak_map
    np.add.at(grad, (links[:, 2], links[:, 3]),
              0.5 * pipeline.gain * d_input[links[:, 0], links[:, 1], links[:, 3]])
    return grad


@dataclass
class FGSMResult:
    cloud: PointCloud
    blocked: bool
    grad_norm: float  # L2 of the final point gradient, 0 when blocked


def fgsm(pipeline: Pipeline, cloud: PointCloud, label: int,
         epsilon: float = 0.1, iterations: int = 1) -> FGSMResult:
    """x' = x + epsilon * sign(grad), one step by default. A blocked
    pipeline returns the input unchanged with the blocked flag set.
    iterations > 1 repeats the sign step, remapping in between; the extra
    steps are exploratory, not part of the standard attack."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    current = cloud
    for _ in range(iterations):
        grad = input_point_gradient(pipeline, current, label)
        if grad is BLOCKED_GRADIENT:
            return FGSMResult(cloud, True, 0.0)
        if epsilon != 0.0:
            current = current.with_points(current.points + epsilon * np.sign(grad))
    return FGSMResult(current, False, float(np.linalg.norm(grad)))


def asr(clean_accuracy: float, attacked_accuracy: float) -> float:
    """(clean - attacked) / clean in percent; 0 when clean is 0. Clamped
    at 0 so an attack that helps the model does not report negative."""
    if clean_accuracy <= 0.0:
        return 0.0
    return max(0.0, (clean_accuracy - attacked_accuracy) / clean_accuracy * 100.0)


@dataclass
class AttackReport:
    clean_accuracy: float
    attacked_accuracy: float
    attack_success_rate: float
    mean_perturbation_l2: float
    outcomes: list  # per-sample dicts

    def to_json(self, path) -> None:
        payload = {
            "clean_accuracy": self.clean_accuracy,
            "attacked_accuracy": self.attacked_accuracy,
            "attack_success_rate": self.attack_success_rate,
            "mean_perturbation_l2": self.mean_perturbation_l2,
            "n_samples": len(self.outcomes),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "label", "clean_pred", "attacked_pred",
                             "perturbation_l2"])
            for o in self.outcomes:
                writer.writerow([o["sample"], o["label"], o["clean_pred"],
                                 o["attacked_pred"], f"{o['perturbation_l2']:.17g}"])


def attack_suite(pipeline: Pipeline, testset: list,
                 epsilon: float = 0.1) -> AttackReport:
    """Clean and attacked accuracy over the same samples. The attacked
    cloud goes through the full mapping again (same mapper seed), so a
    blocked pipeline reproduces its clean predictions bit for bit."""
    if not testset:
        raise ValueError("empty testset")
    outcomes = []
    clean_hits = 0
    attacked_hits = 0
    l2s = []
    for i, cloud in enumerate(testset):
        if cloud.label is None:
            raise ValueError(f"testset cloud {i} missing label")
        clean_pred = predict(pipeline.net, pipeline, cloud)
        result = fgsm(pipeline, cloud, cloud.label, epsilon=epsilon)
        attacked_pred = predict(pipeline.net, pipeline, result.cloud)
        l2 = float(np.linalg.norm(result.cloud.points - cloud.points))
        clean_hits += clean_pred == cloud.label
        attacked_hits += attacked_pred == cloud.label
        l2s.append(l2)
        outcomes.append({"sample": i, "label": cloud.label,
                         "clean_pred": clean_pred, "attacked_pred": attacked_pred,
                         "perturbation_l2": l2})
    n = len(testset)
    clean = 100.0 * clean_hits / n
    attacked = 100.0 * attacked_hits / n
    return AttackReport(clean, attacked, asr(clean, attacked),
                        float(np.mean(l2s)), outcomes)
