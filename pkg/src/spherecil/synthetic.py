"""Synthetic task streams: well-separated class clusters on the sphere.

Class means are rejection-sampled on S^{d_in-1} subject to a pairwise
angle floor; samples follow geodesic Gaussian spread around their mean.
Captions are the sample features plus one small run-level offset, so
the two modalities are strongly correlated, as they would be for real
paired embeddings.
"""

from __future__ import annotations

import numpy as np

from . import sphere
from .config import Config
from .encoders import RawSample
from .errors import GeometryError
from .linalg import SeededRng
from .pipeline import TaskData, TaskStream

_MAX_ATTEMPTS = 100_000
_CAPTION_OFFSET_NORM = 0.05


def _sample_means(rng: SeededRng, n: int, d_in: int, min_angle: float) -> np.ndarray:
    means: list[np.ndarray] = []
    for _ in range(_MAX_ATTEMPTS):
        if len(means) == n:
            break
        cand = sphere.unitize(rng.normal(d_in))
        if all(sphere.geodesic_distance(cand, m) >= min_angle for m in means):
            means.append(cand)
    if len(means) < n:
        raise GeometryError(
            f"placed only {len(means)}/{n} class means with pairwise angle >= "
            f"{min_angle} after {_MAX_ATTEMPTS} attempts; increase d_in or "
            "decrease min_class_angle"
        )
    return np.stack(means)


def _tangent_noise(rng: SeededRng, mean: np.ndarray, sigma: float) -> np.ndarray:
    """Tangent Gaussian with RMS geodesic radius sigma."""
    d_in = mean.shape[0]
    g = rng.normal(d_in)
    g -= np.dot(mean, g) * mean
    return g * (sigma / np.sqrt(d_in - 1))


def gen_synthetic(config: Config, rng: SeededRng | None = None) -> tuple[TaskStream, TaskStream]:
    """Deterministic (train, test) streams from (config, seed); 80/20 split."""
    if rng is None:
        rng = SeededRng(config.seed).spawn(41)
    n_classes = config.B * config.classes_per_task
    means = _sample_means(rng.spawn(1), n_classes, config.d_in, config.min_class_angle)
    offset = _CAPTION_OFFSET_NORM * sphere.unitize(rng.spawn(2).normal(config.d_in))

    n_test = max(1, config.samples_per_class // 5)
    train_tasks = []
    test_tasks = []
    for b in range(config.B):
        class_ids = list(range(b * config.classes_per_task, (b + 1) * config.classes_per_task))
        train_samples: list[RawSample] = []
        test_samples: list[RawSample] = []
        for c in class_ids:
            crng = rng.spawn(3, c)
            pts = []
            for _ in range(config.samples_per_class):
                u = _tangent_noise(crng, means[c], config.spread_sigma)
                x = sphere.exp_map(means[c], u)
                pts.append(RawSample(features=x, label=c, task=b, caption=x + offset))
            order = crng.shuffled(config.samples_per_class)
            for j, idx in enumerate(order):
                (test_samples if j < n_test else train_samples).append(pts[idx])
        train_tasks.append(TaskData(b, class_ids, train_samples))
        test_tasks.append(TaskData(b, class_ids, test_samples))
    descriptor = f"B-{config.B} Inc-{config.classes_per_task}"
    return TaskStream(train_tasks, descriptor), TaskStream(test_tasks, descriptor)
