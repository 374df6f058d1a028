"""Frozen toy encoders and input-space perturbations.

The encoders are fixed random linear projections followed by
normalization, standing in for frozen pretrained backbones whose
embedding space is shared across modalities. Occlusion and view
augmentation are 1-D vector analogues of image-space block erasing and
photometric transforms: all that downstream losses require is that a
contiguous informative region gets corrupted (occlusion) and that views
carry semantics-preserving nuisance variation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .anchors import fnv1a64
from .errors import DegeneracyError, DimensionError
from .linalg import SeededRng


@dataclass(frozen=True)
class RawSample:
    features: np.ndarray  # raw input space, length d_in
    label: int
    task: int
    caption: np.ndarray | None = None  # optional caption content, length d_in


@dataclass(frozen=True)
class FrozenEncoder:
    projection: np.ndarray  # (d, d_in), fixed at creation
    modality: str  # "visual" | "textual"

    @classmethod
    def create(cls, rng: SeededRng, d: int, d_in: int, modality: str) -> "FrozenEncoder":
        entries = rng.normal(d * d_in) / np.sqrt(d_in)
        return cls(projection=entries.reshape(d, d_in), modality=modality)

    def encode(self, x: np.ndarray) -> np.ndarray:
        z = self.projection @ np.asarray(x, dtype=float)
        n = np.linalg.norm(z)
        if n < 1e-12:
            raise DegeneracyError("input projects to the zero vector")
        return z / n

    def encode_batch(self, xs: np.ndarray) -> np.ndarray:
        z = xs @ self.projection.T
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise DegeneracyError("some input projects to the zero vector")
        return z / norms

    def digest(self) -> int:
        return fnv1a64(np.ascontiguousarray(self.projection, dtype="<f8").tobytes())


@dataclass(frozen=True)
class PerturbationSpec:
    rho_min: float = 0.02
    rho_max: float = 0.4
    eta_min: float = 0.3  # aspect bounds kept for config parity; unused in 1-D
    eta_max: float = 3.3
    m_views: int = 3
    jitter_sigma: float = 0.05
    flip_prob: float = 0.5
    gray_prob: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.rho_min < self.rho_max < 1.0):
            raise DimensionError("need 0 < rho_min < rho_max < 1")
        if not (0.0 < self.eta_min < self.eta_max):
            raise DimensionError("need 0 < eta_min < eta_max")
        if self.m_views < 1:
            raise DimensionError("need at least one view")


def encode_visual(enc: FrozenEncoder, sample: RawSample) -> np.ndarray:
    if enc.modality != "visual":
        raise DimensionError("encode_visual requires a visual encoder")
    return enc.encode(sample.features)


def encode_textual_fused(
    enc: FrozenEncoder, class_prompt: np.ndarray, caption: np.ndarray | None = None
) -> np.ndarray:
    """Normalize(g_t(prompt) + g_t(caption)); prompt-only when no caption.

    Test inputs carry no caption, so inference falls back to the plain
    prompt embedding.
    """
    if enc.modality != "textual":
        raise DimensionError("encode_textual_fused requires a textual encoder")
    z = enc.encode(class_prompt)
    if caption is not None:
        z = z + enc.encode(caption)
    n = np.linalg.norm(z)
    if n < 1e-12:
        raise DegeneracyError("fused textual embedding is the zero vector")
    return z / n


def occlude(sample: RawSample, spec: PerturbationSpec, rng: SeededRng) -> RawSample:
    """Replace one contiguous block of round(rho * d_in) coordinates with noise.

    1-D analogue of block erasing: the aspect ratio is meaningless for
    vectors, so only the area fraction rho survives. Coordinates outside
    the block are bit-identical to the input.
    """
    d_in = sample.features.shape[0]
    if d_in < 4:
        raise DimensionError("occlusion needs at least 4 coordinates")
    rho = rng.uniform_in(spec.rho_min, spec.rho_max)
    block = int(round(rho * d_in))
    block = max(1, min(block, d_in - 1))
    start = rng.randint(d_in - block + 1)
    out = sample.features.copy()
    out[start : start + block] = rng.normal(block)
    return replace(sample, features=out)


def _augment_once(x: np.ndarray, spec: PerturbationSpec, rng: SeededRng) -> np.ndarray:
    d_in = x.shape[0]
    out = x + spec.jitter_sigma * rng.normal(d_in)
    if rng.uniform(1)[0] <= spec.flip_prob:
        length = 1 + rng.randint(max(1, d_in // 2))
        start = rng.randint(d_in - length + 1)
        out[start : start + length] *= -1.0
    if rng.uniform(1)[0] <= spec.gray_prob:
        length = 1 + rng.randint(max(1, d_in // 2))
        start = rng.randint(d_in - length + 1)
        out[start : start + length] = out[start : start + length].mean()
    return out


def augment_views(sample: RawSample, spec: PerturbationSpec, rng: SeededRng) -> list[RawSample]:
    """M independent views: coordinate jitter, random block sign flip,
    random block mean-collapse. Labels and dimensions are preserved."""
    views = []
    for _ in range(spec.m_views):
        views.append(replace(sample, features=_augment_once(sample.features, spec, rng)))
    return views
