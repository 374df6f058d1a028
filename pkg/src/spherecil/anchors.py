"""Frozen per-class attribute anchors on the hypersphere.

Each class gets, per modality, an intrinsic mean on the sphere plus an
orthonormal basis of leading tangent directions obtained from the
eigendecomposition of the tangent covariance. A Euclidean-PCA variant
(no log map, mean-centered covariance) is kept for ablations. Anchors
are immutable once their task is frozen; a content digest guards that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg, sphere
from .errors import (
    AntipodalError,
    DegenerateMeanError,
    DimensionError,
    FrozenTaskError,
    InsufficientDataError,
    MissingClassError,
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    """64-bit FNV-1a content hash."""
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class ClassAnchor:
    """Frozen per-class statistics for both modalities."""

    class_id: int
    mu_vis: np.ndarray
    basis_vis: np.ndarray  # (d, K), orthonormal columns
    eigvals_vis: np.ndarray  # (K,), descending, >= 0
    mu_txt: np.ndarray
    basis_txt: np.ndarray
    eigvals_txt: np.ndarray
    method_tag: str = "PGA"  # "PGA" or "PCA"

    def canonical_bytes(self) -> bytes:
        """Little-endian float64 serialization in fixed field order."""
        parts = [
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (
                self.mu_vis,
                self.basis_vis,
                self.eigvals_vis,
                self.mu_txt,
                self.basis_txt,
                self.eigvals_txt,
            )
        ]
        return b"".join(parts)

    def digest(self) -> int:
        return fnv1a64(self.canonical_bytes())


def tangent_covariance(mu: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Covariance (1/n) sum u_i u_i^T of the log-mapped samples."""
    points = np.asarray(points, dtype=float)
    tangents = []
    for i, x in enumerate(points):
        try:
            tangents.append(sphere.log_map(mu, x))
        except AntipodalError as exc:
            raise AntipodalError(
                f"sample {i} is antipodal to the mean: {exc}", angle=exc.angle
            ) from exc
    u = np.stack(tangents)
    c = (u.T @ u) / len(points)
    return 0.5 * (c + c.T)


def principal_basis(c: np.ndarray, k: int):
    """Top-k eigenvectors of a symmetric PSD matrix, by descending eigenvalue."""
    c = np.asarray(c, dtype=float)
    d = c.shape[0]
    if k > d:
        raise DimensionError(f"requested {k} directions from a {d}x{d} covariance")
    eigvals, eigvecs = linalg.sym_eig(c)
    vals = np.maximum(eigvals[:k], 0.0)
    return eigvecs[:, :k].copy(), vals


def _tangent_orthonormal_basis(mu: np.ndarray, eigvecs: np.ndarray, k: int) -> np.ndarray:
    """Select k columns tangent at mu, orthonormalized in eigen order.

    Eigenvectors with positive eigenvalue are already tangent; columns
    from the null space may contain mu and are projected/replaced. The
    standard basis backfills if the eigenvectors are exhausted.
    """
    d = mu.shape[0]
    if k > d - 1:
        raise DimensionError("tangent space of S^{d-1} has only d-1 dimensions")
    cols = []
    candidates = [eigvecs[:, j] for j in range(eigvecs.shape[1])]
    candidates += [np.eye(d)[:, j] for j in range(d)]
    for cand in candidates:
        if len(cols) == k:
            break
        v = cand - np.dot(mu, cand) * mu
        for w in cols:
            v = v - np.dot(w, v) * w
        n = np.linalg.norm(v)
        if n > 1e-6:
            cols.append(v / n)
    return np.stack(cols, axis=1)


def _mean_of(points: np.ndarray, mean_mode: str) -> np.ndarray:
    try:
        approx = sphere.frechet_mean_approx(points)
    except DegenerateMeanError:
        # balanced set: deterministic fallback, then solve exactly
        return sphere.frechet_mean_iterative(points, init=points[0])
    if mean_mode == "iterative":
        return sphere.frechet_mean_iterative(points, init=approx)
    return approx


def build_class_anchor(
    vis_points: np.ndarray,
    txt_points: np.ndarray,
    class_id: int,
    k: int,
    mean_mode: str = "approx",
) -> ClassAnchor:
    """Geodesic anchor: intrinsic mean + top-k tangent covariance basis."""
    vis_points = np.asarray(vis_points, dtype=float)
    txt_points = np.asarray(txt_points, dtype=float)
    if len(vis_points) < 2 or len(txt_points) < 2:
        raise InsufficientDataError(
            f"class {class_id}: need at least 2 samples per modality"
        )
    out = {}
    for name, pts in (("vis", vis_points), ("txt", txt_points)):
        mu = _mean_of(pts, mean_mode)
        cov = tangent_covariance(mu, pts)
        if k > cov.shape[0]:
            raise DimensionError(f"requested {k} directions in dimension {cov.shape[0]}")
        eigvals_full, eigvecs = linalg.sym_eig(cov)
        eigvals = np.maximum(eigvals_full[:k], 0.0)
        basis = _tangent_orthonormal_basis(mu, eigvecs, k)
        out[name] = (mu, basis, eigvals)
    return ClassAnchor(
        class_id=class_id,
        mu_vis=out["vis"][0],
        basis_vis=out["vis"][1],
        eigvals_vis=out["vis"][2],
        mu_txt=out["txt"][0],
        basis_txt=out["txt"][1],
        eigvals_txt=out["txt"][2],
        method_tag="PGA",
    )


def build_class_anchor_pca(
    vis_points: np.ndarray,
    txt_points: np.ndarray,
    class_id: int,
    k: int,
    mean_mode: str = "approx",
) -> ClassAnchor:
    """Euclidean baseline: mean-centered covariance, no log map.

    The stored mean is the normalized arithmetic mean (a unit vector is
    needed downstream); the covariance is centered at the raw mean, so
    the basis is generally not tangent to the sphere.
    """
    vis_points = np.asarray(vis_points, dtype=float)
    txt_points = np.asarray(txt_points, dtype=float)
    if len(vis_points) < 2 or len(txt_points) < 2:
        raise InsufficientDataError(
            f"class {class_id}: need at least 2 samples per modality"
        )
    out = {}
    for name, pts in (("vis", vis_points), ("txt", txt_points)):
        raw_mean = pts.mean(axis=0)
        centered = pts - raw_mean
        cov = (centered.T @ centered) / len(pts)
        cov = 0.5 * (cov + cov.T)
        basis, eigvals = principal_basis(cov, k)
        mu = sphere.unitize(raw_mean) if np.linalg.norm(raw_mean) > 1e-9 else pts[0]
        out[name] = (mu, basis, eigvals)
    return ClassAnchor(
        class_id=class_id,
        mu_vis=out["vis"][0],
        basis_vis=out["vis"][1],
        eigvals_vis=out["vis"][2],
        mu_txt=out["txt"][0],
        basis_txt=out["txt"][1],
        eigvals_txt=out["txt"][2],
        method_tag="PCA",
    )


@dataclass
class AnchorStore:
    """Anchors accumulated over the task stream, immutable once frozen."""

    anchors: dict[int, ClassAnchor] = field(default_factory=dict)
    task_index: dict[int, list[int]] = field(default_factory=dict)
    freeze_digests: dict[int, int] = field(default_factory=dict)

    def _frozen_classes(self) -> set[int]:
        frozen = set()
        for task_id in self.freeze_digests:
            frozen.update(self.task_index.get(task_id, []))
        return frozen

    def add(self, task_id: int, anchor: ClassAnchor) -> None:
        if anchor.class_id in self._frozen_classes():
            raise FrozenTaskError(
                f"class {anchor.class_id} belongs to a frozen task and cannot be rewritten"
            )
        for other_task, classes in self.task_index.items():
            if other_task != task_id and anchor.class_id in classes:
                raise FrozenTaskError(
                    f"class {anchor.class_id} already registered under task {other_task}"
                )
        self.anchors[anchor.class_id] = anchor
        self.task_index.setdefault(task_id, [])
        if anchor.class_id not in self.task_index[task_id]:
            self.task_index[task_id].append(anchor.class_id)

    def task_digest(self, task_id: int) -> int:
        if task_id not in self.task_index:
            raise MissingClassError(f"no anchors registered for task {task_id}")
        h = _FNV_OFFSET
        for cid in sorted(self.task_index[task_id]):
            if cid not in self.anchors:
                raise MissingClassError(f"task {task_id} is missing class {cid}")
            h = fnv1a64(self.anchors[cid].canonical_bytes(), h)
        return h

    def freeze_task(self, task_id: int) -> int:
        digest = self.task_digest(task_id)
        prior = self.freeze_digests.get(task_id)
        if prior is not None and prior != digest:
            raise FrozenTaskError(
                f"task {task_id} content changed since it was frozen"
            )
        self.freeze_digests[task_id] = digest
        return digest
