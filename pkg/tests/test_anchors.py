import numpy as np
import pytest

from spherecil import anchors, sphere
from spherecil.errors import (
    DimensionError,
    FrozenTaskError,
    InsufficientDataError,
    MissingClassError,
)
from spherecil.linalg import SeededRng


def _unit(rng, d):
    v = rng.normal(d)
    return v / np.linalg.norm(v)


def _cluster(rng, d, n, spread=0.2, center=None):
    if center is None:
        center = _unit(rng, d)
    pts = []
    for _ in range(n):
        u = rng.normal(d)
        u -= np.dot(center, u) * center
        u *= spread / np.sqrt(d - 1)
        pts.append(sphere.exp_map(center, u))
    return np.stack(pts)


def _make_anchor(seed=0, d=8, k=3, n=20):
    rng = SeededRng(seed)
    vis = _cluster(rng, d, n)
    txt = _cluster(rng, d, n)
    return anchors.build_class_anchor(vis, txt, class_id=0, k=k)


class TestFnv:
    def test_known_vectors(self):
        # standard FNV-1a 64 reference values
        assert anchors.fnv1a64(b"") == 0xCBF29CE484222325
        assert anchors.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert anchors.fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_chaining_differs_from_concat_start(self):
        h1 = anchors.fnv1a64(b"world", anchors.fnv1a64(b"hello"))
        assert h1 == anchors.fnv1a64(b"helloworld")


class TestTangentCovariance:
    def test_psd_and_symmetric(self):
        rng = SeededRng(1)
        pts = _cluster(rng, 10, 30)
        mu = sphere.frechet_mean_approx(pts)
        cov = anchors.tangent_covariance(mu, pts)
        assert np.abs(cov - cov.T).max() == 0.0
        vals = np.linalg.eigvalsh(cov)
        assert vals.min() > -1e-14

    def test_mu_in_null_space(self):
        rng = SeededRng(2)
        pts = _cluster(rng, 8, 25)
        mu = sphere.frechet_mean_approx(pts)
        cov = anchors.tangent_covariance(mu, pts)
        assert np.abs(cov @ mu).max() < 1e-12


class TestPrincipalBasis:
    def test_matches_dense_oracle(self):
        rng = SeededRng(3)
        pts = _cluster(rng, 12, 40)
        mu = sphere.frechet_mean_approx(pts)
        cov = anchors.tangent_covariance(mu, pts)
        basis, vals = anchors.principal_basis(cov, 4)
        ref_vals, ref_vecs = np.linalg.eigh(cov)
        ref_vals = ref_vals[::-1][:4]
        assert np.allclose(vals, np.maximum(ref_vals, 0.0), rtol=1e-8, atol=1e-12)
        # compare subspaces through principal angles
        ref_basis = ref_vecs[:, ::-1][:, :4]
        s = np.linalg.svd(basis.T @ ref_basis, compute_uv=False)
        assert np.abs(np.arccos(np.clip(s, -1, 1))).max() < 1e-6

    def test_k_too_large(self):
        with pytest.raises(DimensionError):
            anchors.principal_basis(np.eye(3), 4)


class TestClassAnchor:
    def test_basis_orthonormal_and_tangent(self):
        a = _make_anchor()
        for mu, basis in ((a.mu_vis, a.basis_vis), (a.mu_txt, a.basis_txt)):
            gram = basis.T @ basis
            assert np.abs(gram - np.eye(basis.shape[1])).max() < 1e-8
            assert np.abs(mu @ basis).max() < 1e-8

    def test_eigvals_descending_nonnegative(self):
        a = _make_anchor()
        assert np.all(a.eigvals_vis >= 0)
        assert np.all(np.diff(a.eigvals_vis) <= 1e-15)

    def test_rotation_equivariance(self):
        rng = SeededRng(4)
        d, k = 8, 3
        vis = _cluster(rng, d, 25)
        txt = _cluster(rng, d, 25)
        q, _ = np.linalg.qr(rng.normal(d * d).reshape(d, d))
        a = anchors.build_class_anchor(vis, txt, 0, k)
        b = anchors.build_class_anchor(vis @ q.T, txt @ q.T, 0, k)
        assert np.abs(q @ a.mu_vis - b.mu_vis).max() < 1e-8
        assert np.allclose(a.eigvals_vis, b.eigvals_vis, atol=1e-10)
        # rotated subspace equality (columns may differ by sign/rotation)
        s = np.linalg.svd((q @ a.basis_vis).T @ b.basis_vis, compute_uv=False)
        assert np.abs(s - 1.0).max() < 1e-8

    def test_digest_stable_and_content_sensitive(self):
        a = _make_anchor(seed=5)
        assert a.digest() == _make_anchor(seed=5).digest()
        assert a.digest() != _make_anchor(seed=6).digest()

    def test_requires_two_samples(self):
        p = np.zeros((1, 4))
        p[0, 0] = 1.0
        with pytest.raises(InsufficientDataError):
            anchors.build_class_anchor(p, p, 0, 2)

    def test_pca_variant_tagged_and_not_tangent(self):
        rng = SeededRng(7)
        vis = _cluster(rng, 8, 25)
        txt = _cluster(rng, 8, 25)
        a = anchors.build_class_anchor_pca(vis, txt, 0, 3)
        assert a.method_tag == "PCA"
        gram = a.basis_vis.T @ a.basis_vis
        assert np.abs(gram - np.eye(3)).max() < 1e-8


class TestAnchorStore:
    def test_freeze_blocks_rewrites(self):
        store = anchors.AnchorStore()
        a = _make_anchor(seed=8)
        store.add(0, a)
        store.freeze_task(0)
        with pytest.raises(FrozenTaskError):
            store.add(0, a)

    def test_class_cannot_move_tasks(self):
        store = anchors.AnchorStore()
        a = _make_anchor(seed=9)
        store.add(0, a)
        with pytest.raises(FrozenTaskError):
            store.add(1, a)

    def test_task_digest_stable_across_later_stages(self):
        store = anchors.AnchorStore()
        store.add(0, _make_anchor(seed=10))
        d0 = store.freeze_task(0)
        b = _make_anchor(seed=11)
        b2 = anchors.ClassAnchor(
            class_id=1,
            mu_vis=b.mu_vis, basis_vis=b.basis_vis, eigvals_vis=b.eigvals_vis,
            mu_txt=b.mu_txt, basis_txt=b.basis_txt, eigvals_txt=b.eigvals_txt,
        )
        store.add(1, b2)
        store.freeze_task(1)
        assert store.task_digest(0) == d0

    def test_missing_task_digest(self):
        with pytest.raises(MissingClassError):
            anchors.AnchorStore().task_digest(3)
