"""Dense symmetric eigensolver and deterministic randomness.

The eigensolver is a cyclic Jacobi iteration: matrices here are small
(a few hundred at most), so robustness and a deterministic sign
convention matter more than speed.

The PRNG is splitmix64 used as a counter-based generator: the state
advances by a fixed odd increment and each output is a bijective mix of
the state, so identical seeds give identical streams on any platform.
Gaussians come from Box-Muller on the 53-bit uniforms.
"""

from __future__ import annotations

import numpy as np

from .errors import AsymmetryError, ConvergenceError, DimensionError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MASK = 0xFFFFFFFFFFFFFFFF


def _mix(z):
    """splitmix64 output function (operates on uint64 scalars/arrays)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


class SeededRng:
    """Deterministic 64-bit generator; single-owner, forked via spawn()."""

    def __init__(self, seed: int):
        self._state = np.uint64(seed & _MASK)

    def raw(self, n: int) -> np.ndarray:
        """Next n raw uint64 outputs."""
        with np.errstate(over="ignore"):
            offsets = np.arange(1, n + 1, dtype=np.uint64) * _GAMMA
            out = _mix(self._state + offsets)
            self._state = self._state + np.uint64(n) * _GAMMA
        return out

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms in (0, 1]."""
        return ((self.raw(n) >> np.uint64(11)) + np.uint64(1)) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * float(self.uniform(1)[0])

    def normal(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals (Box-Muller)."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n]

    def randint(self, bound: int) -> int:
        """Uniform integer in [0, bound) via 128-bit multiply-shift."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (int(self.raw(1)[0]) * bound) >> 64

    def shuffled(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self, *keys: int) -> "SeededRng":
        """Derive an independent child generator from integer keys.

        Does not consume from this generator's stream.
        """
        with np.errstate(over="ignore"):
            h = self._state
            for k in keys:
                h = _mix(h ^ (np.uint64(k & _MASK) + _GAMMA))
        return SeededRng(int(h))


def gaussian_vec(rng: SeededRng, d: int) -> np.ndarray:
    """Vector of d i.i.d. standard normal entries."""
    if d < 1:
        raise DimensionError("gaussian_vec requires d >= 1")
    return rng.normal(d)


def sym_eig(a: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted
    descending and orthonormal eigenvector columns. Sign convention:
    the largest-magnitude entry of each eigenvector is positive (first
    such index on ties), so results are reproducible across platforms.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"sym_eig needs a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    if float(np.max(np.abs(a - a.T), initial=0.0)) > 1e-10 * scale:
        raise AsymmetryError("input matrix is not symmetric within 1e-10 relative")

    n = a.shape[0]
    w = 0.5 * (a + a.T)
    v = np.eye(n)
    norm = float(np.linalg.norm(w))

    def off_norm(m):
        # direct sum over off-diagonal entries: the algebraic shortcut
        # |M|^2 - |diag|^2 cancels catastrophically near convergence
        return float(np.linalg.norm(m - np.diag(np.diag(m))))

    if n > 1 and norm > 0.0:
        converged = False
        for _ in range(max_sweeps):
            if off_norm(w) <= tol * norm:
                converged = True
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = w[p, q]
                    if abs(apq) <= 1e-300:
                        continue
                    diff = w[q, q] - w[p, p]
                    if abs(apq) < 1e-17 * abs(diff):
                        w[p, q] = w[q, p] = 0.0
                        continue
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta == 0.0:
                        t = 1.0
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    # two-sided rotation in the (p, q) plane
                    wp = w[:, p].copy()
                    wq = w[:, q].copy()
                    w[:, p] = c * wp - s * wq
                    w[:, q] = s * wp + c * wq
                    wp = w[p, :].copy()
                    wq = w[q, :].copy()
                    w[p, :] = c * wp - s * wq
                    w[q, :] = s * wp + c * wq
                    w[p, q] = w[q, p] = 0.0
                    vp = v[:, p].copy()
                    vq = v[:, q].copy()
                    v[:, p] = c * vp - s * vq
                    v[:, q] = s * vp + c * vq
        if not converged:
            off = off_norm(w)
            if off > tol * norm:
                raise ConvergenceError(
                    f"Jacobi failed to converge in {max_sweeps} sweeps", residual=off
                )

    eigvals = np.diag(w).copy()
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    v = v[:, order]
    for j in range(n):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0.0:
            v[:, j] = -v[:, j]
    return eigvals, v
