"""Self-contained numerical verification suites.

Each suite checks one analytic contract against an independent route:
the Jacobi eigensolver against the LAPACK dense solver, the Sinkhorn
solver against the Dirac-source closed form, the intrinsic mean against
random perturbations of its objective, analytic loss gradients against
central finite differences, and the transport-score Lipschitz bound
against random empirical trials. The CLI `verify` subcommand runs all
of them and fails loudly on any violation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import experts, routing, sphere
from .linalg import SeededRng, sym_eig


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# eigensolver vs dense oracle


def verify_eig(trials: int = 50, rng: SeededRng | None = None) -> SuiteResult:
    rng = rng or SeededRng(7)
    worst = 0.0
    for t in range(trials):
        d = 2 + rng.randint(31)
        m = rng.normal(d * d).reshape(d, d)
        a = 0.5 * (m + m.T)
        vals, vecs = sym_eig(a)
        ref = np.linalg.eigh(a)[0][::-1]
        scale = max(1.0, float(np.abs(ref).max()))
        worst = max(worst, float(np.abs(vals - ref).max()) / scale)
        worst = max(worst, float(np.abs(a @ vecs - vecs * vals).max()) / scale)
        worst = max(worst, float(np.abs(vecs.T @ vecs - np.eye(d)).max()))
    ok = worst < 1e-8
    return SuiteResult("eig_oracle", ok, f"max deviation {worst:.3e} over {trials} matrices")


# ---------------------------------------------------------------------------
# Sinkhorn vs Dirac closed form


def dirac_closed_form(query: np.ndarray, measure: routing.DiscreteMeasure, epsilon: float) -> float:
    """With a single source atom the plan is forced to the target weights."""
    c = routing.cost_matrix(routing.DiscreteMeasure.dirac(query), measure)[0]
    w = measure.weights
    pos = w > 0
    entropy = float(-(w[pos] * np.log(w[pos])).sum())
    return float(w @ c) - epsilon * entropy


def verify_dirac_sinkhorn(
    trials: int = 200, rng: SeededRng | None = None, tol: float = 1e-8
) -> SuiteResult:
    rng = rng or SeededRng(11)
    params = routing.OtParams()
    worst = 0.0
    for t in range(trials):
        d = 2 + rng.randint(15)
        n = 1 + rng.randint(12)
        atoms = rng.normal(n * d).reshape(n, d)
        atoms /= np.linalg.norm(atoms, axis=1, keepdims=True)
        weights = rng.uniform(n)
        nu = routing.DiscreteMeasure(atoms, weights)
        q = rng.normal(d)
        q /= np.linalg.norm(q)
        res = routing.sinkhorn(routing.DiscreteMeasure.dirac(q), nu, params)
        worst = max(worst, abs(res.cost - dirac_closed_form(q, nu, params.epsilon)))
        worst = max(worst, res.marginal_error)
    ok = worst < tol
    return SuiteResult("dirac_sinkhorn", ok, f"max deviation {worst:.3e} over {trials} instances")


# ---------------------------------------------------------------------------
# intrinsic mean optimality


def frechet_objective(mu: np.ndarray, points: np.ndarray) -> float:
    return float(sum(sphere.geodesic_distance(mu, x) ** 2 for x in points))


def verify_frechet(trials: int = 20, rng: SeededRng | None = None) -> SuiteResult:
    rng = rng or SeededRng(13)
    for t in range(trials):
        d = 3 + rng.randint(30)
        center = rng.normal(d)
        center /= np.linalg.norm(center)
        pts = []
        for _ in range(12):
            u = rng.normal(d)
            u -= np.dot(center, u) * center
            u *= 0.3 / np.sqrt(d - 1)
            pts.append(sphere.exp_map(center, u))
        pts = np.stack(pts)
        mu = sphere.frechet_mean_iterative(pts)
        base = frechet_objective(mu, pts)
        for _ in range(50):
            delta = rng.normal(d)
            delta -= np.dot(mu, delta) * mu
            delta *= rng.uniform_in(1e-3, 0.3) / np.linalg.norm(delta)
            cand = sphere.exp_map(mu, delta)
            if frechet_objective(cand, pts) < base - 1e-12:
                return SuiteResult(
                    "frechet_optimality", False,
                    f"perturbation beat the mean on instance {t}",
                )
    return SuiteResult("frechet_optimality", True, f"{trials} instances, no better perturbation")


# ---------------------------------------------------------------------------
# finite-difference gradient checks


def _expert_arrays(expert):
    return (expert.s_vis, expert.r_vis, expert.s_txt, expert.r_txt)


def fd_grads(loss_fn, expert, h: float = 1e-5) -> experts.ExpertGrads:
    """Central finite differences over every expert parameter."""
    d = expert.r_vis.shape[0]
    k = expert.s_vis.shape[0]
    g = experts.ExpertGrads.zeros(d, k)
    for arr, out in zip(_expert_arrays(expert), _expert_arrays(g)):
        flat = arr.ravel()
        gout = out.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(expert)
            flat[i] = orig - h
            down = loss_fn(expert)
            flat[i] = orig
            gout[i] = (up - down) / (2.0 * h)
    return g


def grad_rel_error(analytic: experts.ExpertGrads, numeric: experts.ExpertGrads) -> float:
    num = 0.0
    den = 0.0
    for a, b in zip(_expert_arrays(analytic), _expert_arrays(numeric)):
        num += float(np.sum((a - b) ** 2))
        den += float(np.sum(b**2))
    return np.sqrt(num) / max(np.sqrt(den), 1e-12)


def _unit(rng: SeededRng, d: int) -> np.ndarray:
    v = rng.normal(d)
    return v / np.linalg.norm(v)


def _random_expert(rng: SeededRng, d: int, k: int):
    e = experts.TaskExpert.identity_init(0, d, k)
    e.s_vis += 0.5 * rng.normal(k * d).reshape(k, d)
    e.r_vis += 0.2 * rng.normal(d * d).reshape(d, d)
    e.s_txt += 0.5 * rng.normal(k * d).reshape(k, d)
    e.r_txt += 0.2 * rng.normal(d * d).reshape(d, d)
    return e


def _random_basis(rng: SeededRng, d: int, k: int) -> np.ndarray:
    m = rng.normal(d * k).reshape(d, k)
    q, _ = np.linalg.qr(m)
    return q[:, :k]


def check_intervention_gradient(rng: SeededRng, d: int, k: int, h: float = 1e-5) -> float:
    """Relative FD error for one hinge instance away from the kink."""
    for _ in range(200):
        e = _random_expert(rng, d, k)
        zv, zt = _unit(rng, d), _unit(rng, d)
        zvo, zto = _unit(rng, d), _unit(rng, d)
        delta = e.s_vis @ (zvo - zv) + e.s_txt @ (zto - zt)
        # stay away from the hinge kink so FD is well-defined
        if np.abs(delta).min() > 1e-3 and np.any(delta > 0):
            break
    loss, g = experts.intervention_grads(e, zv, zt, zvo, zto)
    fd = fd_grads(lambda ex: experts.intervention_grads(ex, zv, zt, zvo, zto)[0], e, h)
    return grad_rel_error(g, fd)


def check_compression_gradient(rng: SeededRng, d: int, k: int, m: int = 3, h: float = 1e-5) -> float:
    for _ in range(200):
        e = _random_expert(rng, d, k)
        vv = np.stack([_unit(rng, d) for _ in range(m)])
        vt = np.stack([_unit(rng, d) for _ in range(m)])
        dev_v = vv @ e.s_vis.T - (vv @ e.s_vis.T).mean(axis=0)
        dev_t = vt @ e.s_txt.T - (vt @ e.s_txt.T).mean(axis=0)
        if min(np.abs(dev_v).min(), np.abs(dev_t).min()) > 1e-3:
            break
    _, g = experts.compression_grads(e, vv, vt)
    fd = fd_grads(lambda ex: experts.compression_grads(ex, vv, vt)[0], e, h)
    return grad_rel_error(g, fd)


def check_contrastive_gradient(
    rng: SeededRng, d: int, k: int, n: int = 4, n_classes: int = 3, h: float = 1e-5
) -> float:
    e = _random_expert(rng, d, k)
    z = np.stack([_unit(rng, d) for _ in range(n)])
    bases = [_random_basis(rng, d, k) for _ in range(n)]
    labels = np.array([rng.randint(n_classes) for _ in range(n)])
    targets = np.stack([_unit(rng, d) for _ in range(n_classes)])
    tbases = [_random_basis(rng, d, k) for _ in range(n_classes)]

    def loss_fn(ex):
        return experts.contrastive_grads(ex, z, bases, labels, targets, tbases, 0.07)[0]

    _, g = experts.contrastive_grads(e, z, bases, labels, targets, tbases, 0.07)
    fd = fd_grads(loss_fn, e, h)
    return grad_rel_error(g, fd)


def verify_gradients(
    instances: int = 10, rng: SeededRng | None = None, tol: float = 1e-4
) -> SuiteResult:
    rng = rng or SeededRng(17)
    worst = 0.0
    for i in range(instances):
        d = 4 + rng.randint(5)  # d <= 8
        k = 2 + rng.randint(2)  # K <= 3
        worst = max(worst, check_intervention_gradient(rng.spawn(1, i), d, k))
        worst = max(worst, check_compression_gradient(rng.spawn(2, i), d, k))
        worst = max(worst, check_contrastive_gradient(rng.spawn(3, i), d, k))
    ok = worst < tol
    return SuiteResult("gradient_fd", ok, f"max relative error {worst:.3e}")


# ---------------------------------------------------------------------------
# Lipschitz battery


def verify_lipschitz(
    trials: int = 500,
    d: int = 32,
    rng: SeededRng | None = None,
    step_sizes: tuple[float, ...] = (1e-3, 1e-2),
) -> SuiteResult:
    rng = rng or SeededRng(19)
    params = routing.OtParams()
    max_ratio = 0.0
    n_measures = 5
    for m in range(n_measures):
        atoms = rng.normal(8 * d).reshape(8, d)
        atoms /= np.linalg.norm(atoms, axis=1, keepdims=True)
        nu = routing.DiscreteMeasure.uniform(atoms)
        ratio = routing.lipschitz_check(
            nu, trials // n_measures, list(step_sizes), rng, params
        )
        max_ratio = max(max_ratio, ratio)
    ok = max_ratio <= 1.0 + 1e-6
    return SuiteResult("lipschitz", ok, f"max empirical ratio {max_ratio:.9f}")


def run_all(seed: int = 1993) -> list[SuiteResult]:
    rng = SeededRng(seed)
    return [
        verify_eig(rng=rng.spawn(1)),
        verify_dirac_sinkhorn(rng=rng.spawn(2)),
        verify_frechet(rng=rng.spawn(3)),
        verify_gradients(rng=rng.spawn(4)),
        verify_lipschitz(rng=rng.spawn(5)),
    ]
