"""Inference-time task routing and mixture prediction.

A query embedding is matched against each task's attribute manifold
(the uniform measure over its frozen basis vectors) by entropic optimal
transport with cosine cost. Transport costs turn into task
probabilities through a Boltzmann softmax, and per-class scores are
mixed across experts. A point-to-point cosine router and an empirical
Lipschitz verifier for the transport score are included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import experts, sphere
from .errors import ConvergenceError, DimensionError, EmptyStateError


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atoms on the sphere; weights normalized at construction."""

    atoms: np.ndarray  # (n, d), unit rows
    weights: np.ndarray  # (n,), nonnegative, sums to 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise DimensionError("weights must be nonnegative")
        s = w.sum()
        if not np.isfinite(s) or s <= 0:
            raise DimensionError("weights must have positive finite mass")
        object.__setattr__(self, "weights", w / s)
        object.__setattr__(self, "atoms", np.atleast_2d(np.asarray(self.atoms, dtype=float)))

    @classmethod
    def dirac(cls, x: np.ndarray) -> "DiscreteMeasure":
        return cls(atoms=np.asarray(x, dtype=float)[None, :], weights=np.ones(1))

    @classmethod
    def uniform(cls, atoms: np.ndarray) -> "DiscreteMeasure":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        return cls(atoms=atoms, weights=np.full(len(atoms), 1.0 / len(atoms)))

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())


@dataclass(frozen=True)
class OtParams:
    epsilon: float = 0.1
    tau_route: float = 0.05
    max_iter: int = 1000
    marginal_tol: float = 1e-9
    # analysis flag: subtract eps * H(target weights) from each task's
    # cost so that differing task sizes do not bias routing
    subtract_target_entropy: bool = False

    def __post_init__(self):
        if self.epsilon <= 0 or self.tau_route <= 0 or self.marginal_tol <= 0:
            raise DimensionError("OT parameters must be positive")


@dataclass(frozen=True)
class RoutingDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise DimensionError("routing probabilities must be a distribution")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class SinkhornResult:
    cost: float
    plan: np.ndarray
    iterations: int
    marginal_error: float


def cost_matrix(source: DiscreteMeasure, target: DiscreteMeasure) -> np.ndarray:
    """Cosine distance 1 - <x, v> between all atom pairs, in [0, 2]."""
    if source.atoms.shape[1] != target.atoms.shape[1]:
        raise DimensionError("source and target atoms live in different dimensions")
    return np.clip(1.0 - source.atoms @ target.atoms.T, 0.0, 2.0)


def _plan_entropy(pi: np.ndarray) -> float:
    pos = pi[pi > 0]
    return float(-(pos * np.log(pos)).sum())


def sinkhorn(source: DiscreteMeasure, target: DiscreteMeasure, params: OtParams) -> SinkhornResult:
    """Entropic OT by log-domain alternating scaling.

    Stops when the max L1 marginal violation drops below marginal_tol;
    the reported cost is <pi, C> - eps * H(pi).
    """
    c = cost_matrix(source, target)
    a = source.weights
    b = target.weights
    eps = params.epsilon
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    err = np.inf
    it = 0
    for it in range(1, params.max_iter + 1):
        m = (g[None, :] - c) / eps
        f = eps * (log_a - _logsumexp_rows(m))
        m = (f[:, None] - c) / eps
        g = eps * (log_b - _logsumexp_rows(m.T))
        pi = np.exp((f[:, None] + g[None, :] - c) / eps)
        err = max(
            float(np.abs(pi.sum(axis=1) - a).sum()),
            float(np.abs(pi.sum(axis=0) - b).sum()),
        )
        if err < params.marginal_tol:
            break
    if err >= params.marginal_tol:
        raise ConvergenceError(
            f"Sinkhorn did not reach marginal tolerance (violation {err:.3e})",
            residual=err,
        )
    cost = float((pi * c).sum()) - eps * _plan_entropy(pi)
    return SinkhornResult(cost=cost, plan=pi, iterations=it, marginal_error=err)


def _logsumexp_rows(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(m - mx).sum(axis=1, keepdims=True))).ravel()


def transport_score(query: np.ndarray, measure: DiscreteMeasure, params: OtParams) -> float:
    """Negated entropic transport cost from the query Dirac to the measure."""
    res = sinkhorn(DiscreteMeasure.dirac(query), measure, params)
    return -res.cost


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def routing_probs(
    query: np.ndarray, task_measures: list[DiscreteMeasure], params: OtParams
) -> RoutingDistribution:
    """Boltzmann distribution over tasks from entropic transport costs."""
    if not task_measures:
        raise EmptyStateError("no task measures to route over")
    costs = []
    for nu in task_measures:
        res = sinkhorn(DiscreteMeasure.dirac(query), nu, params)
        cost = res.cost
        if params.subtract_target_entropy:
            cost += params.epsilon * nu.entropy()
        costs.append(cost)
    return RoutingDistribution(_softmax(-np.asarray(costs) / params.tau_route))


def cosine_route(
    query: np.ndarray, task_measures: list[DiscreteMeasure], params: OtParams
) -> RoutingDistribution:
    """Point-to-point baseline: cost is 1 - max cosine to the task's atoms."""
    if not task_measures:
        raise EmptyStateError("no task measures to route over")
    costs = np.array([1.0 - float((nu.atoms @ query).max()) for nu in task_measures])
    return RoutingDistribution(_softmax(-costs / params.tau_route))


def mixture_predict(
    z_vis: np.ndarray,
    z_txt_per_class: dict[int, np.ndarray],
    state,
    params: OtParams,
    weights: RoutingDistribution | None = None,
):
    """Mixture-of-experts class scores; argmax with lowest-id tie-break.

    When scoring candidate class c under expert b, both embeddings use
    class c's own frozen bases so per-class scores stay comparable.
    """
    task_order = state.task_order
    if not task_order:
        raise EmptyStateError("state contains no frozen tasks")
    if weights is None:
        weights = routing_probs(z_vis, [state.task_measure(t) for t in task_order], params)
    class_ids = sorted(z_txt_per_class)
    scores = {c: 0.0 for c in class_ids}
    for p_b, task_id in zip(weights.probs, task_order):
        expert = state.experts[task_id]
        for c in class_ids:
            anchor = state.anchor_store.anchors[c]
            e_v = experts.visual_embedding(expert, anchor, z_vis)
            e_t = experts.textual_embedding(expert, anchor, z_txt_per_class[c])
            sim = float(
                e_v @ e_t / (np.linalg.norm(e_v) * np.linalg.norm(e_t))
            )
            scores[c] += p_b * sim
    best = class_ids[0]
    for c in class_ids[1:]:
        if scores[c] > scores[best]:
            best = c
    return best, scores


def lipschitz_check(
    task_measure: DiscreteMeasure,
    trials: int,
    step_sizes: list[float],
    rng,
    params: OtParams,
) -> float:
    """Empirical Lipschitz ratio of the transport score on the sphere.

    For random base points and tangent directions, compares the score
    change against the geodesic step; the theory bounds the ratio by 1.
    """
    d = task_measure.atoms.shape[1]
    max_ratio = 0.0
    for _ in range(trials):
        z = rng.normal(d)
        z /= np.linalg.norm(z)
        delta = rng.normal(d)
        delta -= np.dot(z, delta) * z
        delta /= np.linalg.norm(delta)
        s0 = transport_score(z, task_measure, params)
        for t in step_sizes:
            z1 = sphere.exp_map(z, t * delta)
            s1 = transport_score(z1, task_measure, params)
            dist = sphere.geodesic_distance(z, z1)
            if dist > 0:
                max_ratio = max(max_ratio, abs(s0 - s1) / dist)
    return max_ratio
