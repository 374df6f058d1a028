"""Continual-learning driver: staged training, routing-based inference,
metrics, and ablation variants.

Each stage builds frozen class anchors from that task's data, trains a
task expert, then discards (seals) the stage's training data — the
exemplar-free contract is enforced by the data handle itself, which
refuses reads after its stage closes. Inference routes a query over
frozen tasks by entropic transport and mixes per-expert class scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import anchors, encoders, experts, routing
from .config import Config
from .errors import (
    EmptyStateError,
    InsufficientDataError,
    StageClosedError,
    UnknownVariantError,
)
from .linalg import SeededRng

ROUTED_VARIANTS = ("full", "cosine", "sim_only", "single_task", "pca")


class TaskData:
    """Single-stage data handle; reads are forbidden once sealed."""

    def __init__(self, task_id: int, class_ids: list[int], samples: list[encoders.RawSample]):
        self.task_id = task_id
        self.class_ids = sorted(class_ids)
        self._samples = list(samples)
        self._sealed = False
        self.read_count = 0

    @property
    def sealed(self) -> bool:
        return self._sealed

    def samples(self) -> list[encoders.RawSample]:
        if self._sealed:
            raise StageClosedError(
                f"task {self.task_id} training data was sealed at end of its stage"
            )
        self.read_count += 1
        return self._samples

    def seal(self) -> None:
        self._sealed = True
        self._samples = []


@dataclass
class TaskStream:
    """Ordered task list with pairwise-disjoint class sets."""

    tasks: list[TaskData]
    descriptor: str = ""

    def __post_init__(self):
        seen: set[int] = set()
        for t in self.tasks:
            overlap = seen.intersection(t.class_ids)
            if overlap:
                raise InsufficientDataError(
                    f"classes {sorted(overlap)} appear in more than one task"
                )
            seen.update(t.class_ids)


@dataclass
class StageMetrics:
    stage: int  # 1-based
    task_id: int
    accuracy: float  # over all seen classes
    routing_accuracy: float
    per_task_accuracy: dict[int, float]
    loss_trace: list[float]


@dataclass
class MetricsReport:
    stage_accuracies: list[float]
    avg_accuracy: float
    last_accuracy: float
    forgetting: dict[int, float]
    routing_accuracies: list[float]

    def to_lines(self) -> list[str]:
        lines = []
        for i, (a, r) in enumerate(zip(self.stage_accuracies, self.routing_accuracies), 1):
            lines.append(f"stage_{i}_accuracy={a:.12f}")
            lines.append(f"stage_{i}_routing_accuracy={r:.12f}")
        lines.append(f"avg_accuracy={self.avg_accuracy:.12f}")
        lines.append(f"last_accuracy={self.last_accuracy:.12f}")
        for task_id in sorted(self.forgetting):
            lines.append(f"forgetting_task_{task_id}={self.forgetting[task_id]:.12f}")
        return lines


@dataclass
class ContinualState:
    """Everything Algorithm-style inference needs, serializable."""

    config: Config
    seed: int
    enc_vis: encoders.FrozenEncoder
    enc_txt: encoders.FrozenEncoder
    anchor_store: anchors.AnchorStore = field(default_factory=anchors.AnchorStore)
    experts: dict[int, experts.TaskExpert] = field(default_factory=dict)
    task_order: list[int] = field(default_factory=list)
    class_prompts: dict[int, np.ndarray] = field(default_factory=dict)
    stage_metrics: list[StageMetrics] = field(default_factory=list)
    per_task_history: dict[int, dict[int, float]] = field(default_factory=dict)

    def ot_params(self) -> routing.OtParams:
        return routing.OtParams(
            epsilon=self.config.epsilon, tau_route=self.config.tau_route
        )

    def task_measure(self, task_id: int) -> routing.DiscreteMeasure:
        """Uniform measure over the task's anchored visual attributes.

        Atoms are each class's anchor mean plus its K basis vectors.
        The mean atom is what localizes the task on the sphere: basis
        vectors are tangent (mean-centered) directions whose average
        cosine against any query is ~0, so a measure supported on them
        alone cannot discriminate tasks.
        """
        cols = []
        for cid in sorted(self.anchor_store.task_index[task_id]):
            a = self.anchor_store.anchors[cid]
            cols.append(a.mu_vis[None, :])
            cols.append(a.basis_vis.T)
        atoms = np.concatenate(cols, axis=0)
        norms = np.linalg.norm(atoms, axis=1, keepdims=True)
        return routing.DiscreteMeasure.uniform(atoms / norms)

    def seen_classes(self) -> list[int]:
        return sorted(self.class_prompts)


def make_encoders(config: Config, rng: SeededRng):
    """Visual and textual encoders sharing one frozen projection.

    A shared projection mimics a pretrained joint embedding space:
    text and image content describing the same class land in the same
    region, which is what makes zero-shot matching meaningful.
    """
    enc_vis = encoders.FrozenEncoder.create(rng.spawn(11), config.d, config.d_in, "visual")
    enc_txt = encoders.FrozenEncoder(
        projection=enc_vis.projection.copy(), modality="textual"
    )
    return enc_vis, enc_txt


def _perturbation_spec(config: Config) -> encoders.PerturbationSpec:
    return encoders.PerturbationSpec(
        rho_min=config.rho_min, rho_max=config.rho_max, m_views=config.M
    )


def zero_shot_predict(state: ContinualState, sample: encoders.RawSample) -> int:
    """Argmax cosine between the visual embedding and class prompts."""
    if not state.class_prompts:
        raise EmptyStateError("no classes registered yet")
    z = state.enc_vis.encode(sample.features)
    best, best_score = None, -np.inf
    for c in state.seen_classes():
        p = state.class_prompts[c]
        score = float(z @ p / (np.linalg.norm(z) * np.linalg.norm(p)))
        if best is None or score > best_score:
            best, best_score = c, score
    return best


def _one_hot(index: int, n: int) -> routing.RoutingDistribution:
    p = np.zeros(n)
    p[index] = 1.0
    return routing.RoutingDistribution(p)


def _routing_weights(
    state: ContinualState, z_vis: np.ndarray, variant: str
) -> routing.RoutingDistribution:
    params = state.ot_params()
    measures = [state.task_measure(t) for t in state.task_order]
    if variant in ("full", "pca"):
        return routing.routing_probs(z_vis, measures, params)
    if variant == "cosine":
        return routing.cosine_route(z_vis, measures, params)
    if variant == "sim_only":
        n = len(measures)
        return routing.RoutingDistribution(np.full(n, 1.0 / n))
    if variant == "single_task":
        costs = [routing.sinkhorn(routing.DiscreteMeasure.dirac(z_vis), nu, params).cost
                 for nu in measures]
        best = 0
        for i in range(1, len(costs)):
            if costs[i] < costs[best]:
                best = i
        return _one_hot(best, len(costs))
    raise UnknownVariantError(f"unknown inference variant {variant!r}")


def infer(state: ContinualState, sample: encoders.RawSample, variant: str | None = None):
    """Full inference path: encode, route, mix expert predictions."""
    if not state.task_order:
        raise EmptyStateError("state has no frozen tasks")
    if variant is None:
        variant = state.config.variant
    if variant not in ROUTED_VARIANTS:
        raise UnknownVariantError(f"unknown inference variant {variant!r}")
    z_vis = state.enc_vis.encode(sample.features)
    weights = _routing_weights(state, z_vis, variant)
    z_txt_per_class = {c: state.class_prompts[c] for c in state.seen_classes()}
    label, scores = routing.mixture_predict(
        z_vis, z_txt_per_class, state, state.ot_params(), weights=weights
    )
    return label, weights, scores


def _class_groups(samples: list[encoders.RawSample]) -> dict[int, list[encoders.RawSample]]:
    groups: dict[int, list[encoders.RawSample]] = {}
    for s in samples:
        groups.setdefault(s.label, []).append(s)
    return groups


def _train_stage(
    state: ContinualState,
    task: TaskData,
    stage_rng: SeededRng,
) -> list[float]:
    """Anchor, then train, one task. Returns the loss trace."""
    config = state.config
    samples = task.samples()
    groups = _class_groups(samples)
    class_ids = sorted(groups)
    spec = _perturbation_spec(config)

    use_pca = config.variant == "pca"
    class_targets = []
    class_bases_txt = []
    anchor_by_class = {}
    for c in class_ids:
        grp = groups[c]
        if any(s.caption is None for s in grp):
            raise InsufficientDataError(f"class {c}: captions required for training")
        feats = np.stack([s.features for s in grp])
        caps = np.stack([s.caption for s in grp])
        prompt = caps.mean(axis=0)
        state.class_prompts[c] = encoders.encode_textual_fused(state.enc_txt, prompt)
        vis_pts = state.enc_vis.encode_batch(feats)
        txt_pts = np.stack(
            [encoders.encode_textual_fused(state.enc_txt, prompt, cap) for cap in caps]
        )
        build = anchors.build_class_anchor_pca if use_pca else anchors.build_class_anchor
        anchor = build(vis_pts, txt_pts, c, config.K)
        state.anchor_store.add(task.task_id, anchor)
        anchor_by_class[c] = anchor
        class_targets.append(
            encoders.encode_textual_fused(state.enc_txt, prompt, caps.mean(axis=0))
        )
        class_bases_txt.append(anchor.basis_txt)
    state.anchor_store.freeze_task(task.task_id)

    index_of = {c: i for i, c in enumerate(class_ids)}
    z_vis_all = state.enc_vis.encode_batch(np.stack([s.features for s in samples]))
    z_txt_all = []
    for s in samples:
        prompt_raw = np.stack([x.caption for x in groups[s.label]]).mean(axis=0)
        z_txt_all.append(
            encoders.encode_textual_fused(state.enc_txt, prompt_raw, s.caption)
        )

    def make_batch_items(indices, rng):
        items = []
        for i in indices:
            s = samples[i]
            occ = encoders.occlude(s, spec, rng)
            z_occ = state.enc_vis.encode(occ.features)
            views = encoders.augment_views(s, spec, rng)
            view_z_vis = np.stack([state.enc_vis.encode(v.features) for v in views])
            # captions are untouched by visual augmentation
            view_z_txt = np.tile(z_txt_all[i], (spec.m_views, 1))
            items.append(
                experts.BatchItem(
                    z_vis=z_vis_all[i],
                    z_txt=z_txt_all[i],
                    z_vis_occ=z_occ,
                    z_txt_occ=z_txt_all[i],
                    view_z_vis=view_z_vis,
                    view_z_txt=view_z_txt,
                    label_index=index_of[s.label],
                    basis_vis=anchor_by_class[s.label].basis_vis,
                )
            )
        return items

    expert, trace = experts.train_task_expert(
        task_id=task.task_id,
        make_batch_items=make_batch_items,
        n_samples=len(samples),
        class_targets=np.stack(class_targets),
        class_bases_txt=class_bases_txt,
        d=config.d,
        k=config.K,
        weights=experts.LossWeights(
            lambda_int=config.lambda_int,
            lambda_comp=config.lambda_comp,
            tau_cont=config.tau_cont,
        ),
        cfg=experts.TrainConfig(
            epochs=config.epochs,
            batch_size=config.batch_size,
            lr_init=config.lr_init,
            m_views=config.M,
        ),
        rng=stage_rng,
    )
    state.experts[task.task_id] = expert
    return trace


def _evaluate_stage(
    state: ContinualState, test_stream: TaskStream, stage_index: int
) -> tuple[float, float, dict[int, float]]:
    task_pos = {t: i for i, t in enumerate(state.task_order)}
    correct = total = routed = 0
    per_task: dict[int, list[int]] = {}
    for t in test_stream.tasks[: stage_index + 1]:
        for s in t.samples():
            label, weights, _ = infer(state, s)
            hit = int(label == s.label)
            correct += hit
            total += 1
            per_task.setdefault(s.task, []).append(hit)
            if int(np.argmax(weights.probs)) == task_pos[s.task]:
                routed += 1
    per_task_acc = {t: float(np.mean(h)) for t, h in per_task.items()}
    return correct / total, routed / total, per_task_acc


def run_training(
    train_stream: TaskStream, test_stream: TaskStream, config: Config
) -> ContinualState:
    """Sequential stages: anchor, train, seal, evaluate over seen classes."""
    root = SeededRng(config.seed)
    enc_vis, enc_txt = make_encoders(config, root)
    state = ContinualState(config=config, seed=config.seed, enc_vis=enc_vis, enc_txt=enc_txt)
    for stage_index, task in enumerate(train_stream.tasks):
        trace = _train_stage(state, task, root.spawn(23, stage_index))
        task.seal()
        state.task_order.append(task.task_id)
        acc, routing_acc, per_task_acc = _evaluate_stage(state, test_stream, stage_index)
        for t, a in per_task_acc.items():
            state.per_task_history.setdefault(t, {})[stage_index + 1] = a
        state.stage_metrics.append(
            StageMetrics(
                stage=stage_index + 1,
                task_id=task.task_id,
                accuracy=acc,
                routing_accuracy=routing_acc,
                per_task_accuracy=per_task_acc,
                loss_trace=trace,
            )
        )
    return state


def evaluate_metrics(state: ContinualState) -> MetricsReport:
    """Aggregate the per-stage records into the standard summary."""
    if not state.stage_metrics:
        raise EmptyStateError("no stages recorded")
    stage_acc = [m.accuracy for m in state.stage_metrics]
    routing_acc = [m.routing_accuracy for m in state.stage_metrics]
    forgetting = {}
    for task_id, history in state.per_task_history.items():
        final = history[max(history)]
        forgetting[task_id] = max(a - final for a in history.values())
    return MetricsReport(
        stage_accuracies=stage_acc,
        avg_accuracy=float(np.mean(stage_acc)),
        last_accuracy=stage_acc[-1],
        forgetting=forgetting,
        routing_accuracies=routing_acc,
    )


def run_ablation(config: Config, variants, make_streams) -> dict[str, MetricsReport]:
    """Run the same pipeline under each inference/anchoring variant.

    make_streams() must return fresh (train, test) streams — stages
    consume their training data, so streams cannot be reused.
    """
    for v in variants:
        if v not in ROUTED_VARIANTS:
            raise UnknownVariantError(f"unknown ablation variant {v!r}")
    reports = {}
    for v in variants:
        cfg = Config(**{**_config_dict(config), "variant": v})
        train, test = make_streams()
        state = run_training(train, test, cfg)
        reports[v] = evaluate_metrics(state)
    return reports


def _config_dict(config: Config) -> dict:
    from dataclasses import asdict

    return asdict(config)
