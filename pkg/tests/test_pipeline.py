import numpy as np
import pytest

from spherecil import dataio, experts, pipeline, synthetic
from spherecil.config import Config
from spherecil.encoders import RawSample
from spherecil.errors import (
    EmptyStateError,
    InsufficientDataError,
    StageClosedError,
    UnknownVariantError,
)
from spherecil.linalg import SeededRng

SMALL = Config(
    d_in=16, d=8, K=2, B=2, classes_per_task=2, samples_per_class=8,
    epochs=2, batch_size=8, seed=31,
)


class CountingTaskData(pipeline.TaskData):
    """Test double recording the stage at which every read happens."""

    def __init__(self, *args, clock, **kwargs):
        super().__init__(*args, **kwargs)
        self._clock = clock
        self.read_stages: list[int] = []

    def samples(self):
        out = super().samples()
        self.read_stages.append(self._clock[0])
        return out


def _counting_streams(config):
    train, test = synthetic.gen_synthetic(config)
    clock = [0]
    counted = [
        CountingTaskData(t.task_id, t.class_ids, t.samples(), clock=clock)
        for t in train.tasks
    ]
    return pipeline.TaskStream(counted, train.descriptor), test, counted, clock


class TestTaskData:
    def test_sealed_reads_raise(self):
        t = pipeline.TaskData(0, [0], [])
        t.samples()
        t.seal()
        assert t.sealed
        with pytest.raises(StageClosedError):
            t.samples()

    def test_read_count(self):
        s = RawSample(features=np.ones(4), label=0, task=0)
        t = pipeline.TaskData(0, [0], [s])
        t.samples()
        t.samples()
        assert t.read_count == 2

    def test_stream_rejects_shared_classes(self):
        a = pipeline.TaskData(0, [0, 1], [])
        b = pipeline.TaskData(1, [1, 2], [])
        with pytest.raises(InsufficientDataError):
            pipeline.TaskStream([a, b])


class TestEmptyState:
    def test_zero_shot_requires_classes(self):
        rng = SeededRng(1)
        enc_vis, enc_txt = pipeline.make_encoders(SMALL, rng)
        state = pipeline.ContinualState(
            config=SMALL, seed=1, enc_vis=enc_vis, enc_txt=enc_txt
        )
        s = RawSample(features=np.ones(16), label=0, task=0)
        with pytest.raises(EmptyStateError):
            pipeline.zero_shot_predict(state, s)
        with pytest.raises(EmptyStateError):
            pipeline.infer(state, s)

    def test_metrics_require_stages(self):
        rng = SeededRng(2)
        enc_vis, enc_txt = pipeline.make_encoders(SMALL, rng)
        state = pipeline.ContinualState(
            config=SMALL, seed=2, enc_vis=enc_vis, enc_txt=enc_txt
        )
        with pytest.raises(EmptyStateError):
            pipeline.evaluate_metrics(state)


class TestTrainingRun:
    def test_deterministic_state_and_metrics(self):
        digests, reports = [], []
        for _ in range(2):
            train, test = synthetic.gen_synthetic(SMALL)
            state = pipeline.run_training(train, test, SMALL)
            digests.append(dataio.state_digest(state))
            reports.append(pipeline.evaluate_metrics(state).to_lines())
        assert digests[0] == digests[1]
        assert reports[0] == reports[1]

    def test_tasks_sealed_after_their_stage(self):
        train, test, counted, clock = _counting_streams(SMALL)
        pipeline.run_training(train, test, SMALL)
        for t in counted:
            assert t.sealed
            with pytest.raises(StageClosedError):
                t.samples()

    def test_no_reads_after_own_stage(self):
        # drive stages manually so the clock marks stage boundaries
        config = SMALL
        train, test, counted, clock = _counting_streams(config)
        root = SeededRng(config.seed)
        enc_vis, enc_txt = pipeline.make_encoders(config, root)
        state = pipeline.ContinualState(
            config=config, seed=config.seed, enc_vis=enc_vis, enc_txt=enc_txt
        )
        for stage_index, task in enumerate(train.tasks):
            clock[0] = stage_index
            pipeline._train_stage(state, task, root.spawn(23, stage_index))
            task.seal()
            state.task_order.append(task.task_id)
        for stage_index, t in enumerate(counted):
            assert t.read_stages, "stage data must be read during its own stage"
            assert all(s == stage_index for s in t.read_stages)

    def test_anchor_and_expert_digests_frozen_across_stages(self):
        config = SMALL
        train, test = synthetic.gen_synthetic(config)
        root = SeededRng(config.seed)
        enc_vis, enc_txt = pipeline.make_encoders(config, root)
        state = pipeline.ContinualState(
            config=config, seed=config.seed, enc_vis=enc_vis, enc_txt=enc_txt
        )
        snapshots = {}
        for stage_index, task in enumerate(train.tasks):
            pipeline._train_stage(state, task, root.spawn(23, stage_index))
            task.seal()
            state.task_order.append(task.task_id)
            for prev in state.task_order:
                key = (
                    state.anchor_store.task_digest(prev),
                    state.experts[prev].digest(),
                )
                if prev in snapshots:
                    assert snapshots[prev] == key
                else:
                    snapshots[prev] = key

    def test_stage_metrics_shape(self):
        train, test = synthetic.gen_synthetic(SMALL)
        state = pipeline.run_training(train, test, SMALL)
        assert [m.stage for m in state.stage_metrics] == [1, 2]
        assert all(0.0 <= m.accuracy <= 1.0 for m in state.stage_metrics)
        # stage b evaluates b tasks
        assert len(state.stage_metrics[0].per_task_accuracy) == 1
        assert len(state.stage_metrics[1].per_task_accuracy) == 2


class TestMetrics:
    def test_aggregate_identities(self):
        train, test = synthetic.gen_synthetic(SMALL)
        state = pipeline.run_training(train, test, SMALL)
        rep = pipeline.evaluate_metrics(state)
        stage_acc = [m.accuracy for m in state.stage_metrics]
        assert rep.stage_accuracies == stage_acc
        assert rep.avg_accuracy == pytest.approx(np.mean(stage_acc))
        assert rep.last_accuracy == stage_acc[-1]
        assert all(v >= 0.0 for v in rep.forgetting.values())

    def test_forgetting_is_peak_minus_final(self):
        rng = SeededRng(3)
        enc_vis, enc_txt = pipeline.make_encoders(SMALL, rng)
        state = pipeline.ContinualState(
            config=SMALL, seed=3, enc_vis=enc_vis, enc_txt=enc_txt
        )
        state.per_task_history = {0: {1: 0.9, 2: 0.6, 3: 0.7}}
        state.stage_metrics = [
            pipeline.StageMetrics(1, 0, 0.9, 1.0, {0: 0.9}, []),
            pipeline.StageMetrics(2, 1, 0.6, 1.0, {0: 0.6}, []),
            pipeline.StageMetrics(3, 2, 0.7, 1.0, {0: 0.7}, []),
        ]
        rep = pipeline.evaluate_metrics(state)
        assert rep.forgetting[0] == pytest.approx(0.9 - 0.7)


class TestIdentityExpertReduction:
    def test_mixture_equals_zero_shot_with_identity_experts(self):
        # identity experts leave embeddings untouched, so the routed
        # mixture collapses to plain prompt matching for ANY weights
        train, test = synthetic.gen_synthetic(SMALL)
        state = pipeline.run_training(train, test, SMALL)
        for t in state.experts:
            state.experts[t] = experts.TaskExpert.identity_init(
                t, SMALL.d, SMALL.K
            )
        for t in test.tasks:
            for s in t.samples():
                label, _, _ = pipeline.infer(state, s)
                assert label == pipeline.zero_shot_predict(state, s)


class TestVariants:
    def test_unknown_variant_rejected(self):
        train, test = synthetic.gen_synthetic(SMALL)
        state = pipeline.run_training(train, test, SMALL)
        s = test.tasks[0].samples()[0]
        with pytest.raises(UnknownVariantError):
            pipeline.infer(state, s, variant="bogus")

    def test_single_task_weights_one_hot(self):
        train, test = synthetic.gen_synthetic(SMALL)
        state = pipeline.run_training(train, test, SMALL)
        s = test.tasks[0].samples()[0]
        _, w, _ = pipeline.infer(state, s, variant="single_task")
        assert sorted(w.probs) == [0.0, 1.0]

    def test_sim_only_weights_uniform(self):
        train, test = synthetic.gen_synthetic(SMALL)
        state = pipeline.run_training(train, test, SMALL)
        s = test.tasks[0].samples()[0]
        _, w, _ = pipeline.infer(state, s, variant="sim_only")
        assert np.allclose(w.probs, [0.5, 0.5])

    def test_ablation_rejects_unknown_variant(self):
        with pytest.raises(UnknownVariantError):
            pipeline.run_ablation(SMALL, ["bogus"], lambda: synthetic.gen_synthetic(SMALL))

    def test_ablation_returns_report_per_variant(self):
        reports = pipeline.run_ablation(
            SMALL, ["full", "sim_only"], lambda: synthetic.gen_synthetic(SMALL)
        )
        assert set(reports) == {"full", "sim_only"}
        for rep in reports.values():
            assert len(rep.stage_accuracies) == SMALL.B


class TestSingleTaskDegenerate:
    def test_b1_runs_and_routes_trivially(self):
        cfg = Config(
            d_in=16, d=8, K=2, B=1, classes_per_task=3, samples_per_class=8,
            epochs=2, batch_size=8, seed=5,
        )
        train, test = synthetic.gen_synthetic(cfg)
        state = pipeline.run_training(train, test, cfg)
        assert state.stage_metrics[0].routing_accuracy == 1.0
        s_any = test.tasks[0].samples()[0]
        _, w, _ = pipeline.infer(state, s_any)
        assert np.allclose(w.probs, [1.0])
