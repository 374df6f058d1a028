import os
import struct

import numpy as np
import pytest

from spherecil import dataio, pipeline, synthetic
from spherecil.config import Config
from spherecil.encoders import RawSample
from spherecil.errors import FormatError, StateDigestError, StateVersionError

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden_dataset.bin")

SMALL = Config(
    d_in=16, d=8, K=2, B=2, classes_per_task=2, samples_per_class=8,
    epochs=2, batch_size=8, seed=11,
)


def _tiny_stream(d_in=6, captions=True):
    def mk(label, task, base):
        x = np.arange(d_in, dtype=float) * 0.25 + base
        cap = x + 0.0625 if captions else None
        return RawSample(features=x, label=label, task=task, caption=cap)

    t0 = pipeline.TaskData(0, [0, 1], [mk(0, 0, 1.0), mk(1, 0, -2.0)])
    t1 = pipeline.TaskData(1, [2], [mk(2, 1, 0.5)])
    return pipeline.TaskStream([t0, t1])


class TestDatasetRoundTrip:
    def test_float32_bit_equality(self, tmp_path):
        path = str(tmp_path / "d.bin")
        stream = _tiny_stream()
        dataio.save_dataset(path, stream)
        loaded = dataio.load_dataset(path)
        orig = [s for t in stream.tasks for s in t.samples()]
        back = [s for t in loaded.tasks for s in t.samples()]
        assert len(orig) == len(back)
        for a, b in zip(orig, back):
            assert (a.label, a.task) == (b.label, b.task)
            # values pass through f32; round-trip of the stored file is exact
            assert np.array_equal(np.float32(a.features), np.float32(b.features))
            assert np.array_equal(np.float32(a.caption), np.float32(b.caption))

    def test_second_save_byte_identical(self, tmp_path):
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        dataio.save_dataset(p1, _tiny_stream())
        dataio.save_dataset(p2, dataio.load_dataset(p1))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_no_caption_flag(self, tmp_path):
        path = str(tmp_path / "d.bin")
        dataio.save_dataset(path, _tiny_stream(captions=False))
        loaded = dataio.load_dataset(path)
        assert all(s.caption is None for t in loaded.tasks for s in t.samples())

    def test_synthetic_roundtrip_preserves_structure(self, tmp_path):
        train, _ = synthetic.gen_synthetic(SMALL)
        path = str(tmp_path / "d.bin")
        dataio.save_dataset(path, train)
        loaded = dataio.load_dataset(path)
        assert [t.task_id for t in loaded.tasks] == [0, 1]
        assert [t.class_ids for t in loaded.tasks] == [[0, 1], [2, 3]]


class TestGoldenDataset:
    """Fixed byte layout is a contract; the checked-in file pins it."""

    def test_loads_expected_values(self):
        stream = dataio.load_dataset(GOLDEN)
        samples = [s for t in stream.tasks for s in t.samples()]
        assert [(s.label, s.task) for s in samples] == [(0, 0), (1, 0), (2, 1)]
        assert np.array_equal(samples[0].features, [1.0, 0.5, -0.25, 2.0])
        assert np.array_equal(samples[2].features, [-0.5, 0.0625, 1.25, -2.5])
        assert np.array_equal(samples[0].caption, np.asarray(
            np.float32([1.0, 0.5, -0.25, 2.0]) + np.float32(0.0625), dtype=float))

    def test_resave_reproduces_golden_bytes(self, tmp_path):
        path = str(tmp_path / "copy.bin")
        dataio.save_dataset(path, dataio.load_dataset(GOLDEN))
        assert open(path, "rb").read() == open(GOLDEN, "rb").read()

    def test_header_fields(self):
        data = open(GOLDEN, "rb").read()
        assert data[:4] == b"AREA"
        version, d_in, flags, count = struct.unpack_from("<HIIQ", data, 4)
        assert (version, d_in, flags, count) == (1, 4, 1, 3)


class TestDatasetErrors:
    def test_bad_magic_offset_zero(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError) as exc:
            dataio.load_dataset(str(p))
        assert exc.value.offset == 0

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"AREA\x01\x00")
        with pytest.raises(FormatError, match="truncated"):
            dataio.load_dataset(str(p))

    def test_truncated_records(self, tmp_path):
        good = tmp_path / "good.bin"
        dataio.save_dataset(str(good), _tiny_stream())
        data = good.read_bytes()
        bad = tmp_path / "bad.bin"
        bad.write_bytes(data[:-5])
        with pytest.raises(FormatError, match="declared records"):
            dataio.load_dataset(str(bad))

    def test_unsupported_version(self, tmp_path):
        data = bytearray(open(GOLDEN, "rb").read())
        data[4] = 9
        p = tmp_path / "v9.bin"
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            dataio.load_dataset(str(p))

    def test_empty_stream_refused(self, tmp_path):
        empty = pipeline.TaskStream([])
        with pytest.raises(FormatError):
            dataio.save_dataset(str(tmp_path / "e.bin"), empty)


def _trained_state():
    train, test = synthetic.gen_synthetic(SMALL)
    return pipeline.run_training(train, test, SMALL)


class TestStateRoundTrip:
    def test_digest_preserving_roundtrip(self, tmp_path):
        state = _trained_state()
        path = str(tmp_path / "s.bin")
        dataio.save_state(path, state)
        loaded = dataio.load_state(path)
        assert dataio.state_digest(loaded) == dataio.state_digest(state)
        assert loaded.config == state.config
        assert loaded.task_order == state.task_order
        assert np.array_equal(loaded.enc_vis.projection, state.enc_vis.projection)
        for t in state.experts:
            assert loaded.experts[t].digest() == state.experts[t].digest()
        assert loaded.anchor_store.freeze_digests == state.anchor_store.freeze_digests

    def test_inference_parity_after_reload(self, tmp_path):
        state = _trained_state()
        path = str(tmp_path / "s.bin")
        dataio.save_state(path, state)
        loaded = dataio.load_state(path)
        _, test = synthetic.gen_synthetic(SMALL)
        for t in test.tasks:
            for s in t.samples():
                la, wa, _ = pipeline.infer(state, s)
                lb, wb, _ = pipeline.infer(loaded, s)
                assert la == lb
                assert np.array_equal(wa.probs, wb.probs)

    def test_metrics_survive(self, tmp_path):
        state = _trained_state()
        path = str(tmp_path / "s.bin")
        dataio.save_state(path, state)
        loaded = dataio.load_state(path)
        ra = pipeline.evaluate_metrics(state)
        rb = pipeline.evaluate_metrics(loaded)
        assert ra.to_lines() == rb.to_lines()


class TestStateErrors:
    def test_tampered_byte_digest_error(self, tmp_path):
        state = _trained_state()
        path = tmp_path / "s.bin"
        dataio.save_state(str(path), state)
        data = bytearray(path.read_bytes())
        data[50] ^= 0xFF  # inside the payload
        bad = tmp_path / "bad.bin"
        bad.write_bytes(bytes(data))
        with pytest.raises(StateDigestError):
            dataio.load_state(str(bad))

    def test_version_mismatch(self, tmp_path):
        state = _trained_state()
        path = tmp_path / "s.bin"
        dataio.save_state(str(path), state)
        data = bytearray(path.read_bytes())
        data[4] = 7
        bad = tmp_path / "bad.bin"
        bad.write_bytes(bytes(data))
        with pytest.raises(StateVersionError):
            dataio.load_state(str(bad))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FormatError):
            dataio.load_state(str(p))


class TestResultsLog:
    def test_append_and_read(self, tmp_path):
        path = str(tmp_path / "results.log")
        cfg = Config()
        dataio.append_results(path, "runA", cfg.digest(), [(1, "accuracy", 0.5)])
        dataio.append_results(path, "runB", cfg.digest(), [(2, "accuracy", 0.75)])
        recs = dataio.read_results(path)
        assert len(recs) == 2
        assert recs[0]["run"] == "runA" and recs[0]["stage"] == 1
        assert recs[1]["value"] == 0.75
        assert recs[0]["config"] == cfg.digest()
