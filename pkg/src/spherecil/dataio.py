"""Binary dataset/state formats and the append-only results log.

Files store 32-bit little-endian reals for dataset features (compact)
while all in-memory math runs in 64-bit; the state file keeps full
64-bit precision because inference parity across persistence is an
exact contract. Both containers start with a magic tag and a format
version, and the state payload carries a content digest so corruption
is detected before deserialization.
"""

from __future__ import annotations

import struct

import numpy as np

from . import encoders, experts, pipeline
from .anchors import ClassAnchor, fnv1a64
from .config import parse_config_text
from .errors import FormatError, StateDigestError, StateVersionError

DATASET_MAGIC = b"AREA"
DATASET_VERSION = 1
STATE_MAGIC = b"ARST"
STATE_VERSION = 1

_CAPTION_FLAG = 1


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(path: str, stream: pipeline.TaskStream) -> None:
    samples = [s for t in stream.tasks for s in t.samples()]
    if not samples:
        raise FormatError("refusing to write an empty dataset", offset=0)
    d_in = samples[0].features.shape[0]
    has_captions = samples[0].caption is not None
    flags = _CAPTION_FLAG if has_captions else 0
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<HIIQ", DATASET_VERSION, d_in, flags, len(samples)))
        for s in samples:
            if (s.caption is not None) != has_captions:
                raise FormatError("mixed caption presence across records", offset=fh.tell())
            fh.write(struct.pack("<II", s.label, s.task))
            fh.write(np.asarray(s.features, dtype="<f4").tobytes())
            if has_captions:
                fh.write(np.asarray(s.caption, dtype="<f4").tobytes())


def load_dataset(path: str) -> pipeline.TaskStream:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {data[:4]!r}", offset=0)
    header = struct.calcsize("<HIIQ")
    if len(data) < 4 + header:
        raise FormatError("truncated dataset header", offset=len(data))
    version, d_in, flags, count = struct.unpack_from("<HIIQ", data, 4)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=4)
    has_captions = bool(flags & _CAPTION_FLAG)
    rec_size = 8 + 4 * d_in + (4 * d_in if has_captions else 0)
    offset = 4 + header
    if len(data) != offset + count * rec_size:
        raise FormatError(
            f"dataset length {len(data)} does not match {count} declared records",
            offset=min(len(data), offset + count * rec_size),
        )
    by_task: dict[int, list[encoders.RawSample]] = {}
    for _ in range(count):
        label, task = struct.unpack_from("<II", data, offset)
        offset += 8
        feats = np.frombuffer(data, dtype="<f4", count=d_in, offset=offset).astype(float)
        offset += 4 * d_in
        caption = None
        if has_captions:
            caption = np.frombuffer(data, dtype="<f4", count=d_in, offset=offset).astype(float)
            offset += 4 * d_in
        by_task.setdefault(task, []).append(
            encoders.RawSample(features=feats, label=label, task=task, caption=caption)
        )
    tasks = []
    for task_id in sorted(by_task):
        samples = by_task[task_id]
        class_ids = sorted({s.label for s in samples})
        tasks.append(pipeline.TaskData(task_id, class_ids, samples))
    return pipeline.TaskStream(tasks)


# ---------------------------------------------------------------------------
# results log


def append_results(
    path: str,
    run_id: str,
    config_digest: int,
    rows: list[tuple[int, str, float]],
) -> None:
    """Append (stage, metric, value) rows; one record per line."""
    with open(path, "a", encoding="utf-8") as fh:
        for stage, metric, value in rows:
            fh.write(
                f"run={run_id} stage={stage} metric={metric} "
                f"value={value:.12g} config={config_digest:016x}\n"
            )


def read_results(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = dict(part.split("=", 1) for part in line.split(" "))
            rec["stage"] = int(rec["stage"])
            rec["value"] = float(rec["value"])
            rec["config"] = int(rec["config"], 16)
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# state files


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u32(self, v: int):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack("<Q", v))

    def f64(self, v: float):
        self.parts.append(struct.pack("<d", v))

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def array(self, a: np.ndarray):
        a = np.ascontiguousarray(a, dtype="<f8")
        self.u32(a.ndim)
        for dim in a.shape:
            self.u32(dim)
        self.parts.append(a.tobytes())

    def bytes_out(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def _take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError("truncated state payload", offset=self.offset)
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def array(self) -> np.ndarray:
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self._take(8 * n), dtype="<f8").reshape(shape).copy()


def _write_anchor(w: _Writer, a: ClassAnchor) -> None:
    w.u32(a.class_id)
    w.text(a.method_tag)
    for arr in (a.mu_vis, a.basis_vis, a.eigvals_vis, a.mu_txt, a.basis_txt, a.eigvals_txt):
        w.array(arr)


def _read_anchor(r: _Reader) -> ClassAnchor:
    class_id = r.u32()
    method_tag = r.text()
    arrs = [r.array() for _ in range(6)]
    return ClassAnchor(class_id, *arrs, method_tag=method_tag)


def _state_payload(state: pipeline.ContinualState) -> bytes:
    w = _Writer()
    w.text(state.config.canonical_text())
    w.u64(state.seed)
    w.array(state.enc_vis.projection)
    w.array(state.enc_txt.projection)
    w.u32(len(state.task_order))
    for t in state.task_order:
        w.u32(t)
    w.u32(len(state.anchor_store.anchors))
    for cid in sorted(state.anchor_store.anchors):
        _write_anchor(w, state.anchor_store.anchors[cid])
    w.u32(len(state.anchor_store.task_index))
    for task_id in sorted(state.anchor_store.task_index):
        w.u32(task_id)
        cids = state.anchor_store.task_index[task_id]
        w.u32(len(cids))
        for cid in cids:
            w.u32(cid)
    w.u32(len(state.anchor_store.freeze_digests))
    for task_id in sorted(state.anchor_store.freeze_digests):
        w.u32(task_id)
        w.u64(state.anchor_store.freeze_digests[task_id])
    w.u32(len(state.class_prompts))
    for cid in sorted(state.class_prompts):
        w.u32(cid)
        w.array(state.class_prompts[cid])
    w.u32(len(state.experts))
    for task_id in sorted(state.experts):
        e = state.experts[task_id]
        w.u32(task_id)
        for arr in (e.s_vis, e.r_vis, e.s_txt, e.r_txt):
            w.array(arr)
    w.u32(len(state.stage_metrics))
    for m in state.stage_metrics:
        w.u32(m.stage)
        w.u32(m.task_id)
        w.f64(m.accuracy)
        w.f64(m.routing_accuracy)
        w.u32(len(m.per_task_accuracy))
        for task_id in sorted(m.per_task_accuracy):
            w.u32(task_id)
            w.f64(m.per_task_accuracy[task_id])
        w.u32(len(m.loss_trace))
        for v in m.loss_trace:
            w.f64(v)
    w.u32(len(state.per_task_history))
    for task_id in sorted(state.per_task_history):
        w.u32(task_id)
        hist = state.per_task_history[task_id]
        w.u32(len(hist))
        for stage in sorted(hist):
            w.u32(stage)
            w.f64(hist[stage])
    return w.bytes_out()


def save_state(path: str, state: pipeline.ContinualState) -> None:
    payload = _state_payload(state)
    with open(path, "wb") as fh:
        fh.write(STATE_MAGIC)
        fh.write(struct.pack("<HQ", STATE_VERSION, fnv1a64(payload)))
        fh.write(payload)


def load_state(path: str) -> pipeline.ContinualState:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != STATE_MAGIC:
        raise FormatError(f"bad state magic {data[:4]!r}", offset=0)
    if len(data) < 14:
        raise FormatError("truncated state header", offset=len(data))
    version, digest = struct.unpack_from("<HQ", data, 4)
    if version != STATE_VERSION:
        raise StateVersionError(
            f"state format version {version} not supported (expected {STATE_VERSION})"
        )
    payload = data[14:]
    actual = fnv1a64(payload)
    if actual != digest:
        raise StateDigestError(
            f"state payload digest mismatch (stored {digest:016x}, computed {actual:016x})"
        )
    r = _Reader(payload)
    config = parse_config_text(r.text())
    seed = r.u64()
    proj_vis = r.array()
    proj_txt = r.array()
    state = pipeline.ContinualState(
        config=config,
        seed=seed,
        enc_vis=encoders.FrozenEncoder(projection=proj_vis, modality="visual"),
        enc_txt=encoders.FrozenEncoder(projection=proj_txt, modality="textual"),
    )
    state.task_order = [r.u32() for _ in range(r.u32())]
    store = state.anchor_store
    for _ in range(r.u32()):
        a = _read_anchor(r)
        store.anchors[a.class_id] = a
    for _ in range(r.u32()):
        task_id = r.u32()
        store.task_index[task_id] = [r.u32() for _ in range(r.u32())]
    for _ in range(r.u32()):
        task_id = r.u32()
        store.freeze_digests[task_id] = r.u64()
    for _ in range(r.u32()):
        cid = r.u32()
        state.class_prompts[cid] = r.array()
    for _ in range(r.u32()):
        task_id = r.u32()
        arrs = [r.array() for _ in range(4)]
        state.experts[task_id] = experts.TaskExpert(task_id, *arrs)
    for _ in range(r.u32()):
        stage = r.u32()
        task_id = r.u32()
        accuracy = r.f64()
        routing_accuracy = r.f64()
        per_task = {}
        for _ in range(r.u32()):
            t = r.u32()
            per_task[t] = r.f64()
        trace = [r.f64() for _ in range(r.u32())]
        state.stage_metrics.append(
            pipeline.StageMetrics(
                stage=stage,
                task_id=task_id,
                accuracy=accuracy,
                routing_accuracy=routing_accuracy,
                per_task_accuracy=per_task,
                loss_trace=trace,
            )
        )
    for _ in range(r.u32()):
        task_id = r.u32()
        hist = {}
        for _ in range(r.u32()):
            s = r.u32()
            hist[s] = r.f64()
        state.per_task_history[task_id] = hist
    if r.offset != len(payload):
        raise FormatError("trailing bytes after state payload", offset=14 + r.offset)
    return state


def state_digest(state: pipeline.ContinualState) -> int:
    return fnv1a64(_state_payload(state))
