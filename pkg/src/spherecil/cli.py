"""Command-line surface: gen | train | eval | verify | ablate.

Every config field is exposed as `--key value`; `--config` points at a
flat `key = value` text file, with explicit flags taking precedence.
Exit codes: 0 success, 1 internal error, 2 usage error, 3 data error,
4 verification failure. Each successful command prints one structured
`key=value` summary line as its final output.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from . import dataio, pipeline, synthetic, verify
from .config import Config, config_overrides, load_config
from .errors import (
    ConfigError,
    FormatError,
    GeometryError,
    InsufficientDataError,
    StateDigestError,
    StateVersionError,
    UnknownVariantError,
)

_DATA_ERRORS = (
    ConfigError,
    FormatError,
    GeometryError,
    InsufficientDataError,
    StateDigestError,
    StateVersionError,
    UnknownVariantError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="flat key = value config file")
    for f in fields(Config):
        kind = type(getattr(Config(), f.name))
        parser.add_argument(
            f"--{f.name}", type=kind if kind is not str else str, default=None
        )


def _resolve_config(args: argparse.Namespace) -> Config:
    config = load_config(args.config) if args.config else Config()
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(Config)
        if getattr(args, f.name) is not None
    }
    return config_overrides(config, **overrides)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spherecil",
        description="Hyperspherical class-incremental learning on embedding vectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic train/test dataset files")
    _add_config_flags(p)
    p.add_argument("--train-out", default="train.bin")
    p.add_argument("--test-out", default="test.bin")

    p = sub.add_parser("train", help="run staged training and persist the state")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--test", required=True, help="held-out dataset file")
    p.add_argument("--state-out", default="state.bin")
    p.add_argument("--results", default=None, help="results log to append to")
    p.add_argument("--run-id", default="run0")

    p = sub.add_parser("eval", help="evaluate a persisted state on a dataset file")
    p.add_argument("--state", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("verify", help="run the numerical oracle suites")
    p.add_argument("--seed", type=int, default=1993)

    p = sub.add_parser("ablate", help="run inference/anchoring variants and compare")
    _add_config_flags(p)
    p.add_argument(
        "--variants",
        default="full,cosine,sim_only,single_task,pca",
        help="comma-separated variant list",
    )
    p.add_argument("--results", default=None)
    p.add_argument("--run-id", default="ablate0")
    return parser


def _cmd_gen(args) -> int:
    config = _resolve_config(args)
    train, test = synthetic.gen_synthetic(config)
    n_train = sum(len(t.samples()) for t in train.tasks)
    n_test = sum(len(t.samples()) for t in test.tasks)
    dataio.save_dataset(args.train_out, train)
    dataio.save_dataset(args.test_out, test)
    print(
        f"ok command=gen train={args.train_out} test={args.test_out} "
        f"train_records={n_train} test_records={n_test} config={config.digest():016x}"
    )
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    train = dataio.load_dataset(args.data)
    test = dataio.load_dataset(args.test)
    state = pipeline.run_training(train, test, config)
    report = pipeline.evaluate_metrics(state)
    dataio.save_state(args.state_out, state)
    if args.results:
        rows = []
        for i, m in enumerate(state.stage_metrics, 1):
            rows.append((i, "accuracy", m.accuracy))
            rows.append((i, "routing_accuracy", m.routing_accuracy))
        rows.append((len(state.stage_metrics), "avg_accuracy", report.avg_accuracy))
        rows.append((len(state.stage_metrics), "last_accuracy", report.last_accuracy))
        dataio.append_results(args.results, args.run_id, config.digest(), rows)
    print(
        f"ok command=train state={args.state_out} stages={len(state.stage_metrics)} "
        f"avg_accuracy={report.avg_accuracy:.6f} last_accuracy={report.last_accuracy:.6f} "
        f"config={config.digest():016x}"
    )
    return 0


def _cmd_eval(args) -> int:
    state = dataio.load_state(args.state)
    stream = dataio.load_dataset(args.data)
    correct = total = 0
    for t in stream.tasks:
        for s in t.samples():
            label, _, _ = pipeline.infer(state, s)
            correct += int(label == s.label)
            total += 1
    acc = correct / total if total else float("nan")
    print(
        f"ok command=eval samples={total} accuracy={acc:.12f} "
        f"config={state.config.digest():016x}"
    )
    return 0


def _cmd_verify(args) -> int:
    results = verify.run_all(seed=args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"suite={r.name} status={status} detail=\"{r.detail}\"")
    if failed:
        print(f"command=verify status=fail failed={len(failed)} total={len(results)}")
        return 4
    print(f"ok command=verify passed={len(results)} total={len(results)}")
    return 0


def _cmd_ablate(args) -> int:
    config = _resolve_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    reports = pipeline.run_ablation(
        config, variants, lambda: synthetic.gen_synthetic(config)
    )
    parts = []
    rows = []
    for v in variants:
        rep = reports[v]
        parts.append(f"{v}_last={rep.last_accuracy:.6f}")
        rows.append((len(rep.stage_accuracies), f"{v}_last_accuracy", rep.last_accuracy))
        rows.append((len(rep.stage_accuracies), f"{v}_avg_accuracy", rep.avg_accuracy))
    if args.results:
        dataio.append_results(args.results, args.run_id, config.digest(), rows)
    print(f"ok command=ablate {' '.join(parts)} config={config.digest():016x}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
