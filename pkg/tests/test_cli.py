import re

import pytest

from spherecil import cli, dataio

SMALL_FLAGS = [
    "--d_in", "16", "--d", "8", "--K", "2", "--B", "2",
    "--classes_per_task", "2", "--samples_per_class", "8",
    "--epochs", "2", "--batch_size", "8", "--seed", "17",
]


def _run(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def trained(tmp_path, capsys):
    train = str(tmp_path / "train.bin")
    test = str(tmp_path / "test.bin")
    state = str(tmp_path / "state.bin")
    results = str(tmp_path / "results.log")
    code, out, _ = _run(
        capsys, ["gen", *SMALL_FLAGS, "--train-out", train, "--test-out", test]
    )
    assert code == 0 and out.startswith("ok command=gen")
    code, out, _ = _run(
        capsys,
        ["train", *SMALL_FLAGS, "--data", train, "--test", test,
         "--state-out", state, "--results", results, "--run-id", "t1"],
    )
    assert code == 0 and out.startswith("ok command=train")
    return {"train": train, "test": test, "state": state,
            "results": results, "train_line": out}


class TestGenTrainEval:
    def test_eval_matches_final_stage_accuracy(self, trained, capsys):
        m = re.search(r"last_accuracy=([0-9.]+)", trained["train_line"])
        last_acc = float(m.group(1))
        code, out, _ = _run(
            capsys, ["eval", "--state", trained["state"], "--data", trained["test"]]
        )
        assert code == 0
        m = re.search(r"accuracy=([0-9.]+)", out)
        assert float(m.group(1)) == pytest.approx(last_acc, abs=1e-6)

    def test_results_log_written(self, trained):
        recs = dataio.read_results(trained["results"])
        assert any(r["metric"] == "avg_accuracy" for r in recs)
        assert all(r["run"] == "t1" for r in recs)

    def test_gen_deterministic_bytes(self, tmp_path, capsys):
        a1, b1 = str(tmp_path / "a1.bin"), str(tmp_path / "b1.bin")
        a2, b2 = str(tmp_path / "a2.bin"), str(tmp_path / "b2.bin")
        for tr, te in ((a1, b1), (a2, b2)):
            code, _, _ = _run(
                capsys, ["gen", *SMALL_FLAGS, "--train-out", tr, "--test-out", te]
            )
            assert code == 0
        assert open(a1, "rb").read() == open(a2, "rb").read()
        assert open(b1, "rb").read() == open(b2, "rb").read()

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "d_in = 16\nd = 8\nK = 2\nB = 2\nclasses_per_task = 2\n"
            "samples_per_class = 8\nepochs = 2\nbatch_size = 8\nseed = 17\n"
        )
        tr, te = str(tmp_path / "t.bin"), str(tmp_path / "e.bin")
        code, out, _ = _run(
            capsys,
            ["gen", "--config", str(cfg), "--seed", "18",
             "--train-out", tr, "--test-out", te],
        )
        assert code == 0
        # flag must win over the file: different seed, different bytes
        tr2, te2 = str(tmp_path / "t2.bin"), str(tmp_path / "e2.bin")
        code, _, _ = _run(
            capsys,
            ["gen", "--config", str(cfg), "--train-out", tr2, "--test-out", te2],
        )
        assert code == 0
        assert open(tr, "rb").read() != open(tr2, "rb").read()


class TestVerifyCommand:
    def test_verify_passes(self, capsys):
        code, out, _ = _run(capsys, ["verify", "--seed", "1993"])
        assert code == 0
        assert out.count("status=pass") == 5
        assert "ok command=verify" in out


class TestAblateCommand:
    def test_two_variants(self, tmp_path, capsys):
        results = str(tmp_path / "ablate.log")
        code, out, _ = _run(
            capsys,
            ["ablate", *SMALL_FLAGS, "--variants", "full,sim_only",
             "--results", results, "--run-id", "a1"],
        )
        assert code == 0
        assert "full_last=" in out and "sim_only_last=" in out
        recs = dataio.read_results(results)
        metrics = {r["metric"] for r in recs}
        assert "full_last_accuracy" in metrics and "sim_only_avg_accuracy" in metrics

    def test_unknown_variant_exit_3(self, capsys):
        code, _, err = _run(capsys, ["ablate", *SMALL_FLAGS, "--variants", "bogus"])
        assert code == 3
        assert "error:" in err


class TestExitCodes:
    def test_unknown_flag_usage_error(self, capsys):
        assert cli.main(["gen", "--banana", "1"]) == 2

    def test_missing_subcommand_usage_error(self, capsys):
        assert cli.main([]) == 2

    def test_help_exit_zero(self, capsys):
        assert cli.main(["--help"]) == 0

    def test_missing_data_file_exit_3(self, tmp_path, capsys):
        code, _, err = _run(
            capsys,
            ["train", *SMALL_FLAGS, "--data", str(tmp_path / "nope.bin"),
             "--test", str(tmp_path / "nope2.bin")],
        )
        assert code == 3
        assert "error:" in err

    def test_corrupt_dataset_exit_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code, _, err = _run(capsys, ["eval", "--state", str(bad), "--data", str(bad)])
        assert code == 3

    def test_bad_config_value_exit_3(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("banana = 1\n")
        code, _, err = _run(capsys, ["gen", "--config", str(cfg)])
        assert code == 3
