import json

import numpy as np
import pytest

from guidance_learn import cli, data, evaluation, nn
from guidance_learn.serialize import write_canonical_json


def small_config_doc(**overrides):
    doc = {
        "alpha": 0.1,
        "beta": 0.3,
        "temperature": 5.0,
        "batch_size": 16,
        "hidden_dims": [8],
        "seed": 0,
        "teacher_epochs": 3,
        "student_epochs": 2,
        "finetune_epochs": 1,
        "teacher_lr_schedule": [[0, 0.01]],
        "student_lr_schedule": [[0, 0.001]],
        "data_kind": "blobs",
        "data_classes": 3,
        "data_per_class": 40,
        "data_dim": 4,
        "data_sigma": 0.15,
        "data_clean_fraction": 0.1,
        "data_test_fraction": 0.2,
        "noise_model": "symmetric",
        "noise_rate": 0.3,
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "c.json"
    write_canonical_json(path, small_config_doc())
    return path


def test_parse_args_direct_case():
    parsed = cli.parse_args(["train-teacher", "--config", "c.json", "--out", "run1"])
    assert parsed.command == "train-teacher"
    assert parsed.config_path == "c.json"
    assert parsed.out_dir == "run1"
    assert parsed.seed is None
    assert not parsed.force


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["--help"])
    assert exc.value.code == 0
    assert "guidance-learn" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["train-teacher", "--config", "c.json", "--out", "x", "--bogus"])
    assert exc.value.code != 0


def test_bad_variant_lists_valid_choices(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["baseline", "--config", "c.json", "--out", "x",
                        "--variant", "bogus"])
    assert exc.value.code != 0
    err = capsys.readouterr().err
    assert "guidance" in err and "noisy_only" in err


def test_make_data_and_inject_noise(tmp_path, capsys):
    out = tmp_path / "data"
    assert cli.main(["make-data", "--out", str(out), "--classes", "3",
                     "--per-class", "10", "--dim", "3", "--sigma", "0.1",
                     "--seed", "1"]) == 0
    assert (out / "dataset.csv").exists()
    assert not (out / ".incomplete").exists()

    noisy_out = tmp_path / "noisy"
    assert cli.main(["inject-noise", "--data", str(out / "dataset.csv"),
                     "--out", str(noisy_out), "--noise-model", "symmetric",
                     "--noise-rate", "0.4", "--seed", "1"]) == 0
    assert (noisy_out / "dataset.csv").exists()
    manifest = json.loads((noisy_out / "noise_manifest.json").read_text())
    assert manifest["spec"]["model"] == "symmetric"
    loaded = data.load_csv(noisy_out / "dataset.csv")
    assert np.array_equal(
        np.asarray(manifest["flip_indices"]),
        np.where(loaded.labels != loaded.true_labels)[0],
    )


def test_train_teacher_writes_run_dir(tmp_path, config_file, capsys):
    out = tmp_path / "run1"
    assert cli.main(["train-teacher", "--config", str(config_file),
                     "--out", str(out)]) == 0
    assert (out / "config.json").exists()
    assert (out / "teacher.ckpt").exists()
    assert (out / "report.json").exists()
    assert not (out / ".incomplete").exists()
    summary = capsys.readouterr().out
    assert "final test accuracy" in summary
    report = json.loads((out / "report.json").read_text())
    assert report["stage"] == "teacher"
    assert "wall_time_sec" not in report


def test_train_student_full_run_layout(tmp_path, config_file):
    out = tmp_path / "run2"
    assert cli.main(["train-student", "--config", str(config_file),
                     "--out", str(out)]) == 0
    for name in ("config.json", "teacher.ckpt", "guidance_cache.bin",
                 "student.ckpt", "report.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    fp = report["checkpoint_fingerprints"]
    assert fp["teacher"] != fp["student"]
    # cache sidecar validates against the stored teacher
    from guidance_learn import guidance

    teacher = nn.load_checkpoint(out / "teacher.ckpt")
    cache = guidance.load_cache(out / "guidance_cache.bin",
                                expected_fingerprint=nn.fingerprint(teacher),
                                expected_temperature=5.0)
    assert len(cache) > 0


def test_train_student_from_checkpoint_and_finetune(tmp_path, config_file):
    teacher_dir = tmp_path / "teacher_run"
    assert cli.main(["train-teacher", "--config", str(config_file),
                     "--out", str(teacher_dir)]) == 0
    student_dir = tmp_path / "student_run"
    assert cli.main(["train-student", "--config", str(config_file),
                     "--out", str(student_dir),
                     "--teacher", str(teacher_dir / "teacher.ckpt")]) == 0
    finetune_dir = tmp_path / "finetune_run"
    assert cli.main(["finetune", "--config", str(config_file),
                     "--out", str(finetune_dir),
                     "--checkpoint", str(student_dir / "student.ckpt")]) == 0
    assert (finetune_dir / "finetuned.ckpt").exists()


def test_report_config_snapshot_replays_the_run(tmp_path, config_file):
    out = tmp_path / "orig"
    assert cli.main(["train-teacher", "--config", str(config_file), "--out", str(out)]) == 0
    snapshot = json.loads((out / "report.json").read_text())["config"]
    assert snapshot["data_classes"] == 3 and snapshot["seed"] == 0

    replay_config = tmp_path / "replay.json"
    write_canonical_json(replay_config, snapshot)
    replay_out = tmp_path / "replay"
    assert cli.main(["train-teacher", "--config", str(replay_config),
                     "--out", str(replay_out)]) == 0
    assert (out / "report.json").read_bytes() == (replay_out / "report.json").read_bytes()
    assert (out / "teacher.ckpt").read_bytes() == (replay_out / "teacher.ckpt").read_bytes()


def test_rerun_into_fresh_directory_is_byte_identical(tmp_path, config_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["train-student", "--config", str(config_file), "--out", str(a)]) == 0
    assert cli.main(["train-student", "--config", str(config_file), "--out", str(b)]) == 0
    for name in ("report.json", "config.json", "teacher.ckpt", "student.ckpt",
                 "guidance_cache.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_refuses_overwrite_without_force(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    assert cli.main(["train-teacher", "--config", str(config_file), "--out", str(out)]) == 0
    assert cli.main(["train-teacher", "--config", str(config_file), "--out", str(out)]) == 1
    assert "refusing to overwrite" in capsys.readouterr().err
    assert cli.main(["train-teacher", "--config", str(config_file), "--out", str(out),
                     "--force"]) == 0


def test_failed_run_leaves_incomplete_marker(tmp_path):
    # clean_fraction 0 -> student training cannot run
    path = tmp_path / "c.json"
    write_canonical_json(path, small_config_doc(data_clean_fraction=0.0))
    out = tmp_path / "broken"
    code = cli.main(["train-student", "--config", str(path), "--out", str(out)])
    assert code != 0
    assert (out / ".incomplete").exists()
    assert not (out / "report.json").exists()


def test_malformed_config_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"alpha": 0.1,\n  broken\n}')
    assert cli.main(["train-teacher", "--config", str(path), "--out",
                     str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert "line 2" in err


def test_unknown_config_key_rejected(tmp_path, capsys):
    path = tmp_path / "c.json"
    write_canonical_json(path, small_config_doc(alhpa=0.2))
    assert cli.main(["train-teacher", "--config", str(path), "--out",
                     str(tmp_path / "x")]) == 1
    assert "alhpa" in capsys.readouterr().err


def test_seed_flag_overrides_config(tmp_path, config_file):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli.main(["train-teacher", "--config", str(config_file), "--out", str(out1),
                     "--seed", "5"]) == 0
    snapshot = json.loads((out1 / "config.json").read_text())
    assert snapshot["seed"] == 5
    assert cli.main(["train-teacher", "--config", str(config_file), "--out", str(out2)]) == 0
    assert json.loads((out2 / "config.json").read_text())["seed"] == 0


def test_eval_matches_library_accuracy(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    assert cli.main(["train-student", "--config", str(config_file), "--out", str(out)]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--config", str(config_file),
                     "--checkpoint", str(out / "student.ckpt")]) == 0
    printed = capsys.readouterr().out.strip()

    dataset, _ = data.DataRecipe(
        classes=3, per_class=40, dim=4, sigma=0.15, clean_fraction=0.1,
        test_fraction=0.2, noise_model="symmetric", noise_rate=0.3,
    ).build(0)
    params = nn.load_checkpoint(out / "student.ckpt")
    want = evaluation.accuracy(params, dataset, "test")
    assert printed == f"test accuracy: {want!r}"


def test_baseline_run_and_artifacts(tmp_path, config_file, capsys):
    out = tmp_path / "baseline"
    assert cli.main(["baseline", "--config", str(config_file), "--out", str(out),
                     "--variant", "guidance_finetuned"]) == 0
    for name in ("teacher.ckpt", "student.ckpt", "finetuned.ckpt", "report.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["variant"] == "guidance_finetuned"


def test_sweep_writes_result_files(tmp_path, config_file, capsys):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(config_file), "--out", str(out),
                     "--axis", "beta", "--values", "0.0,0.3", "--seeds", "1,2"]) == 0
    for name in ("results.csv", "results.json", "plotdata.txt", "config.json"):
        assert (out / name).exists(), name
    rows = json.loads((out / "results.json").read_text())["rows"]
    assert len(rows) == 4
    assert "sweep over beta" in capsys.readouterr().out


def test_sweep_thread_env_variable(tmp_path, config_file, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    out1 = tmp_path / "par"
    assert cli.main(["sweep", "--config", str(config_file), "--out", str(out1),
                     "--axis", "beta", "--values", "0.0,0.3", "--seeds", "1"]) == 0
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    out2 = tmp_path / "seq"
    assert cli.main(["sweep", "--config", str(config_file), "--out", str(out2),
                     "--axis", "beta", "--values", "0.0,0.3", "--seeds", "1"]) == 0
    assert (out1 / "results.json").read_bytes() == (out2 / "results.json").read_bytes()

    monkeypatch.setenv(cli.THREADS_ENV, "soup")
    assert cli.main(["sweep", "--config", str(config_file), "--out",
                     str(tmp_path / "bad"), "--axis", "beta", "--values", "0.0",
                     "--seeds", "1"]) == 1
