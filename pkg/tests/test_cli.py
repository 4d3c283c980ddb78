"""CLI commands: workflows, exit codes, and byte-level reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from trackedit.cli import main


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def run(args) -> int:
    return main([str(a) for a in args])


IDENTITY_SPEC = {"ops": []}
SHIFT_SPEC = {
    "ops": [
        {"kind": "rigid", "selection": {"object_id": 1},
         "keyframes": [{"frame": 0, "t": [0.3, 0.0, 0.0]}]}
    ]
}

TOY_CONFIG = {
    "scene": {"n_frames": 8, "height": 16, "width": 16,
              "n_board_tracks": 20, "n_background_tracks": 12},
    "conditioner": {"d": 32, "heads": 4},
    "denoiser": {"d": 32, "heads": 2, "n_blocks": 2, "patch": [2, 4, 4]},
    "train": {"epochs": 2, "batch_size": 3, "n_tracks": 16, "val_pairs": 2},
    "pairs": 4,
    "val_pairs_held_out": 2,
}


class TestBasics:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["--version"])
        assert exc.value.code == 0
        assert "trackedit" in capsys.readouterr().out

    def test_error_exit_code_and_single_line(self, tmp_path, capsys):
        code = run(["ingest", "--raw", tmp_path / "nope", "--out", tmp_path / "out"])
        assert code == 2
        err = capsys.readouterr().err.strip()
        assert err.startswith("error:") and "\n" not in err


class TestIngestAndEdit:
    def test_ingest_round_trip(self, project_dir, tmp_path):
        out = tmp_path / "ingested"
        assert run(["ingest", "--raw", project_dir, "--out", out]) == 0
        assert (out / "camera.json").exists() and (out / "frames/000000.png").exists()

    def test_identity_edit_tracks_byte_identical(self, project_dir, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(IDENTITY_SPEC))
        out = tmp_path / "edited"
        assert run(["edit", "--project", project_dir, "--edit", spec, "--out", out]) == 0
        printed = capsys.readouterr().out.strip()
        assert len(printed) == 64  # editspec content hash
        original = (project_dir / "target" / "tracks.json").read_bytes()
        assert (out / "target" / "tracks.json").read_bytes() == original

    def test_shift_edit_moves_object(self, project_dir, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(SHIFT_SPEC))
        out = tmp_path / "edited"
        assert run(["edit", "--project", project_dir, "--edit", spec, "--out", out]) == 0
        doc = json.loads((out / "target" / "tracks.json").read_text())
        before = json.loads((project_dir / "target" / "tracks.json").read_text())
        moved = np.asarray(doc["positions"]) - np.asarray(before["positions"])
        oid = np.asarray(doc["object_id"])
        assert np.allclose(moved[:, oid == 1, 0], 0.3, atol=1e-9)
        assert np.abs(moved[:, oid != 1]).max() == 0.0

    def test_preview_command(self, project_dir, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(IDENTITY_SPEC))
        out = tmp_path / "preview"
        assert run(["preview", "--project", project_dir, "--edit", spec, "--out", out]) == 0
        assert (out / "frames" / "000000.png").exists()
        assert (out / "coverage" / "000000.png").exists()

    def test_augment_writes_sidecar(self, project_dir, tmp_path):
        out = tmp_path / "augmented"
        assert run(["augment", "--project", project_dir, "--out", out, "--seed", 3]) == 0
        sidecar = json.loads((out / "augment.sidecar.json").read_text())
        assert sidecar["seed"] == 3
        assert {r["op"] for r in sidecar["records"]} <= {
            "epipolar_jitter", "homography_perturb", "linear_drift", "frame_dropout"
        }
        assert (out / "target" / "tracks.json").exists()


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "train.json"
    path.write_text(json.dumps(TOY_CONFIG))
    return path


@pytest.fixture(scope="module")
def toy_dataset_dir(config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("toys") / "data"
    assert run(["gen-toy", "--config", config_file, "--out", out, "--seed", 1]) == 0
    return out


class TestToyPipeline:
    def test_gen_toy_layout(self, toy_dataset_dir):
        pairs = sorted(toy_dataset_dir.glob("pair_*"))
        assert len(pairs) == 4
        for p in pairs[:1]:
            assert (p / "frames" / "000000.png").exists()
            assert (p / "target" / "frames" / "000000.png").exists()
            assert (p / "meta.json").exists()

    def test_train_generate_eval(self, config_file, toy_dataset_dir, tmp_path, capsys):
        run_dir = tmp_path / "run"
        assert run(["train-toy", "--config", config_file, "--out", run_dir, "--seed", 1]) == 0
        assert (run_dir / "checkpoint.bin").exists()
        metrics = [json.loads(l) for l in (run_dir / "metrics.jsonl").read_text().splitlines()]
        assert len(metrics) == 2 and "val_epe" in metrics[-1]

        gen_dir = tmp_path / "generated"
        first_pair = sorted(toy_dataset_dir.glob("pair_*"))[0]
        assert run([
            "generate", "--project", first_pair, "--checkpoint", run_dir / "checkpoint",
            "--config", config_file, "--out", gen_dir, "--steps", 2, "--seed", 0,
        ]) == 0
        assert (gen_dir / "frames" / "000000.png").exists()

        report = tmp_path / "report.json"
        assert run([
            "eval", "--a", gen_dir / "frames", "--b", first_pair / "target" / "frames",
            "--out", report,
        ]) == 0
        doc = json.loads(report.read_text())
        assert "psnr" in doc["scalars"] and "ssim" in doc["scalars"]
        assert "metric" in capsys.readouterr().out

    def test_eval_identical_dirs(self, project_dir, tmp_path, capsys):
        report = tmp_path / "report.json"
        assert run([
            "eval", "--a", project_dir / "frames", "--b", project_dir / "frames",
            "--out", report,
        ]) == 0
        doc = json.loads(report.read_text())
        assert doc["scalars"]["psnr"] == "inf"
        assert doc["scalars"]["ssim"] == pytest.approx(1.0)


class TestReproducibility:
    CASES = ("ingest", "edit", "preview", "augment", "gen-toy")

    def _run_twice(self, name, project_dir, tmp_path, config_file=None):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{name}_{tag}"
            if name == "ingest":
                args = ["ingest", "--raw", project_dir, "--out", out]
            elif name in ("edit", "preview"):
                spec = tmp_path / "spec.json"
                spec.write_text(json.dumps(SHIFT_SPEC))
                args = [name, "--project", project_dir, "--edit", spec, "--out", out]
            elif name == "augment":
                args = ["augment", "--project", project_dir, "--out", out]
            elif name == "gen-toy":
                cfg = tmp_path / "cfg.json"
                cfg.write_text(json.dumps({**TOY_CONFIG, "pairs": 2}))
                args = ["gen-toy", "--config", cfg, "--out", out]
            assert run(args + ["--seed", 0]) == 0
            outs.append(tree_bytes(out))
        return outs

    @pytest.mark.parametrize("name", CASES)
    def test_seeded_commands_byte_identical(self, name, project_dir, tmp_path):
        a, b = self._run_twice(name, project_dir, tmp_path)
        assert a.keys() == b.keys()
        for key in a:
            assert a[key] == b[key], f"{name}: {key} differs between runs"

    def test_train_toy_byte_identical(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({**TOY_CONFIG, "pairs": 3}))
        trees = []
        for tag in ("a", "b"):
            out = tmp_path / f"run_{tag}"
            assert run(["train-toy", "--config", cfg, "--out", out, "--seed", 0]) == 0
            trees.append(tree_bytes(out))
        assert trees[0].keys() == trees[1].keys()
        for key in trees[0]:
            assert trees[0][key] == trees[1][key], f"{key} differs"

    def test_commands_never_mutate_input_project(self, project_dir, tmp_path):
        before = tree_bytes(project_dir)
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(SHIFT_SPEC))
        run(["edit", "--project", project_dir, "--edit", spec, "--out", tmp_path / "o1"])
        run(["preview", "--project", project_dir, "--edit", spec, "--out", tmp_path / "o2"])
        run(["augment", "--project", project_dir, "--out", tmp_path / "o3"])
        run(["ingest", "--raw", project_dir, "--out", tmp_path / "o4"])
        after = tree_bytes(project_dir)
        assert before.keys() == after.keys()
        assert all(before[k] == after[k] for k in before)

    def test_generate_byte_identical(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({**TOY_CONFIG, "pairs": 2}))
        data = tmp_path / "data"
        assert run(["gen-toy", "--config", cfg, "--out", data, "--seed", 0]) == 0
        ckpt = tmp_path / "run"
        assert run(["train-toy", "--config", cfg, "--out", ckpt, "--seed", 0]) == 0
        trees = []
        for tag in ("a", "b"):
            out = tmp_path / f"gen_{tag}"
            assert run([
                "generate", "--project", data / "pair_0000", "--checkpoint", ckpt / "checkpoint",
                "--config", cfg, "--out", out, "--steps", 2, "--seed", 0,
            ]) == 0
            trees.append(tree_bytes(out))
        for key in trees[0]:
            assert trees[0][key] == trees[1][key]
