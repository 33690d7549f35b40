import json
import shutil

import pytest

from adqc import cli
from adqc.cli import EXIT_INVALID, EXIT_OK, EXIT_STAGE, load_config, main, run_pipeline, StageError

from .conftest import GOLDEN


@pytest.fixture()
def demo_copy(demo_dir, tmp_path):
    target = tmp_path / "study"
    shutil.copytree(demo_dir, target)
    return target


class TestConfig:
    def test_demo_config_resolves_paths(self, demo_dir):
        cfg = load_config(str(demo_dir / "config.toml"))
        assert cfg.seed == 42 and cfg.fit.collapse_null_categories
        assert cfg.path("ratings").is_absolute() and cfg.path("ratings").exists()

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.toml").write_text("[fit]\nnodes = 3\n")
        assert main(["fit", "--config", str(tmp_path / "c.toml"), "-q"]) == EXIT_INVALID

    def test_wrong_type(self, tmp_path, capsys):
        (tmp_path / "c.toml").write_text('[run]\nseed = "abc"\n')
        assert main(["design", "--config", str(tmp_path / "c.toml"), "-q"]) == EXIT_INVALID
        assert "run.seed" in capsys.readouterr().err


class TestDesign:
    def test_demo_sheets(self, demo_copy, tmp_path):
        (demo_copy / "ratings.csv").unlink()  # irrelevant to design
        out = tmp_path / "out"
        assert main(["design", "--config", str(demo_copy / "config.toml"), "--out", str(out), "-q"]) == EXIT_OK
        assert len(list((out / "design" / "sheets").glob("*.md"))) == 7
        expert1 = (out / "design" / "sheets" / "Expert1.md").read_text(encoding="utf-8")
        assert expert1 == (GOLDEN / "sheet_Expert1_seed42.md").read_text(encoding="utf-8")

    def test_bad_seed_flag(self, demo_dir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["design", "--config", str(demo_dir / "config.toml"), "--seed", "abc"])
        assert exc.value.code == EXIT_INVALID
        assert "seed" in capsys.readouterr().err


class TestPipeline:
    def test_outputs(self, demo_run):
        cfg, manifest = demo_run
        out = cfg.out
        assert (out / "ground_truth.csv").exists()
        assert len(list((out / "matrices").glob("*.csv"))) == 7
        assert len(list((out / "fits").glob("*.json"))) == 7
        body = json.loads(manifest.read_text())
        paths = {a["path"] for a in body["artifacts"]}
        assert "reports/proficiency_report.md" in paths and "maps/equal_grouped.svg" in paths
        assert {i["name"] for i in body["inputs"]} >= {"ratings", "expert_ratings", "mappings"}

    def test_rerun_same_manifest(self, demo_run, tmp_path):
        cfg, manifest = demo_run
        cfg2 = load_config(str(cfg.paths["videos"].parent / "config.toml"))
        cfg2.paths["out"] = tmp_path / "again"
        again = run_pipeline(cfg2)
        a = json.loads(manifest.read_text())["artifacts"]
        b = json.loads(again.read_text())["artifacts"]
        assert a == b

    def test_input_change_changes_manifest(self, demo_copy, demo_run, tmp_path):
        text = (demo_copy / "ratings.csv").read_text().splitlines()
        row = text[1].split(",")
        row[4] = "1" if row[4] != "1" else "2"
        text[1] = ",".join(row)
        (demo_copy / "ratings.csv").write_text("\n".join(text) + "\n")
        cfg = load_config(str(demo_copy / "config.toml"))
        cfg.paths["out"] = tmp_path / "changed"
        changed = json.loads(run_pipeline(cfg).read_text())
        original = json.loads(demo_run[1].read_text())
        assert changed["inputs"] != original["inputs"]
        assert changed["artifacts"] != original["artifacts"]

    def test_missing_matrix_aborts_in_fit(self, demo_dir, tmp_path, monkeypatch, capsys):
        real_recode = cli.stage_recode

        def recode_then_delete(cfg):
            written = real_recode(cfg)
            (cfg.out / "matrices" / "equal.csv").unlink()
            return written

        monkeypatch.setattr(cli, "PIPELINE", (("consensus", cli.stage_consensus), ("recode", recode_then_delete),
                                              *cli.PIPELINE[2:]))
        code = main(["pipeline", "--config", str(demo_dir / "config.toml"), "--out", str(tmp_path / "o"), "-q"])
        assert code == EXIT_STAGE
        assert "stage fit failed" in capsys.readouterr().err

    def test_stage_error_names_stage(self, demo_copy, tmp_path):
        (demo_copy / "experts.csv").write_text("bad,header\n")
        cfg = load_config(str(demo_copy / "config.toml"))
        cfg.paths["out"] = tmp_path / "o"
        with pytest.raises(StageError) as exc:
            run_pipeline(cfg)
        assert exc.value.stage == "consensus"


class TestStages:
    def test_stage_by_stage_matches_pipeline(self, demo_dir, demo_run, tmp_path):
        out = tmp_path / "s"
        base = ["--config", str(demo_dir / "config.toml"), "--out", str(out), "-q"]
        for stage in ("consensus", "recode", "fit", "diagnose", "map"):
            assert main([stage, *base]) == EXIT_OK
        ref = demo_run[0].out
        for rel in ("reports/dimension_report.md", "maps/timing.svg", "fits/equal.json"):
            assert (out / rel).read_bytes() == (ref / rel).read_bytes()

    def test_fast_mode_runs(self, demo_dir, tmp_path):
        base = ["--config", str(demo_dir / "config.toml"), "--out", str(tmp_path / "f"), "-q"]
        assert main(["pipeline", *base, "--fast"]) == EXIT_OK
        assert json.loads((tmp_path / "f" / "manifest.json").read_text())["mode"] == "fast"


class TestSimulationCommands:
    def test_recover_writes_report(self, tmp_path):
        code = main(["recover", "--n-persons", "100", "--n-items", "5", "--seed", "3", "--out", str(tmp_path), "-q"])
        assert code == EXIT_OK
        assert (tmp_path / "recovery_report.md").exists()
        assert json.loads((tmp_path / "recovery_report.json").read_text())["seed"] == 3

    def test_seed_flag_overrides_config(self, tmp_path):
        (tmp_path / "c.toml").write_text("[run]\nseed = 5\n[simulate]\nn_persons = 60\nn_items = 4\n")
        main(["recover", "--config", str(tmp_path / "c.toml"), "--seed", "8", "--out", str(tmp_path / "r"), "-q"])
        report = json.loads((tmp_path / "r" / "recovery_report.json").read_text())
        assert report["seed"] == 8 and report["n_persons"] == 60

    def test_invalid_replications(self, tmp_path):
        assert main(["recover", "--replications", "0", "--out", str(tmp_path), "-q"]) == EXIT_INVALID

    def test_simulate(self, tmp_path):
        assert main(["simulate", "--n-persons", "30", "--n-items", "4", "--out", str(tmp_path), "-q"]) == EXIT_OK
        assert (tmp_path / "simulated_matrix.csv").read_text().splitlines()[0] == "respondent_id,i01,i02,i03,i04"


class TestVlmCommands:
    def test_prompt_stdout(self, demo_dir, capsys):
        assert main(["prompt", str(demo_dir / "ad" / "v01_A.json"), "-q"]) == EXIT_OK
        assert capsys.readouterr().out == (GOLDEN / "prompt_v1_v01_A.txt").read_text(encoding="utf-8")

    def test_prompt_chunks(self, demo_dir, tmp_path):
        args = ["prompt", str(demo_dir / "ad" / "v07_A.json"), "--duration", "301", "--role-version", "2",
                "--out", str(tmp_path), "-q"]
        assert main(args) == EXIT_OK
        assert len(list(tmp_path.glob("prompt_chunk*.txt"))) == 11
        assert "ZERO tolerance" in (tmp_path / "system_prompt.txt").read_text()

    def test_parse(self, capsys):
        args = ["parse", str(GOLDEN / "response_sample.json"), "--respondent", "gpt-4o|json|v1",
                "--video", "v01", "--label", "C", "-q"]
        assert main(args) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "respondent_id,video_id,version_label,dimension,rating,comment"
        assert lines[6].startswith("gpt-4o|json|v1,v01,C,strategy,2,")

    def test_parse_bad_payload(self, tmp_path):
        (tmp_path / "p.json").write_text("{}")
        args = ["parse", str(tmp_path / "p.json"), "--respondent", "x", "--video", "v", "--label", "A", "-q"]
        assert main(args) == EXIT_INVALID

    def test_demo_command_reproduces_bundle(self, demo_dir, tmp_path):
        assert main(["demo", "--out", str(tmp_path), "-q"]) == EXIT_OK
        for name in ("ratings.csv", "experts.csv", "label_mappings.csv", "config.toml", "ad/v07_C.json"):
            assert (tmp_path / name).read_bytes() == (demo_dir / name).read_bytes()
