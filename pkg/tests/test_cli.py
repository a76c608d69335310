import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from storymotion.cli import main
from storymotion.models import save_checkpoint
from storymotion.motion import read_clip


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def micro_ckpt(micro_state, tmp_path_factory):
    path = str(tmp_path_factory.mktemp("ckpt") / "state.ckpt")
    save_checkpoint(path, micro_state, {"model": vars(micro_state.cfg)})
    return path


def _run(runner, args, **kw):
    return runner.invoke(main, args, catch_exceptions=False, **kw)


class TestBuildData:
    def test_digest_deterministic(self, runner, tmp_path_factory):
        d1 = str(tmp_path_factory.mktemp("d1"))
        d2 = str(tmp_path_factory.mktemp("d2"))
        r1 = _run(runner, ["build-data", "--out", d1, "--seed", "5", "--clips-per-action", "2"])
        r2 = _run(runner, ["build-data", "--out", d2, "--seed", "5", "--clips-per-action", "2"])
        assert r1.exit_code == 0 and r2.exit_code == 0
        assert json.loads(r1.stdout)["digest"] == json.loads(r2.stdout)["digest"]

    def test_config_hash_logged(self, runner, tmp_path_factory, caplog):
        out = str(tmp_path_factory.mktemp("d3"))
        import logging

        with caplog.at_level(logging.INFO, logger="storymotion"):
            r = _run(runner, ["build-data", "--out", out, "--seed", "1",
                              "--clips-per-action", "2"])
        assert r.exit_code == 0
        assert "config_hash=" in caplog.text


class TestGenerate:
    def test_deterministic_per_seed(self, runner, micro_ckpt, tmp_path):
        p1, p2 = str(tmp_path / "a.clip"), str(tmp_path / "b.clip")
        for p in (p1, p2):
            r = _run(runner, ["generate", "--ckpt", micro_ckpt, "--action", "walk",
                              "--out", p, "--seed", "11", "--steps", "5", "--no-guidance"])
            assert r.exit_code == 0, r.output
        np.testing.assert_array_equal(read_clip(p1).features, read_clip(p2).features)

    def test_seed_changes_output(self, runner, micro_ckpt, tmp_path):
        p1, p2 = str(tmp_path / "a.clip"), str(tmp_path / "b.clip")
        _run(runner, ["generate", "--ckpt", micro_ckpt, "--action", "walk",
                      "--out", p1, "--seed", "1", "--steps", "5", "--no-guidance"])
        _run(runner, ["generate", "--ckpt", micro_ckpt, "--action", "walk",
                      "--out", p2, "--seed", "2", "--steps", "5", "--no-guidance"])
        assert not np.array_equal(read_clip(p1).features, read_clip(p2).features)

    def test_unknown_action_is_contract_violation(self, runner, micro_ckpt, tmp_path):
        r = runner.invoke(main, ["generate", "--ckpt", micro_ckpt, "--action", "moonwalk",
                                 "--out", str(tmp_path / "x.clip"), "--steps", "5"])
        assert r.exit_code == 5
        err = json.loads(r.stderr.strip().splitlines()[-1])
        assert err["error"] == "contract_violation"


class TestExitCodes:
    def test_usage_error_is_2(self, runner):
        r = runner.invoke(main, ["generate", "--definitely-not-a-flag"])
        assert r.exit_code == 2

    def test_missing_checkpoint_is_4(self, runner, tmp_path):
        r = runner.invoke(main, ["generate", "--ckpt", str(tmp_path / "none.ckpt"),
                                 "--action", "walk", "--out", str(tmp_path / "o.clip")])
        assert r.exit_code == 4
        err = json.loads(r.stderr.strip().splitlines()[-1])
        assert err["error"] == "missing_file"

    def test_bad_config_file_is_3(self, runner, tmp_path, micro_ckpt):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[unknown-section]\nfoo = 1\n")
        r = runner.invoke(main, ["--config", str(cfg), "generate", "--ckpt", micro_ckpt,
                                 "--action", "walk", "--out", str(tmp_path / "o.clip")])
        assert r.exit_code == 3
        err = json.loads(r.stderr.strip().splitlines()[-1])
        assert err["error"] == "config"

    def test_missing_bundle_file_is_4(self, runner, micro_ckpt, tmp_path):
        r = runner.invoke(main, ["generate", "--ckpt", micro_ckpt, "--action", "walk",
                                 "--out", str(tmp_path / "o.clip"),
                                 "--bundle", str(tmp_path / "nope.json")])
        assert r.exit_code == 4


class TestTrainPipeline:
    def test_codec_then_generator_then_mapper(self, runner, dataset, tmp_path):
        root, _ = dataset
        c1 = str(tmp_path / "codec.ckpt")
        c2 = str(tmp_path / "gen.ckpt")
        c3 = str(tmp_path / "map.ckpt")
        r = _run(runner, ["train-codec", "--data", root, "--out", c1,
                          "--steps", "10", "--lr", "1e-3"])
        assert r.exit_code == 0, r.output
        r = _run(runner, ["train-generator", "--data", root, "--ckpt", c1, "--out", c2,
                          "--steps", "10", "--base-steps", "10", "--lr", "1e-3"])
        assert r.exit_code == 0, r.output
        r = _run(runner, ["train-mapper", "--data", root, "--ckpt", c2, "--out", c3,
                          "--steps", "10", "--lr", "1e-3"])
        assert r.exit_code == 0, r.output
        assert os.path.exists(c3)

    def test_generator_without_codec_is_5(self, runner, dataset, tmp_path):
        root, _ = dataset
        fresh = str(tmp_path / "fresh.ckpt")
        from storymotion.models import GeneratorState

        save_checkpoint(fresh, GeneratorState(), {})
        r = runner.invoke(main, ["train-generator", "--data", root, "--ckpt", fresh,
                                 "--out", str(tmp_path / "o.ckpt"), "--steps", "5"])
        assert r.exit_code == 5


class TestBlendAndExport:
    def test_blend_and_export_bvh(self, runner, micro_ckpt, tmp_path):
        p1, p2 = str(tmp_path / "a.clip"), str(tmp_path / "b.clip")
        for p, seed in ((p1, "1"), (p2, "2")):
            _run(runner, ["generate", "--ckpt", micro_ckpt, "--action", "walk",
                          "--out", p, "--seed", seed, "--steps", "5", "--no-guidance"])
        out = str(tmp_path / "blended.clip")
        r = _run(runner, ["blend", "--ckpt", micro_ckpt, "--out", out,
                          "--clips", p1, "--clips", p2, "--actions", "walk,walk",
                          "--ladder", "5"])
        assert r.exit_code == 0, r.output
        assert json.loads(r.stdout)["frames"] == 80
        bvh = str(tmp_path / "motion.bvh")
        r = _run(runner, ["export-bvh", "--clip", out, "--out", bvh])
        assert r.exit_code == 0
        text = open(bvh).read()
        assert text.startswith("HIERARCHY") and "MOTION" in text


class TestEvaluate:
    def test_table_and_json_report(self, runner, micro_ckpt, dataset, tmp_path):
        root, _ = dataset
        report = str(tmp_path / "report.json")
        r = _run(runner, ["evaluate", "--ckpt", micro_ckpt, "--data", root,
                          "--protocol", "average", "--samples", "2", "--steps", "5",
                          "--out", report])
        assert r.exit_code == 0, r.output
        assert "MPJPE-3D" in r.stdout and "Protocol: Average" in r.stdout
        doc = json.loads(open(report).read())
        assert doc["extractor"] == "toy"
        assert doc["count"] == 2
