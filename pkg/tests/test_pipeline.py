import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from synthts import ConfigError, RunConfig, StageError, run_pipeline
from synthts.cli import main
from synthts.pipeline import (
    read_instances,
    stage_decode,
    stage_embed,
    stage_encode,
    stage_evaluate,
    stage_finetune,
    stage_generate,
    stage_segment,
)


def write_series_csv(path, n=800, channels=1, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    cols = []
    for c in range(channels):
        # slow amplitude/offset drift gives the windows low-rank structure
        amp = 1.0 + 0.5 * np.sin(2 * np.pi * t / n + c)
        drift = 0.8 * np.cos(2 * np.pi * t / (n / 2) + c)
        y = amp * np.sin(2 * np.pi * t / 24 + c) + drift + 0.05 * rng.normal(size=n)
        cols.append(y)
    names = [f"ch{c}" for c in range(channels)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(f"{col[i]:.6f}" for col in cols) + "\n")
    return names


def small_config(tmp_path, **kw):
    csv = tmp_path / "input.csv"
    if not csv.exists():
        write_series_csv(csv)
    defaults = dict(
        input_path=str(csv),
        out_dir=str(tmp_path / "out"),
        mode="univariate",
        length=60,
        instances=20,
        method="fpc",
        k=3,
        target_count=25,
        batch_size=16,
        seed=0,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


class TestRunConfig:
    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            RunConfig("in.csv", "out", mode="bogus")

    def test_remote_requires_url(self):
        with pytest.raises(ConfigError):
            RunConfig("in.csv", "out", backend="remote")

    def test_k_or_target_required(self):
        with pytest.raises(ConfigError):
            RunConfig("in.csv", "out", k=None, variance_target=None)

    def test_conditional_requires_multivariate(self):
        with pytest.raises(ConfigError):
            RunConfig("in.csv", "out", mode="univariate", conditional=True)

    def test_default_cap_is_ten_targets(self):
        cfg = RunConfig("in.csv", "out", target_count=40)
        assert cfg.max_count == 400

    def test_from_json_rejects_unknown_keys(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"input_path": "x", "out_dir": "y", "bogus": 1}))
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_json(p)

    def test_from_json_overrides(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"input_path": "x", "out_dir": "y", "k": 2}))
        cfg = RunConfig.from_json(p, k=5, seed=9)
        assert cfg.k == 5 and cfg.seed == 9

    def test_stage_seeds_distinct_and_stable(self):
        cfg = RunConfig("in.csv", "out", seed=3)
        seeds = {s: cfg.stage_seed(s) for s in ("segment", "embed", "encode")}
        assert len(set(seeds.values())) == 3
        assert cfg.stage_seed("embed") == seeds["embed"]
        assert RunConfig("in.csv", "out", seed=4).stage_seed("embed") != seeds["embed"]


class TestStages:
    def test_stage_chain(self, tmp_path):
        cfg = small_config(tmp_path)
        out = Path(cfg.out_dir)
        s = stage_segment(cfg)
        assert s["n_instances"] == 20
        assert (out / "windows" / "plan.json").exists()
        s = stage_embed(cfg)
        assert s["K"] == 3
        assert s["variance_retained"][0] > 0.5
        s = stage_encode(cfg)
        assert s["K"] == 3
        prompts = (out / "prompts" / "finetune.txt").read_text().splitlines()
        assert len(prompts) == 20
        assert all("Target:" in p for p in prompts)
        s = stage_finetune(cfg)
        assert s == {"backend": "reference", "corpus_size": 20}
        s = stage_generate(cfg)
        assert s["accepted"] == 25
        s = stage_decode(cfg)
        assert s["shape"] == [25, 1, 60]
        scores = stage_evaluate(cfg)
        assert set(scores) >= {"mdd", "acd", "ed", "dtw"}
        report = json.loads((out / "report" / "report.json").read_text())
        assert report["metadata"]["n_generated"] == 25

    def test_missing_upstream_artifact(self, tmp_path):
        cfg = small_config(tmp_path)
        with pytest.raises(StageError, match="embed"):
            stage_embed(cfg)

    def test_filter_log_structure(self, tmp_path):
        cfg = small_config(tmp_path)
        for fn in (stage_segment, stage_embed, stage_encode, stage_finetune,
                   stage_generate):
            fn(cfg)
        lines = [json.loads(l) for l in
                 (Path(cfg.out_dir) / "generated" / "filter_log.jsonl")
                 .read_text().splitlines()]
        assert lines[-1]["stop"] == "stop-target"
        steps = lines[:-1]
        assert all(
            {"step", "G", "accepted", "diversity", "total_accepted"} <= set(r)
            for r in steps
        )
        assert steps[-1]["total_accepted"] >= cfg.target_count

    def test_multisample_mode(self, tmp_path):
        csv = tmp_path / "multi.csv"
        rng = np.random.default_rng(1)
        samples = rng.normal(size=(80, 12)).cumsum(axis=0)  # 12 instances, L=80
        with open(csv, "w", encoding="utf-8") as fh:
            fh.write(",".join(f"s{i}" for i in range(12)) + "\n")
            for row in samples:
                fh.write(",".join(f"{v:.6f}" for v in row) + "\n")
        cfg = small_config(tmp_path, input_path=str(csv), mode="multisample",
                           out_dir=str(tmp_path / "out_ms"), k=2, target_count=15)
        s = stage_segment(cfg)
        assert s["n_instances"] == 12
        assert s["plan"]["mode"] == "multisample"
        x = read_instances(Path(cfg.out_dir) / "windows")
        assert x.channel_names == ("value",)
        assert x.data.shape == (12, 1, 80)


class TestRunPipeline:
    def test_manifest_and_determinism(self, tmp_path):
        cfg_a = small_config(tmp_path, out_dir=str(tmp_path / "a"))
        cfg_b = small_config(tmp_path, out_dir=str(tmp_path / "b"))
        man_a = run_pipeline(cfg_a)
        man_b = run_pipeline(cfg_b)
        assert list(man_a["stages"]) == [
            "segment", "embed", "encode", "finetune", "generate", "decode", "evaluate"
        ]
        # every stage recorded artifacts with hashes
        for st in man_a["stages"].values():
            assert st["artifacts"]
            assert all(len(h) == 64 for h in st["artifacts"].values())
        # identical config and seed give byte-identical artifacts
        for stage in man_a["stages"]:
            assert (man_a["stages"][stage]["artifacts"]
                    == man_b["stages"][stage]["artifacts"])
        assert (tmp_path / "a" / "manifest.json").exists()

    def test_seed_changes_output(self, tmp_path):
        man_a = run_pipeline(small_config(tmp_path, out_dir=str(tmp_path / "a")))
        man_c = run_pipeline(small_config(tmp_path, out_dir=str(tmp_path / "c"), seed=1))
        a = man_a["stages"]["generate"]["artifacts"]["generated/table.csv"]
        c = man_c["stages"]["generate"]["artifacts"]["generated/table.csv"]
        assert a != c

    def test_partial_manifest_on_failure(self, tmp_path):
        csv = tmp_path / "input.csv"
        write_series_csv(csv, n=70)  # too short for 20 windows of 60
        cfg = RunConfig(str(csv), str(tmp_path / "out"), length=60, instances=20,
                        method="fpc", k=3)
        with pytest.raises(StageError):
            run_pipeline(cfg)
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert man["stages"] == {}


class TestConditional:
    def test_shared_basis_flow(self, tmp_path):
        csv = tmp_path / "mv.csv"
        write_series_csv(csv, n=800, channels=2)
        cfg = small_config(
            tmp_path, input_path=str(csv), out_dir=str(tmp_path / "out_cond"),
            mode="multivariate", conditional=True, k=2, target_count=20,
        )
        man = run_pipeline(cfg)
        out = Path(cfg.out_dir)
        # prompts carry per-channel condition labels
        prompts = (out / "prompts" / "finetune.txt").read_text().splitlines()
        assert sum(p.startswith("Condition: data is ch0") for p in prompts) == 20
        assert sum(p.startswith("Condition: data is ch1") for p in prompts) == 20
        labels = json.loads((out / "generated" / "conditions.json").read_text())
        assert set(labels) == {"ch0", "ch1"}
        decoded = read_instances(out / "decoded")
        assert decoded.n_channels == 2
        assert decoded.channel_names == ("ch0", "ch1")
        assert man["stages"]["decode"]["summary"]["shape"][1] == 2


class TestCLI:
    def test_config_error_exit_2(self, tmp_path):
        r = CliRunner().invoke(main, ["segment", "--input", "x.csv",
                                      "--out", str(tmp_path), "--mode", "bogus"])
        assert r.exit_code == 2

    def test_stage_error_exit_3(self, tmp_path):
        csv = tmp_path / "input.csv"
        write_series_csv(csv)
        r = CliRunner().invoke(main, ["embed", "--input", str(csv),
                                      "--out", str(tmp_path / "out")])
        assert r.exit_code == 3

    def test_remote_error_exit_4(self, tmp_path):
        csv = tmp_path / "input.csv"
        write_series_csv(csv)
        out = str(tmp_path / "out")
        base = ["--input", str(csv), "--out", out]
        seg = base + ["--length", "60", "--instances", "20"]
        assert CliRunner().invoke(main, ["segment"] + seg).exit_code == 0
        assert CliRunner().invoke(main, ["embed"] + base + ["--method", "fpc"]).exit_code == 0
        assert CliRunner().invoke(main, ["encode"] + base).exit_code == 0
        r = CliRunner().invoke(main, ["finetune"] + base + [
            "--backend", "remote", "--remote-url", "http://127.0.0.1:9"])
        assert r.exit_code == 4

    def test_cli_full_run_and_evaluate(self, tmp_path):
        csv = tmp_path / "input.csv"
        write_series_csv(csv)
        out = str(tmp_path / "out")
        r = CliRunner().invoke(main, [
            "run", "--input", str(csv), "--out", out, "--length", "60",
            "--instances", "20", "--method", "fpc", "--k", "3",
            "--count", "15",
        ])
        assert r.exit_code == 0, r.output
        summary = json.loads(r.output.strip().splitlines()[-1])
        assert summary["generate"]["accepted"] == 15
        # standalone evaluate against the produced directories
        rep = tmp_path / "rep.json"
        r = CliRunner().invoke(main, [
            "evaluate", "--original", f"{out}/windows",
            "--generated", f"{out}/decoded", "--out", str(rep),
        ])
        assert r.exit_code == 0, r.output
        doc = json.loads(rep.read_text())
        assert set(doc["scores"]) == {"mdd", "acd", "sd", "kd", "ed", "dtw"}

    def test_cli_compare(self, tmp_path):
        for name, mult in (("m1", 1.0), ("m2", 2.0)):
            doc = {"scores": {"mdd": 0.1 * mult, "acd": 0.2 * mult,
                              "ed": 1.0 * mult, "dtw": 0.5 * mult}}
            (tmp_path / f"{name}.json").write_text(json.dumps(doc))
        out = tmp_path / "cmp.csv"
        r = CliRunner().invoke(main, [
            "compare", "--reports", str(tmp_path / "m1.json"),
            "--reports", str(tmp_path / "m2.json"), "--out", str(out),
        ])
        assert r.exit_code == 0, r.output
        assert out.read_text().startswith("model,")
