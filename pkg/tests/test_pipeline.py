import os

import numpy as np
import pytest

from repweight.cli import main as cli_main
from repweight.config import ConfigError, load_config, parse_method
from repweight.pipeline import (
    emit_report,
    parse_results_tsv,
    prepare_seed_data,
    results_tsv,
    run_pipeline,
)

BASE_SYNTH = """\
run:
  task: ate
  methods: [{methods}]
  seeds: [{seeds}]
  output_dir: {out}
  sigma: 0.01
data:
  synthetic:
    d: 3
    n_source: 240
    confounder_dim: 2
train:
  max_epochs: 40
  patience: 5
  batch_size: 64
  weight_decay: 0.01
"""


def write_config(tmp_path, name="cfg.yaml", methods="unweighted", seeds="0, 1", out=None, text=None):
    out = out or str(tmp_path / "out")
    path = tmp_path / name
    path.write_text(text or BASE_SYNTH.format(methods=methods, seeds=seeds, out=out), encoding="utf-8")
    return path


class TestParseMethod:
    def test_bare_and_composed(self):
        assert parse_method("unweighted") == (None, None)
        assert parse_method("energy") == (None, "energy")
        assert parse_method("ours+linear") == ("ours", "linear")
        assert parse_method("pca+gaussian") == ("pca", "gaussian")

    def test_unknown_rejected(self):
        with pytest.raises(ConfigError, match="unknown method"):
            parse_method("magic+energy")


class TestConfig:
    def test_loads_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.task == "ate"
        assert cfg.methods == ("unweighted",)
        assert cfg.seeds == (0, 1)
        assert cfg.train.max_epochs == 40
        assert cfg.solver.max_iters == 20000

    def test_unknown_key_rejected(self, tmp_path):
        text = BASE_SYNTH.format(methods="unweighted", seeds="0", out="o") + "\nbogus: 1\n"
        with pytest.raises(ConfigError, match="unknown keys"):
            load_config(write_config(tmp_path, text=text))

    def test_missing_data_section(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("run:\n  task: ate\n  methods: [unweighted]\n  seeds: [0]\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_duplicate_seeds_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="duplicates"):
            load_config(write_config(tmp_path, seeds="0, 0"))

    def test_csv_requires_columns(self, tmp_path):
        text = """\
run:
  task: att
  methods: [unweighted]
  seeds: [0]
  output_dir: out
data:
  csv: data.csv
  covariates: [x0]
"""
        with pytest.raises(ConfigError, match="treatment"):
            load_config(write_config(tmp_path, text=text))


class TestSeedData:
    def test_design_family_is_masked(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        sd = prepare_seed_data(cfg, 0)
        assert all(t.source_pseudo_y is None for t in sd.design_family)
        assert all(t.source_pseudo_y is not None for t in sd.family)

    def test_weighting_runs_on_masked_family(self, tmp_path):
        # kernel and baseline weighting never touch pseudo-outcomes
        from repweight.pipeline import compute_method_weights

        cfg = load_config(write_config(tmp_path, methods="energy, entropy, ipw"))
        sd = prepare_seed_data(cfg, 0)
        for method in ("energy", "entropy", "ipw"):
            for wv, task in zip(compute_method_weights(method, sd, None, cfg), sd.design_family):
                assert wv.w.shape == (task.n_source,)


class TestRunPipeline:
    def test_smoke_two_seeds(self, tmp_path):
        cfg = load_config(write_config(tmp_path, methods="unweighted", seeds="0, 1"))
        result = run_pipeline(cfg)
        assert result.n_failed == 0
        assert (
            open(os.path.join(result.output_dir, "results.tsv")).readline().strip().split("\t")[0]
            == "method"
        )
        table = open(os.path.join(result.output_dir, "table.txt")).read()
        assert "unweighted" in table

    def test_weight_files_simplex_valid(self, tmp_path):
        cfg = load_config(write_config(tmp_path, methods="unweighted, entropy, ours+linear"))
        result = run_pipeline(cfg)
        weights_dir = os.path.join(result.output_dir, "weights")
        files = sorted(os.listdir(weights_dir))
        assert files
        for fname in files:
            w = np.loadtxt(os.path.join(weights_dir, fname))
            assert np.all(w >= 0)
            assert abs(w.mean() - 1.0) <= 1e-6

    def test_deterministic_artifacts(self, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        cfg1 = load_config(write_config(tmp_path, name="c1.yaml", methods="unweighted, ours+linear, nn-head", out=out1))
        cfg2 = load_config(write_config(tmp_path, name="c2.yaml", methods="unweighted, ours+linear, nn-head", out=out2))
        run_pipeline(cfg1)
        run_pipeline(cfg2)
        for name in ("results.tsv", "table.txt"):
            a = open(os.path.join(out1, name), "rb").read()
            b = open(os.path.join(out2, name), "rb").read()
            assert a == b, name
        for fname in sorted(os.listdir(os.path.join(out1, "weights"))):
            a = open(os.path.join(out1, "weights", fname), "rb").read()
            b = open(os.path.join(out2, "weights", fname), "rb").read()
            assert a == b, fname

    def test_failed_cell_isolated(self, tmp_path):
        # pca with rep_dim 10 > d = 3 must fail while unweighted succeeds
        cfg = load_config(write_config(tmp_path, methods="unweighted, pca+energy", seeds="0"))
        result = run_pipeline(cfg)
        assert result.n_ok == 1 and result.n_failed == 1
        statuses = {r["method"]: r["status"] for r in result.records}
        assert statuses["unweighted"] == "ok"
        assert statuses["pca+energy"].startswith("FAIL(")
        table = open(os.path.join(result.output_dir, "table.txt")).read()
        assert "FAIL(" in table

    def test_joint_bias_present_for_synthetic(self, tmp_path):
        cfg = load_config(write_config(tmp_path, methods="unweighted", seeds="0"))
        result = run_pipeline(cfg)
        assert all(r["joint_bias"] is not None for r in result.records)

    def test_transport_synthetic(self, tmp_path):
        text = """\
run:
  task: transport
  methods: [unweighted, ipw]
  seeds: [0]
  output_dir: {out}
data:
  synthetic:
    d: 3
    n_source: 150
    n_target: 100
    confounder_dim: 1
""".format(out=str(tmp_path / "out"))
        cfg = load_config(write_config(tmp_path, text=text))
        result = run_pipeline(cfg)
        assert result.n_failed == 0

    def test_csv_att_run(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = ["x0,x1,a,y"]
        for i in range(60):
            a = i % 2
            lines.append(f"{rng.normal():.6f},{rng.normal():.6f},{a},{rng.normal():.6f}")
        csv_path = tmp_path / "data.csv"
        csv_path.write_text("\n".join(lines) + "\n")
        text = """\
run:
  task: att
  methods: [unweighted, entropy]
  seeds: [0]
  output_dir: {out}
data:
  csv: {csv}
  covariates: [x0, x1]
  treatment: a
  outcome: y
""".format(out=str(tmp_path / "out"), csv=csv_path)
        cfg = load_config(write_config(tmp_path, text=text))
        result = run_pipeline(cfg)
        assert result.n_failed == 0
        recs = [r for r in result.records if r["method"] == "unweighted"]
        assert recs[0]["tau"] is not None


class TestReport:
    def test_standard_error_hand_check(self):
        records = [
            {
                "method": "m",
                "seed": s,
                "task": 0,
                "tau": None,
                "joint_bias": float(v),
                "solver_iterations": None,
                "solver_converged": None,
                "solver_primal_residual": None,
                "solver_dual_residual": None,
                "status": "ok",
            }
            for s, v in enumerate([1.0, 2.0, 3.0])
        ]
        table = emit_report(records)
        assert "2 (0.5774)" in table

    def test_results_tsv_roundtrip(self, tmp_path):
        cfg = load_config(write_config(tmp_path, methods="unweighted", seeds="0"))
        result = run_pipeline(cfg)
        text = results_tsv(result.records)
        parsed = parse_results_tsv(text)
        assert len(parsed) == len(result.records)
        assert parsed[0]["method"] == "unweighted"
        assert parsed[0]["joint_bias"] == pytest.approx(result.records[0]["joint_bias"])


class TestCli:
    def test_validate_ok(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert cli_main(["validate", str(path)]) == 0
        assert "ok:" in capsys.readouterr().out

    def test_validate_bad_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("run:\n  task: nonsense\n")
        assert cli_main(["validate", str(path)]) == 1

    def test_run_and_report(self, tmp_path, capsys):
        path = write_config(tmp_path, methods="unweighted", seeds="0")
        assert cli_main(["run", str(path)]) == 0
        out = capsys.readouterr().out
        assert "unweighted" in out
        results = str(tmp_path / "out" / "results.tsv")
        assert cli_main(["report", results]) == 0
        assert "unweighted" in capsys.readouterr().out

    def test_report_bad_file(self, tmp_path):
        path = tmp_path / "junk.tsv"
        path.write_text("nope\n")
        assert cli_main(["report", str(path)]) == 1

    def test_all_cells_failed_exit_code(self, tmp_path):
        # rep_dim exceeds d for every (only) method: everything fails
        cfg_path = write_config(tmp_path, methods="pca+energy", seeds="0")
        assert cli_main(["run", str(cfg_path)]) == 2

    def test_output_dir_env_override(self, tmp_path, monkeypatch):
        override = tmp_path / "elsewhere"
        monkeypatch.setenv("REPWEIGHT_OUTPUT_DIR", str(override))
        cfg = load_config(write_config(tmp_path, methods="unweighted", seeds="0"))
        result = run_pipeline(cfg)
        assert result.output_dir == str(override)
        assert (override / "results.tsv").exists()
