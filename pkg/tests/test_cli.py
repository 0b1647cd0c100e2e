import csv
import hashlib
import json
import os
import shutil

import pytest

from phylodelay.cli import build_parser, main, resolve
from phylodelay.manifest import read_manifest

QUICK = ["--iterations", "3000", "--burn-in", "1000", "--thin", "2", "--chains", "2"]


def _digest(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return out


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    root = tmp_path_factory.mktemp("study")
    code = main(["simulate", "--scenario", "c-like", "--replicates", "2", "--seed", "7",
                 "--target-n", "60", "--out", str(root)])
    assert code == 0
    return root


def test_simulate_layout_and_seed(study):
    reps = sorted(p for p in os.listdir(study) if p.startswith("rep_"))
    assert reps == ["rep_000", "rep_001"]
    for r in reps:
        files = set(os.listdir(study / r))
        assert {"tree.nwk", "observed.nwk", "times.csv", "truth.csv", "manifest.json"} <= files
        m = read_manifest(study / r / "manifest.json")
        assert m["config"]["seed"] == 7 and len(m["config_hash"]) == 64 and m["version"]
    top = read_manifest(study / "manifest.json")
    assert top["seed"] == 7 and top["replicates"] == 2


def test_simulate_rerun_is_byte_identical(study, tmp_path):
    main(["simulate", "--scenario", "c-like", "--replicates", "2", "--seed", "7",
          "--target-n", "60", "--out", str(tmp_path)])
    a, b = _digest(study), _digest(tmp_path)
    assert {k: v for k, v in a.items() if "fits" not in k} == b


def test_replicates_zero_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--replicates", "0", "--out", str(tmp_path)]) == 2
    assert "replicates" in capsys.readouterr().err


def test_infer_rp_offset_smoke_and_determinism(study, tmp_path):
    rep = study / "rep_000"
    before = _digest(rep)
    args = ["infer", "--model", "bnpr-ps-rp-offset", "--replicate", str(rep),
            "--delays", str(study / "delays.csv"), "--seed", "1", "--allow-unconverged"] + QUICK
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "a" / "summary.csv")))
    assert rows and all(float(r["ne_lo"]) <= float(r["ne_median"]) <= float(r["ne_hi"]) for r in rows)
    for f in ("summary.csv", "summary.json", "diagnostics.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert read_manifest(tmp_path / "a" / "manifest.json")["seed"] == 1
    assert _digest(rep) == before  # inputs untouched


def test_infer_bnpr_warns_about_delays(study, tmp_path):
    with pytest.warns(UserWarning, match="ignored"):
        code = main(["infer", "--model", "bnpr", "--replicate", str(study / "rep_001"),
                     "--delays", str(study / "delays.csv"), "--out", str(tmp_path),
                     "--allow-unconverged"] + QUICK)
    assert code == 0


def test_infer_rp_without_delays_names_flag(study, tmp_path, capsys):
    code = main(["infer", "--model", "bnpr-ps-rp-covariate", "--replicate", str(study / "rep_000"),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "--delays" in capsys.readouterr().err


def test_infer_nonconvergence_exit_code(study, tmp_path):
    code = main(["infer", "--model", "bnpr", "--replicate", str(study / "rep_000"), "--out", str(tmp_path),
                 "--iterations", "40", "--burn-in", "10", "--thin", "1", "--chains", "2"])
    assert code == 4
    assert (tmp_path / "summary.csv").exists()


def test_infer_missing_input_is_data_error(tmp_path):
    assert main(["infer", "--tree", str(tmp_path / "none.nwk"), "--times", str(tmp_path / "t.csv"),
                 "--out", str(tmp_path / "o")]) == 3


def test_evaluate_one_method(study, tmp_path):
    rep = study / "rep_001"
    fit = tmp_path / "rep_001"
    shutil.copytree(rep, fit)
    assert main(["infer", "--model", "bnpr-ps", "--replicate", str(fit), "--allow-unconverged"] + QUICK) == 0
    out = tmp_path / "eval"
    assert main(["evaluate", "--replicate", str(fit), "--out", str(out), "--periods", "0-7,7-14"]) == 0
    rows = list(csv.reader(open(out / "mrd_table.csv")))
    assert rows[0] == ["period", "BNPR PS"]
    assert [r[0] for r in rows[1:]] == ["[0,7)", "[7,14)"]
    for metric in ("mrd", "coverage", "width"):
        assert (out / f"{metric}_ma7.csv").exists()
        assert (out / f"{metric}.svg").read_text().count("<polyline") == 1
    assert read_manifest(out / "manifest.json")["config"]["methods"] == ["bnpr-ps"]


def test_evaluate_missing_truth_names_replicate(study, tmp_path, capsys):
    fit = tmp_path / "rep_x"
    shutil.copytree(study / "rep_000", fit)
    os.remove(fit / "truth.csv")
    os.makedirs(fit / "fits" / "bnpr")
    code = main(["evaluate", "--replicate", str(fit), "--methods", "bnpr", "--out", str(tmp_path / "e")])
    assert code == 3
    assert "rep_x" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('seed = 3\nthin = 4\n[infer]\niterations = 999\nburn_in = 100\n')
    args = build_parser().parse_args(["infer", "--config", str(cfg), "--iterations", "500"])
    r = resolve("infer", args)
    assert (r["seed"], r["thin"], r["iterations"], r["burn_in"], r["chains"]) == (3, 4, 500, 100, 4)
    js = tmp_path / "run.json"
    js.write_text(json.dumps({"infer": {"chains": 2}}))
    r = resolve("infer", build_parser().parse_args(["infer", "--config", str(js)]))
    assert r["chains"] == 2 and r["iterations"] == 50000


def test_delays_subcommands(study, tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["delays", "fit", "--records", str(study / "delays.csv"), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("n=2000")
    rows = list(csv.DictReader(open(out)))
    probs = [float(r["reporting_prob"]) for r in rows]
    assert probs == sorted(probs) and probs[-1] == 1.0
    assert main(["delays", "quantile", "--records", str(study / "delays.csv"), "--q", "0.9"]) == 0
    q = float(capsys.readouterr().out)
    assert 35 <= q <= 47
    assert main(["delays", "quantile", "--records", str(tmp_path / "nope.csv")]) == 3
