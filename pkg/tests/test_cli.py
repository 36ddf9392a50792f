import json
import os
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahlab.cli import SCHEMA, ExperimentConfig, RunManifest, _atomic_write, main, report, run
from ahlab.metric import ConfigError


def _manifest(tmp_path, name, checks):
    d = tmp_path / name
    d.mkdir(parents=True)
    man = RunManifest("0" * 64, "0.1.0", "kernel", 0, 1.0, checks, [])
    (d / "manifest.json").write_text(man.to_json())
    return d


@settings(max_examples=40)
@given(st.sampled_from(["flow", "distance", "kernel", "radiation"]), st.integers(0, 2**31),
       st.sampled_from([{"n": 2}, {"n": 1, "model": "perturbed_collar"}]),
       st.dictionaries(st.sampled_from(["h", "pairs", "t_end"]), st.floats(0.01, 0.5), max_size=3))
def test_config_round_trip(kind, seed, metric, params):
    cfg = ExperimentConfig(kind, metric, params, "out", seed)
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_digest_ignores_output_directory():
    a = ExperimentConfig("kernel", out="a")
    b = ExperimentConfig("kernel", out="b")
    assert a.digest() == b.digest()
    assert a.digest() != ExperimentConfig("kernel", seed=1).digest()


@pytest.mark.parametrize("doc, field", [
    ({"kind": "bogus"}, "kind"),
    ({"metric": {"n": 2}}, "kind"),
    ({"kind": "flow", "schema": "other/9"}, "schema"),
    ({"kind": "flow", "seed": -1}, "seed"),
    ({"kind": "flow", "colour": "red"}, "colour"),
    ({"kind": "flow", "metric": {"n": 4}}, "metric.n"),
])
def test_invalid_config_names_the_field(doc, field):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_json(json.dumps(doc))
    assert info.value.path == field


def test_invalid_json():
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.from_json("{kind: flow")


def test_schema_version_recorded():
    assert json.loads(ExperimentConfig("flow").to_json())["schema"] == SCHEMA


def test_identical_runs_identical_manifests(tmp_path):
    mans = []
    for k in range(2):
        cfg = ExperimentConfig("distance", params={"pairs": 5}, out=str(tmp_path / f"r{k}"), seed=7)
        mans.append(run(cfg, deterministic_clock=True).to_json())
    assert mans[0] == mans[1]
    for name in ("distance.csv", "distance.json"):
        assert (tmp_path / "r0" / name).read_bytes() == (tmp_path / "r1" / name).read_bytes()


def test_flow_outputs(tmp_path):
    out = tmp_path / "flow"
    assert main(["flow", "--t-end", "3", "--out", str(out)]) == 0
    header = (out / "flow.csv").read_text().splitlines()[0]
    assert header.startswith("t,chart,z_ball_0") and header.endswith("p,det_perp")
    man = json.loads((out / "manifest.json").read_text())
    assert man["kind"] == "flow" and man["version"] == "0.1.0" and len(man["config_hash"]) == 64
    cfg = ExperimentConfig.from_json((out / "config.json").read_text())
    assert cfg.params["t_end"] == 3.0


def test_config_file_and_flag_override(tmp_path):
    cfg = ExperimentConfig("kernel", {"n": 2}, {"pairs": 3, "h": 0.1}, str(tmp_path / "a"), 0)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert main(["kernel", "--config", str(path), "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    used = ExperimentConfig.from_json((tmp_path / "b" / "config.json").read_text())
    assert used.seed == 3 and used.params["pairs"] == 3
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["checks"][0]["passed"]


def test_config_kind_must_match_subcommand(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(ExperimentConfig("kernel").to_json())
    assert main(["flow", "--config", str(path)]) == 2
    assert "kind" in capsys.readouterr().err


def test_exit_code_two_on_bad_metric(tmp_path, capsys):
    assert main(["distance", "--metric", '{"n": 5}', "--out", str(tmp_path)]) == 2
    assert "metric.n" in capsys.readouterr().err


def test_exit_code_two_on_domain_violation(tmp_path):
    assert main(["eisenstein", "--b", "0.5", "--out", str(tmp_path)]) == 2


def test_global_options_before_subcommand(tmp_path):
    metric = json.dumps({"n": 1, "model": "perturbed_collar"})
    out = tmp_path / "d"
    assert main(["--metric", metric, "--seed", "9", "--out", str(out), "distance", "--pairs", "3"]) == 0
    used = json.loads((out / "config.json").read_text())
    assert used["metric"]["n"] == 1
    assert used["seed"] == 9


def test_profile_error_names_the_field(tmp_path, capsys):
    assert main(["radiation", "--f1", "offcentre", "--out", str(tmp_path)]) == 2
    assert "params.f1" in capsys.readouterr().err


def test_metric_from_file(tmp_path):
    mpath = tmp_path / "metric.json"
    mpath.write_text(json.dumps({"n": 1, "model": "perturbed_collar"}))
    assert main(["distance", "--pairs", "3", "--metric", str(mpath), "--out", str(tmp_path / "d")]) == 0
    used = json.loads((tmp_path / "d" / "config.json").read_text())
    assert used["metric"]["model"] == "perturbed_collar"


def test_acceptance_subset(tmp_path, capsys):
    code = main(["acceptance-suite", "--only", "2,12", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "[PASS]  2" in out and "[PASS] 12" in out
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert [c["id"] for c in man["checks"]] == [2, 12]


def test_report_empty_directory(tmp_path):
    summary = report(tmp_path, plots=False)
    assert summary["checks"] == 0 and summary["warnings"]
    assert (tmp_path / "summary.txt").exists()


def test_report_names_failing_check(tmp_path, capsys):
    ok = {"id": 1, "name": "alpha", "passed": True, "measured": {"v": 1.0}, "tolerance": {}}
    bad = {"id": 2, "name": "beta", "passed": False, "measured": {"v": 3.0}, "tolerance": {}}
    _manifest(tmp_path, "one", [ok])
    _manifest(tmp_path, "two", [bad])
    assert main(["report", str(tmp_path), "--no-plots"]) == 1
    text = capsys.readouterr().out
    assert "FAIL  two  beta" in text
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["failing"] == ["two:beta"]


def test_report_renders_bands(tmp_path):
    chk = {"id": 10, "name": "decay", "passed": True,
           "measured": {"epsilon": 0.59, "epsilon_band": [0.58, 0.61]}, "tolerance": {}}
    _manifest(tmp_path, "d", [chk])
    text = report(tmp_path, plots=False)["text"]
    assert "epsilon=0.59 [0.58, 0.61]" in text


def test_report_plots(tmp_path):
    assert main(["flow", "--t-end", "2", "--out", str(tmp_path / "f")]) == 0
    assert report(tmp_path, plots=False).get("plots") is None
    assert not (tmp_path / "f" / "flow.png").exists()
    made = report(tmp_path, plots=True)["plots"]
    assert made == [os.path.join("f", "flow.png")]
    assert (tmp_path / "f" / "flow.png").read_bytes()[:4] == b"\x89PNG"


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "x" / "file.txt"
    _atomic_write(target, "one")
    _atomic_write(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["file.txt"]


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "ahlab", "flow", "--config", str(tmp_path / "missing.json")],
                         capture_output=True, text=True)
    assert res.returncode == 2
    assert "config" in res.stderr
